"""Tour the binary container: header anatomy, round trips, and diagnostics.

Saves a dataset, dissects its header bytes, round-trips anchors and a
checkpoint bit-exactly, and shows the errors raised for a corrupted file.
"""

import json
import struct
import tempfile
from pathlib import Path

import numpy as np

from motionctx import (FormatError, NetConfig, SynthConfig, anchor_corpus, init_params,
                       load_anchors, load_checkpoint, load_dataset, make_dataset,
                       save_anchors, save_checkpoint, save_dataset, sps_sample)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        clips = make_dataset(SynthConfig(clips=4, frames=4, joints=5,
                                         native_pose_joints=4, clusters=2, seed=1))
        data_path = root / "clips.bin"
        save_dataset(str(data_path), clips)

        raw = data_path.read_bytes()
        magic, version, manifest_len = struct.unpack_from("<4sHI", raw)
        print(f"{data_path.name}: {len(raw)} bytes")
        print(f"  magic {magic!r}  version {version}  manifest {manifest_len} bytes")
        manifest = json.loads(raw[10:10 + manifest_len])
        print(f"  manifest keys: {sorted(manifest)}")
        print(f"  kind {manifest['kind']!r}, {manifest['clips']} clips, "
              f"payload {len(raw) - 10 - manifest_len} bytes of little-endian f32")

        reloaded = load_dataset(str(data_path))
        resaved = root / "clips2.bin"
        save_dataset(str(resaved), reloaded)
        print(f"  save(load(file)) is byte-identical: {resaved.read_bytes() == raw}")

        anchors = sps_sample(anchor_corpus(clips, domains=("pe",), seed=0), 3,
                             hidden_dim=8)
        anchor_path = root / "anchors.bin"
        save_anchors(str(anchor_path), anchors, meta={"domains": ["pe"], "corpus_seed": 0})
        loaded, meta = load_anchors(str(anchor_path))
        same = (np.array_equal(loaded.soft_w1, anchors.soft_w1)
                and np.array_equal(loaded.soft_w2, anchors.soft_w2))
        print(f"{anchor_path.name}: {len(loaded.anchors)} anchors, meta {meta}, "
              f"soft factors bit-exact: {same}")

        params = init_params(NetConfig(frames=4, joints=5, hidden=8, layers=1), 0,
                             anchors=anchors)
        ck_path = root / "model.bin"
        save_checkpoint(str(ck_path), params, meta={"steps": 0})
        restored, _ = load_checkpoint(str(ck_path))
        exact = all(np.array_equal(restored.tensors[k].array, v.array)
                    for k, v in params.tensors.items())
        print(f"{ck_path.name}: {params.count()} values, round trip bit-exact: {exact}")

        print("\ncorruption diagnostics:")
        for label, mutate in (("magic", lambda b: b"WRNG" + b[4:]),
                              ("version", lambda b: b[:4] + struct.pack("<H", 9) + b[6:]),
                              ("truncation", lambda b: b[:-8])):
            bad = root / "bad.bin"
            bad.write_bytes(mutate(raw))
            try:
                load_dataset(str(bad))
            except FormatError as err:
                print(f"  {label:>10}: {err}")


if __name__ == "__main__":
    main()
