"""Container format: round trips, payload arithmetic, corruption diagnostics."""

import json
import os
import struct

import numpy as np
import pytest

from motionctx.errors import ConfigError, DimensionError, FormatError
from motionctx.fileio import (load_anchors, load_checkpoint, load_config, load_dataset,
                              read_file, save_anchors, save_checkpoint, save_dataset,
                              write_file)
from motionctx.network import NetConfig, init_params
from motionctx.prompting import retrieve_prompt, sps_sample
from motionctx.synth import SynthConfig, make_dataset
from motionctx.training import anchor_corpus


def small_dataset(clips=4, frames=4, joints=5, seed=0):
    return make_dataset(SynthConfig(clips=clips, frames=frames, joints=joints,
                                    native_pose_joints=4, clusters=2, seed=seed))


def test_dataset_round_trip_and_file_stability(tmp_path):
    clips = small_dataset()
    p1, p2, p3 = (str(tmp_path / n) for n in ("a.bin", "b.bin", "c.bin"))
    save_dataset(p1, clips)
    loaded = load_dataset(p1)
    assert len(loaded) == len(clips)
    for orig, back in zip(clips, loaded):
        assert back.clip_id == orig.clip_id
        assert back.source == orig.source
        # storage is 32-bit: loading gives the quantized values
        assert np.array_equal(back.pose3d.values.array,
                              orig.pose3d.values.array.astype(np.float32).astype(np.float64))
        assert back.pose3d.native_joint_count == orig.pose3d.native_joint_count
        assert back.mesh.native_joint_count == orig.mesh.native_joint_count
        assert np.array_equal(back.mesh.betas,
                              orig.mesh.betas.astype(np.float32).astype(np.float64))
    # the file round-trips bit-exactly once values are quantized
    save_dataset(p2, loaded)
    save_dataset(p3, load_dataset(p2))
    assert open(p2, "rb").read() == open(p3, "rb").read()


def test_same_content_writes_identical_bytes(tmp_path):
    clips = small_dataset(seed=7)
    p1, p2 = str(tmp_path / "x.bin"), str(tmp_path / "y.bin")
    save_dataset(p1, clips)
    save_dataset(p2, clips)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_dataset_payload_size_arithmetic(tmp_path):
    clips = make_dataset(SynthConfig(clips=64, frames=16, joints=24,
                                     native_pose_joints=17, clusters=4, seed=1))
    path = str(tmp_path / "big.bin")
    save_dataset(path, clips)
    _, payload, _ = read_file(path)
    assert len(payload) == 64 * 3 * (32 * 24 * 3) * 4 + 64 * 10 * 4


def test_save_empty_or_ragged_dataset_rejected(tmp_path):
    with pytest.raises(DimensionError):
        save_dataset(str(tmp_path / "e.bin"), [])
    mixed = small_dataset(clips=2) + small_dataset(clips=2, frames=3)[:1]
    with pytest.raises(DimensionError):
        save_dataset(str(tmp_path / "m.bin"), mixed)


def build_anchors(hidden=8, k=4):
    clips = small_dataset()
    corpus = anchor_corpus(clips, domains=("pe", "mp_m"), seed=0)
    return sps_sample(corpus, k, hidden_dim=hidden)


def test_anchor_round_trip(tmp_path):
    anchors = build_anchors()
    p1, p2 = str(tmp_path / "a1.bin"), str(tmp_path / "a2.bin")
    save_anchors(p1, anchors, meta={"domains": ["pe", "mp_m"], "corpus_seed": 0})
    loaded, meta = load_anchors(p1)
    assert meta == {"domains": ["pe", "mp_m"], "corpus_seed": 0}
    assert len(loaded) == len(anchors)
    assert loaded.k_requested == anchors.k_requested
    assert loaded.method == anchors.method
    assert loaded.tie_break == anchors.tie_break
    assert loaded.fingerprint == anchors.fingerprint
    assert loaded.selection_trace == anchors.selection_trace
    # soft factors are stored at full precision
    assert np.array_equal(loaded.soft_w1, anchors.soft_w1)
    assert np.array_equal(loaded.soft_w2, anchors.soft_w2)
    for la, oa in zip(loaded.anchors, anchors.anchors):
        assert la.domain == oa.domain
        assert la.source_index == oa.source_index
        assert la.input.modality is oa.input.modality
        assert la.target.native_joint_count == oa.target.native_joint_count
        assert np.array_equal(la.target.betas,
                              oa.target.betas.astype(np.float32).astype(np.float64))
    save_anchors(p2, loaded, meta=meta)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_reloaded_anchors_self_retrieve(tmp_path):
    path = str(tmp_path / "a.bin")
    save_anchors(path, build_anchors())
    loaded, _ = load_anchors(path)
    for i, anchor in enumerate(loaded.anchors):
        assert retrieve_prompt(anchor.input, loaded).index == i


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    cfg = NetConfig(frames=4, joints=5, hidden=8, layers=2)
    params = init_params(cfg, rng_seed=3)
    path = str(tmp_path / "ck.bin")
    save_checkpoint(path, params, meta={"note": "unit", "steps": 12})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "unit", "steps": 12}
    assert loaded.config == cfg
    assert set(loaded.tensors) == set(params.tensors)
    for name, buf in params.tensors.items():
        assert np.array_equal(loaded.tensors[name].array, buf.array), name


def test_corrupted_magic_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    save_dataset(path, small_dataset(clips=2))
    raw = bytearray(open(path, "rb").read())
    raw[0:4] = b"XXXX"
    open(path, "wb").write(bytes(raw))
    with pytest.raises(FormatError, match="HICM"):
        read_file(path)


def test_corrupted_version_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    save_dataset(path, small_dataset(clips=2))
    raw = bytearray(open(path, "rb").read())
    raw[4:6] = struct.pack("<H", 9)
    open(path, "wb").write(bytes(raw))
    with pytest.raises(FormatError, match=r"version 9.*expected 1"):
        read_file(path)


def test_truncated_payload_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    save_dataset(path, small_dataset(clips=2))
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-5])
    with pytest.raises(FormatError, match="expected exactly"):
        load_dataset(path)


def test_overlong_manifest_length_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    open(path, "wb").write(struct.pack("<4sHI", b"HICM", 1, 10_000) + b"{}")
    with pytest.raises(FormatError, match="overruns"):
        read_file(path)


def test_garbage_manifest_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    blob = b"not json at all"
    open(path, "wb").write(struct.pack("<4sHI", b"HICM", 1, len(blob)) + blob)
    with pytest.raises(FormatError, match="not valid JSON"):
        read_file(path)
    listing = json.dumps([1, 2]).encode()
    open(path, "wb").write(struct.pack("<4sHI", b"HICM", 1, len(listing)) + listing)
    with pytest.raises(FormatError, match="JSON object"):
        read_file(path)


def test_kind_mismatch_rejected(tmp_path):
    path = str(tmp_path / "d.bin")
    save_dataset(path, small_dataset(clips=2))
    with pytest.raises(FormatError, match="anchors"):
        load_anchors(path)
    with pytest.raises(FormatError, match="checkpoint"):
        load_checkpoint(path)


def test_write_leaves_no_temp_files(tmp_path):
    path = str(tmp_path / "d.bin")
    write_file(path, {"kind": "dataset"}, b"xyz")
    assert os.listdir(tmp_path) == ["d.bin"]


def test_load_config(tmp_path):
    path = str(tmp_path / "c.json")
    open(path, "w").write(json.dumps({"epochs": 3, "learning_rate": 1e-3,
                                      "domains": ["pe", "mr"]}))
    assert load_config(path) == {"epochs": 3, "learning_rate": 1e-3, "domains": ["pe", "mr"]}
    open(path, "w").write(json.dumps({"outer": {"inner": 1}}))
    with pytest.raises(ConfigError, match="outer"):
        load_config(path)
    open(path, "w").write(json.dumps([1, 2, 3]))
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(path)
    open(path, "w").write("{broken")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(path)
