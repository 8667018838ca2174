"""Binary persistence for datasets, anchor sets, and checkpoints.

Every file starts with the magic bytes "HICM", a little-endian u16 format
version, and a little-endian u32 manifest length, followed by a canonical
JSON manifest (sorted keys, no whitespace) and a raw payload. Motion data is
stored as little-endian 32-bit floats; soft-anchor factors and checkpoint
tensors as 64-bit floats. Writes go to a temporary file in the target
directory and are renamed into place, so a crash never leaves a truncated
file under the final name. Payload lengths are validated against the
manifest before any array is interpreted.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericError
from .motion import SHAPE_PARAMS, Modality, MotionClip, MotionSequence
from .nd import NdBuffer
from .network import NetConfig, XFusionParams
from .prompting import Anchor, AnchorSet

MAGIC = b"HICM"
VERSION = 1
_HEADER = struct.Struct("<4sHI")  # magic, version, manifest byte length


def _canonical_manifest(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_file(path: str, manifest: dict, payload: bytes) -> None:
    """Atomic header + manifest + payload write (temp file, then rename)."""
    blob = _canonical_manifest(manifest)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
            f.write(blob)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_file(path: str) -> tuple[dict, bytes, int]:
    """Parse and validate the container; returns (manifest, payload, payload offset)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"file is {len(raw)} bytes, too short for the {_HEADER.size}-byte header")
    magic, version, manifest_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version} at byte 4, expected {VERSION}")
    offset = _HEADER.size + manifest_len
    if offset > len(raw):
        raise FormatError(f"manifest length {manifest_len} at byte 6 overruns the "
                          f"{len(raw)}-byte file")
    try:
        manifest = json.loads(raw[_HEADER.size:offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest at byte {_HEADER.size} is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise FormatError(f"manifest at byte {_HEADER.size} must be a JSON object, "
                          f"got {type(manifest).__name__}")
    return manifest, raw[offset:], offset


def _expect_kind(manifest: dict, kind: str) -> None:
    found = manifest.get("kind")
    if found != kind:
        raise FormatError(f"expected a {kind!r} file, manifest says kind={found!r}")


def _check_payload(payload: bytes, expected: int, offset: int) -> None:
    if len(payload) != expected:
        raise FormatError(f"payload at byte {offset} is {len(payload)} bytes, "
                          f"expected exactly {expected}")


def _f32_bytes(arr: np.ndarray) -> bytes:
    with np.errstate(over="ignore"):
        out = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(out)):
        raise NumericError("values overflow 32-bit storage; refusing to write a "
                           "non-finite payload")
    return out.tobytes()


def _f64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Cursor:
    """Sequential typed reads from a payload, tracking absolute byte offsets."""

    def __init__(self, payload: bytes, base: int):
        self.payload = payload
        self.base = base
        self.pos = 0

    def take(self, shape: tuple[int, ...], dtype: str) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        width = np.dtype(dtype).itemsize
        end = self.pos + count * width
        if end > len(self.payload):
            raise FormatError(f"payload block at byte {self.base + self.pos} needs "
                              f"{count * width} bytes, only {len(self.payload) - self.pos} left")
        arr = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.pos)
        self.pos = end
        return arr.astype(np.float64).reshape(shape)


_MODALITY_FIELDS = ("pose2d", "pose3d", "mesh")


def save_dataset(path: str, clips: list[MotionClip]) -> None:
    """All three modality blocks per clip as 32-bit floats, then a beta block."""
    if not clips:
        raise DimensionError("cannot save an empty dataset")
    half, joints = clips[0].window, clips[0].joints
    meta = []
    chunks = []
    for clip in clips:
        if clip.window != half or clip.joints != joints:
            raise DimensionError(f"clip {clip.clip_id!r} has window {clip.window} and "
                                 f"{clip.joints} joints, dataset uses {half} and {joints}")
        native = {}
        for field in _MODALITY_FIELDS:
            seq: MotionSequence = getattr(clip, field)
            native[field] = seq.native_joint_count
            chunks.append(_f32_bytes(seq.values.array))
        meta.append({"id": clip.clip_id, "source": clip.source, "native": native,
                     "modalities": list(_MODALITY_FIELDS)})
    chunks.append(_f32_bytes(np.stack([c.mesh.betas for c in clips])))
    manifest = {"kind": "dataset", "frames": half, "joints": joints, "channels": 3,
                "clips": len(clips), "root_joint": 0, "shape_params": SHAPE_PARAMS,
                "clip_meta": meta}
    write_file(path, manifest, b"".join(chunks))


def load_dataset(path: str) -> list[MotionClip]:
    manifest, payload, offset = read_file(path)
    _expect_kind(manifest, "dataset")
    half, joints, n = manifest["frames"], manifest["joints"], manifest["clips"]
    meta = manifest["clip_meta"]
    if len(meta) != n:
        raise FormatError(f"manifest lists {len(meta)} clip entries, clips={n}")
    block = 2 * half * joints * 3
    _check_payload(payload, (n * 3 * block + n * SHAPE_PARAMS) * 4, offset)
    cursor = _Cursor(payload, offset)
    raw = [{field: cursor.take((2 * half, joints, 3), "<f4") for field in _MODALITY_FIELDS}
           for _ in range(n)]
    betas = cursor.take((n, SHAPE_PARAMS), "<f4")
    clips = []
    for i, entry in enumerate(meta):
        native = entry["native"]
        clips.append(MotionClip(
            MotionSequence(NdBuffer(raw[i]["pose2d"]), Modality.POSE2D, native["pose2d"]),
            MotionSequence(NdBuffer(raw[i]["pose3d"]), Modality.POSE3D, native["pose3d"]),
            MotionSequence(NdBuffer(raw[i]["mesh"]), Modality.MESH, native["mesh"],
                           betas=betas[i]),
            clip_id=entry["id"], source=entry["source"]))
    return clips


def _sequence_meta(seq: MotionSequence) -> dict:
    return {"modality": seq.modality.value, "native": seq.native_joint_count}


def _load_sequence(values: np.ndarray, meta: dict, betas: np.ndarray) -> MotionSequence:
    return MotionSequence(NdBuffer(values), Modality(meta["modality"]), meta["native"],
                          betas=betas)


def save_anchors(path: str, anchors: AnchorSet, meta: dict | None = None) -> None:
    """Hard anchors as 32-bit floats, soft factor pairs as 64-bit floats."""
    a, f, j, h = len(anchors), anchors.frames, anchors.joints, anchors.hidden
    manifest = {
        "kind": "anchors", "frames": f, "joints": j, "hidden": h, "count": a,
        "k_requested": anchors.k_requested, "method": anchors.method,
        "tie_break": anchors.tie_break, "fingerprint": anchors.fingerprint,
        "selection_trace": list(anchors.selection_trace),
        "anchors": [{"domain": x.domain, "source_index": x.source_index,
                     "input": _sequence_meta(x.input), "target": _sequence_meta(x.target)}
                    for x in anchors.anchors],
        "meta": meta or {},
    }
    chunks = [
        _f32_bytes(np.stack([x.input.values.array for x in anchors.anchors])),
        _f32_bytes(np.stack([x.target.values.array for x in anchors.anchors])),
        _f32_bytes(np.stack([x.input.betas for x in anchors.anchors])),
        _f32_bytes(np.stack([x.target.betas for x in anchors.anchors])),
        _f64_bytes(anchors.soft_w1),
        _f64_bytes(anchors.soft_w2),
    ]
    write_file(path, manifest, b"".join(chunks))


def load_anchors(path: str) -> tuple[AnchorSet, dict]:
    manifest, payload, offset = read_file(path)
    _expect_kind(manifest, "anchors")
    a, f, j, h = (manifest[k] for k in ("count", "frames", "joints", "hidden"))
    meta = manifest["anchors"]
    if len(meta) != a:
        raise FormatError(f"manifest lists {len(meta)} anchor entries, count={a}")
    seq = f * j * 3
    expected = (2 * a * seq + 2 * a * SHAPE_PARAMS) * 4 + (a * f * j + a * h) * 8
    _check_payload(payload, expected, offset)
    cursor = _Cursor(payload, offset)
    inputs = cursor.take((a, f, j, 3), "<f4")
    targets = cursor.take((a, f, j, 3), "<f4")
    input_betas = cursor.take((a, SHAPE_PARAMS), "<f4")
    target_betas = cursor.take((a, SHAPE_PARAMS), "<f4")
    w1 = cursor.take((a, f, j, 1), "<f8")
    w2 = cursor.take((a, 1, 1, h), "<f8")
    hard = tuple(
        Anchor(_load_sequence(inputs[i], m["input"], input_betas[i]),
               _load_sequence(targets[i], m["target"], target_betas[i]),
               m["domain"], m["source_index"])
        for i, m in enumerate(meta))
    loaded = AnchorSet(anchors=hard, k_requested=manifest["k_requested"], soft_w1=w1, soft_w2=w2,
                       tie_break=manifest["tie_break"], fingerprint=manifest["fingerprint"],
                       method=manifest["method"],
                       selection_trace=tuple(manifest["selection_trace"]))
    return loaded, manifest["meta"]


def save_checkpoint(path: str, params: XFusionParams, meta: dict | None = None) -> None:
    """All tensors as 64-bit floats in sorted name order."""
    cfg = params.config
    names = sorted(params.tensors)
    manifest = {
        "kind": "checkpoint",
        "config": {"frames": cfg.frames, "joints": cfg.joints, "hidden": cfg.hidden,
                   "layers": cfg.layers, "shape_params": cfg.shape_params,
                   "view_order": list(cfg.view_order)},
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)} for n in names],
        "meta": meta or {},
    }
    payload = b"".join(_f64_bytes(params.tensors[n].array) for n in names)
    write_file(path, manifest, payload)


def load_checkpoint(path: str) -> tuple[XFusionParams, dict]:
    manifest, payload, offset = read_file(path)
    _expect_kind(manifest, "checkpoint")
    c = manifest["config"]
    cfg = NetConfig(frames=c["frames"], joints=c["joints"], hidden=c["hidden"],
                    layers=c["layers"], shape_params=c["shape_params"],
                    view_order=tuple(c["view_order"]))
    entries = manifest["tensors"]
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
                   for e in entries) * 8
    _check_payload(payload, expected, offset)
    cursor = _Cursor(payload, offset)
    tensors = {e["name"]: NdBuffer(cursor.take(tuple(e["shape"]), "<f8")) for e in entries}
    return XFusionParams(cfg, tensors), manifest["meta"]


def load_config(path: str) -> dict:
    """Flat JSON key/value config; nested objects are rejected by key name."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object, "
                          f"got {type(data).__name__}")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r} is nested; the key space is flat")
    return data
