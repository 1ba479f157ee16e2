"""Single-file model container with exact per-section storage accounting.

Layout (little-endian, no padding)::

    magic          5 bytes   b"CTAV1"
    n_sections     uint32
    section table  n_sections x (name: 16 bytes NUL padded, offset: uint64, length: uint64)
    section data   concatenated in table order

Sections: ``meta`` (UTF-8 JSON: configs, rig reference, tensor directory),
``splats``, ``triplane``, ``lines``, ``color_decoder``, ``opacity_decoder``.
Tensor payloads are raw C-order arrays; the ``meta`` directory records each
tensor's section, byte offset inside it, shape and dtype.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..avatar import SplatSet
from ..blendmix import FeatureLineBank
from ..config import ModelConfig
from ..decoder import MlpParams
from ..errors import CorruptFile, IoFailure, VersionMismatch
from ..fields import Triplane
from ..model import AvatarModel
from ..synthrig.rig import RigConfig, build_rig

MAGIC = b"CTAV1"
FORMAT_VERSION = 1
_COUNT = struct.Struct("<I")
_ENTRY = struct.Struct("<16sQQ")
SECTIONS = ("meta", "splats", "triplane", "lines", "color_decoder", "opacity_decoder")
GRID_SECTIONS = ("triplane", "lines")
MIB = float(2 ** 20)


def header_size(n_sections: int) -> int:
    return len(MAGIC) + _COUNT.size + n_sections * _ENTRY.size


@dataclass(frozen=True)
class StorageReport:
    sections: dict  # section name -> bytes

    @property
    def total(self) -> int:
        return int(sum(self.sections.values()))

    @property
    def triplane_with_decoder(self) -> int:
        return self.sections["triplane"] + self.sections["color_decoder"]

    @property
    def lines_with_decoder(self) -> int:
        return self.sections["lines"] + self.sections["opacity_decoder"]

    def table(self) -> str:
        rows = [("component", "bytes", "MiB")]
        for name, n in self.sections.items():
            rows.append((name, str(n), f"{n / MIB:.3f}"))
        rows.append(("triplane+decoder", str(self.triplane_with_decoder), f"{self.triplane_with_decoder / MIB:.3f}"))
        rows.append(("lines+decoder", str(self.lines_with_decoder), f"{self.lines_with_decoder / MIB:.3f}"))
        rows.append(("total", str(self.total), f"{self.total / MIB:.3f}"))
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        return "\n".join(f"{a:<{w0}}  {b:>{w1}}  {c:>8}" for a, b, c in rows)


def _model_tensors(model: AvatarModel) -> dict:
    """Section -> list of (name, array) in storage order."""
    sp = model.splats
    return {
        "splats": [("mu_local", sp.mu_local), ("quat_local", sp.quat_local), ("log_scale", sp.log_scale),
                   ("opacity_logit", sp.opacity_logit), ("face_id", sp.face_id.astype(np.int64))],
        "triplane": [("xy", model.triplane.xy), ("xz", model.triplane.xz), ("yz", model.triplane.yz)],
        "lines": [("expr", model.lines.expr), ("jaw", model.lines.jaw)],
        "color_decoder": list(model.color.tensors().items()),
        "opacity_decoder": list(model.opacity.tensors().items()),
    }


def _storage_dtype(section: str, arr: np.ndarray, precision: str) -> np.dtype:
    if arr.dtype.kind != "f":
        return np.dtype("<i8")
    if precision == "fp16" and section in GRID_SECTIONS:
        return np.dtype("<f2")
    return np.dtype("<f4")


def encode(model: AvatarModel, precision: str = "fp32") -> tuple[bytes, StorageReport]:
    """Serialize ``model`` to container bytes."""
    if precision not in ("fp32", "fp16"):
        raise ValueError("precision must be 'fp32' or 'fp16'")
    model.validate()
    payloads, directory = {}, []
    for section, tensors in _model_tensors(model).items():
        chunks, off = [], 0
        for name, arr in tensors:
            dt = _storage_dtype(section, arr, precision)
            raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
            directory.append({"section": section, "name": name, "offset": off, "shape": list(arr.shape),
                              "dtype": dt.str})
            chunks.append(raw)
            off += len(raw)
        payloads[section] = b"".join(chunks)
    meta = {
        "format_version": FORMAT_VERSION,
        "precision": precision,
        "model_config": dataclasses.asdict(model.config),
        "rig": model.rig.reference(),
        "triplane_bbox": [model.triplane.bbox_min.tolist(), model.triplane.bbox_max.tolist()],
        "lines_bbox": [model.lines.bbox_min.tolist(), model.lines.bbox_max.tolist()],
        "jaw_quats": model.lines.jaw_quats.tolist(),
        "heads": {"color": model.color.head, "opacity": model.opacity.head},
        "layers": {"color": len(model.color.weights), "opacity": len(model.opacity.weights)},
        "tensors": directory,
    }
    payloads = {"meta": json.dumps(meta, sort_keys=True).encode()} | payloads
    names = list(SECTIONS)
    head = bytearray(MAGIC + _COUNT.pack(len(names)))
    offset = header_size(len(names))
    for name in names:
        head += _ENTRY.pack(name.encode().ljust(16, b"\0"), offset, len(payloads[name]))
        offset += len(payloads[name])
    blob = bytes(head) + b"".join(payloads[n] for n in names)
    return blob, StorageReport({n: len(payloads[n]) for n in names})


def save(model: AvatarModel, path, precision: str = "fp32") -> StorageReport:
    blob, report = encode(model, precision)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return report


def read_sections(blob: bytes) -> dict:
    """Section name -> bytes, checking magic and bounds."""
    if len(blob) < len(MAGIC):
        raise CorruptFile("file shorter than the magic number")
    if blob[:len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"unknown container magic {blob[:len(MAGIC)]!r}")
    if len(blob) < len(MAGIC) + _COUNT.size:
        raise CorruptFile("truncated section count")
    (n,) = _COUNT.unpack_from(blob, len(MAGIC))
    if len(blob) < header_size(n):
        raise CorruptFile("truncated section table")
    out = {}
    for i in range(n):
        raw, off, length = _ENTRY.unpack_from(blob, len(MAGIC) + _COUNT.size + i * _ENTRY.size)
        if off + length > len(blob):
            raise CorruptFile(f"section {i} runs past the end of the file")
        out[raw.rstrip(b"\0").decode()] = blob[off:off + length]
    return out


def storage_report(path) -> StorageReport:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return StorageReport({k: len(v) for k, v in read_sections(blob).items()})


def decode(blob: bytes) -> AvatarModel:
    sections = read_sections(blob)
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise CorruptFile(f"missing sections: {missing}")
    try:
        meta = json.loads(sections["meta"].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable meta section: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"container version {meta.get('format_version')} is not supported")
    arrays = {}
    try:
        for t in meta["tensors"]:
            dt = np.dtype(t["dtype"])
            count = int(np.prod(t["shape"], dtype=np.int64))
            data = sections[t["section"]]
            end = t["offset"] + count * dt.itemsize
            if end > len(data):
                raise CorruptFile(f"tensor {t['section']}.{t['name']} overruns its section")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=t["offset"]).reshape(t["shape"])
            arr = arr.astype(np.int64) if dt.kind == "i" else arr.astype(np.float32)
            arrays[(t["section"], t["name"])] = arr
        cfg_dict = dict(meta["model_config"], dtype="float32")
        cfg = ModelConfig(**cfg_dict)
        rig_ref = dict(meta["rig"])
        seed = rig_ref.pop("seed")
        rig = build_rig(RigConfig(**rig_ref), seed)

        def get(section, name):
            return arrays[(section, name)]

        splats = SplatSet(get("splats", "mu_local"), get("splats", "quat_local"), get("splats", "log_scale"),
                          get("splats", "opacity_logit"), get("splats", "face_id"))
        tb = meta["triplane_bbox"]
        triplane = Triplane(get("triplane", "xy"), get("triplane", "xz"), get("triplane", "yz"), tb[0], tb[1])
        lb = meta["lines_bbox"]
        lines = FeatureLineBank(get("lines", "expr"), get("lines", "jaw"), np.array(meta["jaw_quats"]), lb[0], lb[1])

        def mlp(section, key):
            n = meta["layers"][key]
            return MlpParams([get(section, f"W{i}") for i in range(n)], [get(section, f"b{i}") for i in range(n)],
                             meta["heads"][key])

        return AvatarModel(splats, triplane, lines, mlp("color_decoder", "color"),
                           mlp("opacity_decoder", "opacity"), rig, cfg)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (CorruptFile, VersionMismatch)):
            raise
        raise CorruptFile(f"inconsistent container: {exc}") from exc


def load(path) -> AvatarModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode(blob)
