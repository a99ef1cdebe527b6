"""Dataset abstraction: manifest JSON, GLVF feature files, segment pooling.

The manifest indexes takes (one recorded activity each), their ego and exo
views, the keystep segments and the feature files holding frame-level
features. Feature files are little-endian::

    b"GLVF" | version u32 (=1) | rows u32 | cols u32 | rows*cols float32

with no padding and no footer.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import (
    BadMagic,
    LabelOutOfRange,
    MissingFile,
    NonFiniteValue,
    SchemaViolation,
    TruncatedFile,
    UnsortedSegments,
)

FEATURE_MAGIC = b"GLVF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class SegmentAnnotation:
    segment_index: int
    start_time: float
    end_time: float
    label: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_time + self.end_time)


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    features_path: Path
    num_frames: int


@dataclass(frozen=True)
class TakeRecord:
    take_id: str
    duration: float
    ego_view: ViewRecord
    exo_views: tuple[ViewRecord, ...]
    segments: tuple[SegmentAnnotation, ...]
    text_features_path: Optional[Path] = None

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.segments]


@dataclass(frozen=True)
class Manifest:
    dataset_name: str
    num_classes: int
    feature_dim_vision: int
    feature_dim_text: int
    frame_rate: float
    takes: tuple[TakeRecord, ...] = field(default_factory=tuple)

    def take(self, take_id: str) -> TakeRecord:
        for t in self.takes:
            if t.take_id == take_id:
                return t
        raise KeyError(take_id)


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Row-major float32 matrix, one row per frame."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.dtype != np.float32:
            raise ValueError("FeatureTable expects a 2-D float32 array")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


# ---------------------------------------------------------------------------
# feature files


def write_features(path, data) -> None:
    """Write a 2-D array as a GLVF file (values are cast to float32)."""
    arr = np.ascontiguousarray(np.asarray(data, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, rows, cols))
        fh.write(arr.tobytes())


def load_features(path) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: expected {FEATURE_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header is {len(raw)} bytes, expected {_HEADER.size}")
    _, version, rows, cols = _HEADER.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise BadMagic(f"{path}: unsupported format version {version}")
    if rows < 1 or cols < 1:
        raise SchemaViolation("header", f"{path}: rows={rows} cols={cols}, both must be >= 1")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) < expected:
        got = (len(raw) - _HEADER.size) // 4
        raise TruncatedFile(f"{path}: header declares {rows * cols} values, found {got}")
    if len(raw) > expected:
        raise SchemaViolation("body", f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFiniteValue(path, int(r), int(c))
    data.setflags(write=False)
    return FeatureTable(data)


def frame_window(seg: SegmentAnnotation, frame_rate: float, rows: int) -> tuple[int, int]:
    """Half-open frame range covered by ``seg``, clipped to ``[0, rows)``.

    Falls back to the single frame nearest the segment midpoint when the
    clipped window is empty.
    """
    lo = max(math.floor(seg.start_time * frame_rate), 0)
    hi = min(math.ceil(seg.end_time * frame_rate), rows)
    if hi <= lo:
        nearest = min(max(math.floor(seg.midpoint * frame_rate), 0), rows - 1)
        return nearest, nearest + 1
    return lo, hi


def pool_segment_features(table: FeatureTable, seg: SegmentAnnotation, frame_rate: float) -> np.ndarray:
    lo, hi = frame_window(seg, frame_rate, table.rows)
    return table.data[lo:hi].astype(np.float64).mean(axis=0)


# ---------------------------------------------------------------------------
# manifest


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaViolation(where, "expected an object")
    if key not in obj:
        raise SchemaViolation(f"{where}.{key}" if where else key, "missing field")
    return obj[key]


def _as_int(value, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(where, f"expected integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise SchemaViolation(where, f"must be >= {minimum}, got {value}")
    return value


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(where, f"expected number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaViolation(where, "must be finite")
    return value


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(where, f"expected string, got {value!r}")
    return value


def _check_file(path: Path, where: str, rows: int, cols: int) -> None:
    if not path.is_file():
        raise MissingFile(f"{where}: {path}")
    expected = _HEADER.size + 4 * rows * cols
    size = path.stat().st_size
    if size != expected:
        raise SchemaViolation(where, f"{path} is {size} bytes, expected {expected} for {rows}x{cols}")


def _parse_view(obj, where: str, root: Path, dim: int) -> ViewRecord:
    view_id = _as_str(_require(obj, "view_id", where), f"{where}.view_id")
    rel = _as_str(_require(obj, "features_path", where), f"{where}.features_path")
    num_frames = _as_int(_require(obj, "num_frames", where), f"{where}.num_frames", 1)
    path = root / rel
    _check_file(path, f"{where}.features_path", num_frames, dim)
    return ViewRecord(view_id, path, num_frames)


def _parse_take(obj, where: str, root: Path, header: dict) -> TakeRecord:
    take_id = _as_str(_require(obj, "take_id", where), f"{where}.take_id")
    duration = _as_float(_require(obj, "duration", where), f"{where}.duration")
    if duration <= 0:
        raise SchemaViolation(f"{where}.duration", "must be positive")
    ego = _parse_view(_require(obj, "ego_view", where), f"{where}.ego_view", root, header["dv"])
    exo_raw = _require(obj, "exo_views", where)
    if not isinstance(exo_raw, list):
        raise SchemaViolation(f"{where}.exo_views", "expected a list")
    exo = tuple(_parse_view(v, f"{where}.exo_views[{j}]", root, header["dv"]) for j, v in enumerate(exo_raw))

    segs_raw = _require(obj, "segments", where)
    if not isinstance(segs_raw, list) or not segs_raw:
        raise SchemaViolation(f"{where}.segments", "expected a nonempty list")
    segments = []
    for i, s in enumerate(segs_raw):
        sw = f"{where}.segments[{i}]"
        idx = _as_int(_require(s, "segment_index", sw), f"{sw}.segment_index", 0)
        start = _as_float(_require(s, "start_time", sw), f"{sw}.start_time")
        end = _as_float(_require(s, "end_time", sw), f"{sw}.end_time")
        label = _as_int(_require(s, "label", sw), f"{sw}.label")
        if idx != i:
            raise SchemaViolation(f"{sw}.segment_index", f"expected {i}, got {idx}")
        if not (0 <= start < end <= duration):
            raise SchemaViolation(sw, f"need 0 <= start < end <= duration, got [{start}, {end}) with duration {duration}")
        if not 0 <= label < header["k"]:
            raise LabelOutOfRange(f"{sw}.label: {label} not in [0, {header['k']})")
        if segments and start <= segments[-1].start_time:
            raise UnsortedSegments(f"{sw}: start_time {start} <= previous {segments[-1].start_time}")
        segments.append(SegmentAnnotation(idx, start, end, label))

    text_rel = obj.get("text_features_path")
    text_path = None
    if text_rel is not None:
        text_rel = _as_str(text_rel, f"{where}.text_features_path")
        if header["dt"] == 0:
            raise SchemaViolation(f"{where}.text_features_path", "given but feature_dim_text is 0")
        text_path = root / text_rel
        _check_file(text_path, f"{where}.text_features_path", len(segments), header["dt"])
    return TakeRecord(take_id, duration, ego, exo, tuple(segments), text_path)


def manifest_from_dict(doc: Any, root) -> Manifest:
    """Validate a parsed manifest document; relative paths resolve against ``root``."""
    root = Path(root)
    if not isinstance(doc, dict):
        raise SchemaViolation("<root>", "expected a JSON object")
    name = _as_str(_require(doc, "dataset_name", ""), "dataset_name")
    k = _as_int(_require(doc, "num_classes", ""), "num_classes", 2)
    dv = _as_int(_require(doc, "feature_dim_vision", ""), "feature_dim_vision", 1)
    dt = _as_int(_require(doc, "feature_dim_text", ""), "feature_dim_text", 0)
    fps = _as_float(_require(doc, "frame_rate", ""), "frame_rate")
    if fps <= 0:
        raise SchemaViolation("frame_rate", "must be positive")
    takes_raw = _require(doc, "takes", "")
    if not isinstance(takes_raw, list):
        raise SchemaViolation("takes", "expected a list")
    header = {"k": k, "dv": dv, "dt": dt}
    takes = tuple(_parse_take(t, f"takes[{i}]", root, header) for i, t in enumerate(takes_raw))
    seen = set()
    for i, t in enumerate(takes):
        if t.take_id in seen:
            raise SchemaViolation(f"takes[{i}].take_id", f"duplicate take_id {t.take_id!r}")
        seen.add(t.take_id)
    return Manifest(name, k, dv, dt, fps, takes)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<root>", f"invalid JSON: {exc}") from None
    return manifest_from_dict(doc, path.parent)


def _rel(p: Path, root: Path) -> str:
    return Path(os.path.relpath(os.path.abspath(p), os.path.abspath(root))).as_posix()


def manifest_to_dict(manifest: Manifest, root) -> dict:
    root = Path(root)

    def view(v: ViewRecord) -> dict:
        return {"view_id": v.view_id, "features_path": _rel(v.features_path, root), "num_frames": v.num_frames}

    return {
        "dataset_name": manifest.dataset_name,
        "num_classes": manifest.num_classes,
        "feature_dim_vision": manifest.feature_dim_vision,
        "feature_dim_text": manifest.feature_dim_text,
        "frame_rate": manifest.frame_rate,
        "takes": [
            {
                "take_id": t.take_id,
                "duration": t.duration,
                "ego_view": view(t.ego_view),
                "exo_views": [view(v) for v in t.exo_views],
                "text_features_path": None if t.text_features_path is None else _rel(t.text_features_path, root),
                "segments": [
                    {"segment_index": s.segment_index, "start_time": s.start_time, "end_time": s.end_time, "label": s.label}
                    for s in t.segments
                ],
            }
            for t in manifest.takes
        ],
    }


def write_manifest(manifest: Manifest, path) -> None:
    """Write ``manifest`` as JSON; feature paths are stored relative to the file's directory."""
    path = Path(path)
    doc = manifest_to_dict(manifest, path.parent)
    path.write_text(json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# pooled per-take vectors


@dataclass(frozen=True, eq=False)
class PooledTake:
    """Segment-level vectors for one take: ``ego`` is S x D_v, ``exo[j]`` S x D_v, ``text`` S x D_t."""

    take: TakeRecord
    ego: np.ndarray
    exo: tuple[np.ndarray, ...]
    text: Optional[np.ndarray]


def pool_take(manifest: Manifest, take: TakeRecord) -> PooledTake:
    fps = manifest.frame_rate

    def pool_view(view: ViewRecord) -> np.ndarray:
        table = load_features(view.features_path)
        return np.stack([pool_segment_features(table, s, fps) for s in take.segments])

    text = None
    if take.text_features_path is not None:
        text = load_features(take.text_features_path).data.astype(np.float64)
    return PooledTake(take, pool_view(take.ego_view), tuple(pool_view(v) for v in take.exo_views), text)
