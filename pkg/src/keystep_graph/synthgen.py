"""Synthetic segment-annotated takes with controllable structure.

Labels follow a sticky Markov chain. Classes come in confusable pairs
(2p, 2p+1): a fraction ``ambiguity`` of ego segments draws its frames around
the pair's shared direction instead of the class prototype, so an isolated
segment only identifies its pair and the rest must come from neighbouring
segments. Exo view j sees the class prototype through a fixed random
orthogonal map Q_j. A text vector per segment is the class's text prototype
with probability ``text_fidelity`` and a uniformly drawn wrong class's
prototype otherwise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .datamodel import Manifest, load_manifest, write_features

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SynthConfig:
    num_takes: int = 60
    segments_per_take: tuple[int, int] = (10, 30)
    num_classes: int = 8
    feature_dim_vision: int = 32
    feature_dim_text: int = 16
    num_exo_views: int = 2
    stickiness: float = 0.85
    noise_sigma: float = 0.3
    view_noise_sigma: float = 0.3
    text_fidelity: float = 1.0
    frames_per_segment: tuple[int, int] = (2, 6)
    frame_rate: float = 2.0
    ambiguity: float = 0.6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments_per_take", tuple(self.segments_per_take))
        object.__setattr__(self, "frames_per_segment", tuple(self.frames_per_segment))
        for name in ("segments_per_take", "frames_per_segment"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must be a nonempty range of positive integers, got {(lo, hi)}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        for name in ("stickiness", "text_fidelity", "ambiguity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0 or self.view_noise_sigma < 0:
            raise ValueError("noise levels must be >= 0")
        if self.num_takes < 0 or self.num_exo_views < 0 or self.feature_dim_text < 0 or self.feature_dim_vision < 1:
            raise ValueError("counts and dimensions must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segments_per_take"] = list(self.segments_per_take)
        d["frames_per_segment"] = list(self.frames_per_segment)
        return d


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_orthogonal(rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def markov_labels(rng, n: int, k: int, stickiness: float) -> np.ndarray:
    """Stay with probability ``stickiness``, else jump uniformly to one of the other k-1 classes."""
    labels = np.empty(n, dtype=np.int64)
    labels[0] = rng.integers(k)
    for i in range(1, n):
        if rng.random() < stickiness:
            labels[i] = labels[i - 1]
        else:
            j = rng.integers(k - 1)
            labels[i] = j + (j >= labels[i - 1])
    return labels


@dataclass(frozen=True, eq=False)
class World:
    """Fixed random structure shared by all takes of a dataset."""

    prototypes: np.ndarray  # K x D_v, unit rows
    pair_directions: np.ndarray  # K x D_v, shared by each confusable pair
    view_maps: tuple[np.ndarray, ...]  # V orthogonal D_v x D_v
    text_prototypes: np.ndarray  # K x D_t

    @staticmethod
    def create(cfg: SynthConfig, rng) -> "World":
        k, d = cfg.num_classes, cfg.feature_dim_vision
        protos = _unit_rows(rng, k, d)
        pair = protos.copy()
        for c in range(0, k - 1, 2):
            shared = protos[c] + protos[c + 1]
            shared /= np.linalg.norm(shared)
            pair[c] = pair[c + 1] = shared
        maps = tuple(random_orthogonal(rng, d) for _ in range(cfg.num_exo_views))
        dt = cfg.feature_dim_text
        if dt >= k:
            text = np.eye(k, dt)
        elif dt > 0:
            text = _unit_rows(rng, k, dt)
        else:
            text = np.zeros((k, 0))
        return World(protos, pair, maps, text)


def _take_dict(cfg: SynthConfig, world: World, rng, take_id: str, out_dir: Path) -> dict:
    k = cfg.num_classes
    n_seg = int(rng.integers(cfg.segments_per_take[0], cfg.segments_per_take[1] + 1))
    labels = markov_labels(rng, n_seg, k, cfg.stickiness)
    frames = rng.integers(cfg.frames_per_segment[0], cfg.frames_per_segment[1] + 1, size=n_seg)
    ambiguous = rng.random(n_seg) < cfg.ambiguity
    total = int(frames.sum())
    seg_of_frame = np.repeat(np.arange(n_seg), frames)

    ego_centres = np.where(ambiguous[:, None], world.pair_directions[labels], world.prototypes[labels])
    ego = ego_centres[seg_of_frame] + cfg.noise_sigma * rng.standard_normal((total, cfg.feature_dim_vision))
    feat_dir = out_dir / "features"
    write_features(feat_dir / f"{take_id}_ego.glvf", ego)

    exo_views = []
    for j, q in enumerate(world.view_maps):
        centres = world.prototypes[labels] @ q.T
        x = centres[seg_of_frame] + cfg.view_noise_sigma * rng.standard_normal((total, cfg.feature_dim_vision))
        name = f"features/{take_id}_exo{j}.glvf"
        write_features(out_dir / name, x)
        exo_views.append({"view_id": f"exo{j}", "features_path": name, "num_frames": total})

    text_path = None
    if cfg.feature_dim_text > 0:
        faithful = rng.random(n_seg) < cfg.text_fidelity
        wrong = rng.integers(k - 1, size=n_seg)
        wrong = wrong + (wrong >= labels)
        shown = np.where(faithful, labels, wrong)
        text_path = f"features/{take_id}_text.glvf"
        write_features(out_dir / text_path, world.text_prototypes[shown])

    bounds = np.concatenate([[0], np.cumsum(frames)]) / cfg.frame_rate
    segments = [
        {"segment_index": i, "start_time": float(bounds[i]), "end_time": float(bounds[i + 1]), "label": int(labels[i])}
        for i in range(n_seg)
    ]
    return {
        "take_id": take_id,
        "duration": float(bounds[-1]),
        "ego_view": {"view_id": "ego", "features_path": f"features/{take_id}_ego.glvf", "num_frames": total},
        "exo_views": exo_views,
        "text_features_path": text_path,
        "segments": segments,
    }


def generate(config: SynthConfig, out_dir) -> Manifest:
    """Write ``manifest.json`` and ``features/*.glvf`` under ``out_dir``; return the loaded manifest."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    world_ss, *take_ss = np.random.SeedSequence(config.seed).spawn(config.num_takes + 1)
    world = World.create(config, np.random.default_rng(world_ss))
    takes = [
        _take_dict(config, world, np.random.default_rng(ss), f"take_{i:04d}", out_dir)
        for i, ss in enumerate(take_ss)
    ]
    doc = {
        "dataset_name": f"synthetic-seed{config.seed}",
        "num_classes": config.num_classes,
        "feature_dim_vision": config.feature_dim_vision,
        "feature_dim_text": config.feature_dim_text,
        "frame_rate": config.frame_rate,
        "takes": takes,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return load_manifest(path)


@dataclass(frozen=True, eq=False)
class LabelSummary:
    transitions: np.ndarray  # K x K counts of (previous, next) label pairs within takes
    class_counts: np.ndarray  # K


def summarize(manifest: Manifest) -> LabelSummary:
    k = manifest.num_classes
    trans = np.zeros((k, k), dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    for take in manifest.takes:
        labels = take.labels
        np.add.at(counts, labels, 1)
        if len(labels) > 1:
            np.add.at(trans, (labels[:-1], labels[1:]), 1)
    return LabelSummary(trans, counts)
