"""Relation-typed message-passing node classifier.

    h0_v = relu(x_v W_in[type(v)] + b_in[type(v)])
    h_v  = relu(h_v W_self + sum_r mean_{u ~r v}(h_u) W_r + b)      per layer
    logits_v = h_v W_out + b_out

Dropout follows every message-passing layer during training. Temporal and
VisionText edges pass messages both ways. EgoExo edges by default carry
messages from the ego node to the exo node only, so an ego node computes the
same function in multiview training graphs as in the ego-only graphs used at
inference; ``egoexo_bidirectional`` restores two-way flow.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, DimMismatch
from .graphs import EdgeType, Graph, NodeType

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GLVP"
CHECKPOINT_VERSION = 1

_warned_inactive: set[EdgeType] = set()


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_dims: dict
    hidden_dim: int = 128
    num_layers: int = 2
    dropout_p: float = 0.2
    edge_types_active: frozenset = field(default_factory=lambda: frozenset(EdgeType))
    # EgoExo messages flow ego -> exo only unless set; inference graphs carry no exo nodes
    egoexo_bidirectional: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("hidden_dim and num_layers must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        object.__setattr__(self, "input_dims", {NodeType(k): int(v) for k, v in self.input_dims.items()})
        object.__setattr__(self, "edge_types_active", frozenset(EdgeType(e) for e in self.edge_types_active))

    @property
    def node_types(self) -> list[NodeType]:
        return [t for t in NodeType if t in self.input_dims]

    @property
    def edge_types(self) -> list[EdgeType]:
        return [r for r in EdgeType if r in self.edge_types_active]

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_dims": {t.value: self.input_dims[t] for t in self.node_types},
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "dropout_p": self.dropout_p,
            "edge_types_active": [r.value for r in self.edge_types],
            "egoexo_bidirectional": self.egoexo_bidirectional,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["edge_types_active"] = frozenset(d.get("edge_types_active", [r.value for r in EdgeType]))
        return cls(**d)


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    """Parameter names and shapes in declaration order."""
    h = config.hidden_dim
    layout = []
    for t in config.node_types:
        layout += [(f"in.{t.value}.W", (config.input_dims[t], h)), (f"in.{t.value}.b", (1, h))]
    for layer in range(config.num_layers):
        layout += [(f"layer{layer}.self.W", (h, h)), (f"layer{layer}.b", (1, h))]
        layout += [(f"layer{layer}.{r.value}.W", (h, h)) for r in config.edge_types]
    layout += [("out.W", (h, config.num_classes)), ("out.b", (1, config.num_classes))]
    return layout


class ModelParams:
    """Named leaf tensors in declaration order."""

    def __init__(self, tensors: dict[str, ad.Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: ad.Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def bit_equal(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            a.data.shape == b.data.shape and a.data.tobytes() == b.data.tobytes()
            for a, b in zip(self, other)
        )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (fan_in, fan_out) in param_layout(config):
        if name.endswith(".b"):
            data = np.zeros((fan_in, fan_out))
        else:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-a, a, size=(fan_in, fan_out))
        tensors[name] = ad.Tensor(data, requires_grad=True)
    return ModelParams(tensors)


def _check_inputs(graph: Graph, config: ModelConfig) -> None:
    for t, feats in graph.type_features.items():
        if t not in config.input_dims:
            raise DimMismatch(f"graph {graph.take_id} has {t.value} nodes but the model has no {t.value} input")
        if feats.shape[1] != config.input_dims[t]:
            raise DimMismatch(f"{t.value} features have dim {feats.shape[1]}, model expects {config.input_dims[t]}")


def _active_adjacency(graph: Graph, config: ModelConfig) -> list[tuple[EdgeType, np.ndarray]]:
    out = []
    for r, adj in graph.mean_adjacency.items():
        if r is EdgeType.EgoExo and not config.egoexo_bidirectional:
            # EgoExo edges without exactly one ego end carry nothing one-way
            adj = graph.ego_outbound_adjacency.get(r)
            if adj is None:
                continue
        if r in config.edge_types_active:
            out.append((r, adj))
        elif r not in _warned_inactive:
            _warned_inactive.add(r)
            log.warning("edge type %s is not active in the model; its edges are skipped", r.value)
    return out


def forward(
    graph: Graph,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ad.Tensor:
    """Logits for every node of ``graph`` (N x K)."""
    _check_inputs(graph, config)
    n = graph.num_nodes
    parts, indices = [], []
    for t, idx in graph.type_index.items():
        x = ad.Tensor(graph.type_features[t])
        h = ad.relu(ad.add_bias(ad.matmul(x, params[f"in.{t.value}.W"]), params[f"in.{t.value}.b"]))
        parts.append(h)
        indices.append(idx)
    h = parts[0] if len(parts) == 1 else ad.assemble_rows(parts, indices, n)

    # relations with no edges contribute exactly zero and are skipped
    relations = _active_adjacency(graph, config)
    for layer in range(config.num_layers):
        terms = [ad.add_bias(ad.matmul(h, params[f"layer{layer}.self.W"]), params[f"layer{layer}.b"])]
        for r, adj in relations:
            terms.append(ad.matmul(ad.propagate(h, adj), params[f"layer{layer}.{r.value}.W"]))
        h = ad.relu(terms[0] if len(terms) == 1 else ad.add(*terms))
        h = ad.dropout(h, config.dropout_p, training, rng)
    return ad.add_bias(ad.matmul(h, params["out.W"]), params["out.b"])


@dataclass(frozen=True)
class NodePredictions:
    node_ids: np.ndarray
    classes: np.ndarray
    confidences: np.ndarray
    probabilities: np.ndarray


def predict(graph: Graph, params: ModelParams, config: ModelConfig) -> NodePredictions:
    """Argmax class and its softmax probability for each eval-masked node.

    Ties go to the lowest class index.
    """
    logits = forward(graph, params, config, training=False).data
    ids = np.flatnonzero(graph.eval_mask)
    probs = ad.softmax(logits[ids])
    classes = probs.argmax(axis=1)
    return NodePredictions(ids, classes, probs[np.arange(ids.size), classes], probs)


# ---------------------------------------------------------------------------
# checkpoints: magic | version u32 | json length u32 | json | per param: rows u32, cols u32, float64 data


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    layout = param_layout(config)
    if [name for name, _ in layout] != params.names():
        raise CheckpointError("parameter names do not match the config layout")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name, shape in layout:
            arr = params[name].data
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape}, expected {shape}")
            fh.write(struct.pack("<II", *shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, blob_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12 + blob_len
        config = ModelConfig.from_dict(json.loads(raw[12:pos]))
        tensors = {}
        for name, shape in param_layout(config):
            rows, cols = struct.unpack_from("<II", raw, pos)
            pos += 8
            if (rows, cols) != shape:
                raise CheckpointError(f"{name}: stored shape {(rows, cols)}, expected {shape}")
            n = rows * cols * 8
            if pos + n > len(raw):
                raise CheckpointError(f"{path}: truncated at {name}")
            data = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
            pos += n
            tensors[name] = ad.Tensor(data, requires_grad=True)
    except (struct.error, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return ModelParams(tensors), config
