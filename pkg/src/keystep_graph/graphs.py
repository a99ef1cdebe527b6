"""Graph construction from pooled segment vectors.

One node per keystep segment per view. Three variants:

* ego graph: EgoVision nodes chained by Temporal edges,
* multiview graph: plus one ExoVision node per (segment, exo view), tied to
  the segment's ego node by an EgoExo edge,
* heterogeneous graph: plus one Text node per segment tied to the ego node
  by a VisionText edge.

Each variant can be cut at three temporal context lengths (``ContextMode``).
Node order inside a graph is segment-major; within a segment the ego node
comes first, then exo views in manifest order, then the text node.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import mean_adjacency
from .datamodel import TakeRecord
from .errors import EmptyTake, MissingTextFeatures, ViewSegmentMismatch


class NodeType(enum.Enum):
    EgoVision = "EgoVision"
    ExoVision = "ExoVision"
    Text = "Text"


class EdgeType(enum.Enum):
    Temporal = "Temporal"
    EgoExo = "EgoExo"
    VisionText = "VisionText"


class ContextMode(enum.Enum):
    NoContext = "none"
    ShortContext = "short"
    FullContext = "full"


NUM_SHORT_WINDOWS = 4


@dataclass(frozen=True, eq=False)
class Node:
    node_id: int
    node_type: NodeType
    view_id: str
    segment_index: int
    features: np.ndarray
    label: int
    train_mask: bool
    eval_mask: bool

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        return (
            (self.node_id, self.node_type, self.view_id, self.segment_index, self.label, self.train_mask, self.eval_mask)
            == (other.node_id, other.node_type, other.view_id, other.segment_index, other.label, other.train_mask, other.eval_mask)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class Graph:
    take_id: str
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int, EdgeType], ...]
    window: int = 0

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.take_id, self.window, self.edges) == (other.take_id, other.window, other.edges) and self.nodes == other.nodes

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([n.label for n in self.nodes], dtype=np.int64)

    @cached_property
    def train_mask(self) -> np.ndarray:
        return np.array([n.train_mask for n in self.nodes], dtype=bool)

    @cached_property
    def eval_mask(self) -> np.ndarray:
        return np.array([n.eval_mask for n in self.nodes], dtype=bool)

    @cached_property
    def type_index(self) -> dict[NodeType, np.ndarray]:
        """Node ids grouped by type, in node order (types with no nodes omitted)."""
        out = {}
        for t in NodeType:
            idx = np.array([n.node_id for n in self.nodes if n.node_type is t], dtype=np.int64)
            if idx.size:
                out[t] = idx
        return out

    @cached_property
    def type_features(self) -> dict[NodeType, np.ndarray]:
        return {t: np.stack([self.nodes[i].features for i in idx]) for t, idx in self.type_index.items()}

    @cached_property
    def directed_edges(self) -> dict[EdgeType, np.ndarray]:
        """Both directions of every undirected edge, as (E, 2) arrays of (src, dst)."""
        out = {}
        for r in EdgeType:
            pairs = [(a, b) for a, b, t in self.edges if t is r]
            if pairs:
                fwd = np.array(pairs, dtype=np.int64)
                out[r] = np.concatenate([fwd, fwd[:, ::-1]])
        return out

    @cached_property
    def mean_adjacency(self) -> dict[EdgeType, np.ndarray]:
        return {r: mean_adjacency(e, self.num_nodes) for r, e in self.directed_edges.items()}

    @cached_property
    def ego_outbound_adjacency(self) -> dict[EdgeType, np.ndarray]:
        """Mean operators carrying messages only from the EgoVision end of each edge."""
        out = {}
        for r in EdgeType:
            pairs = []
            for a, b, t in self.edges:
                if t is not r:
                    continue
                a_ego = self.nodes[a].node_type is NodeType.EgoVision
                b_ego = self.nodes[b].node_type is NodeType.EgoVision
                if a_ego != b_ego:
                    pairs.append((a, b) if a_ego else (b, a))
            if pairs:
                out[r] = mean_adjacency(pairs, self.num_nodes)
        return out


# ---------------------------------------------------------------------------
# context windows


def context_windows(take: TakeRecord, mode: ContextMode) -> list[list[int]]:
    """Segment indices of each graph for ``mode``; empty windows are dropped."""
    n = len(take.segments)
    if n == 0:
        raise EmptyTake(take.take_id)
    if mode is ContextMode.FullContext:
        return [list(range(n))]
    if mode is ContextMode.NoContext:
        return [[i] for i in range(n)]
    bins: list[list[int]] = [[] for _ in range(NUM_SHORT_WINDOWS)]
    width = take.duration / NUM_SHORT_WINDOWS
    for seg in take.segments:
        # floor puts a midpoint on a boundary into the later window
        w = min(int(seg.midpoint // width), NUM_SHORT_WINDOWS - 1)
        bins[w].append(seg.segment_index)
    return [b for b in bins if b]


# ---------------------------------------------------------------------------
# builders


class _GraphAssembler:
    def __init__(self, take_id: str, window: int):
        self.take_id = take_id
        self.window = window
        self.nodes: list[Node] = []
        self.edges: list[tuple[int, int, EdgeType]] = []

    def node(self, node_type: NodeType, view_id: str, seg, features) -> int:
        nid = len(self.nodes)
        vision = node_type is not NodeType.Text
        self.nodes.append(
            Node(
                nid,
                node_type,
                view_id,
                seg.segment_index,
                np.asarray(features, dtype=np.float64),
                seg.label,
                train_mask=vision,
                eval_mask=node_type is NodeType.EgoVision,
            )
        )
        return nid

    def edge(self, a: int, b: int, edge_type: EdgeType) -> None:
        self.edges.append((min(a, b), max(a, b), edge_type))

    def build(self) -> Graph:
        return Graph(self.take_id, tuple(self.nodes), tuple(self.edges), self.window)


def _check_rows(take: TakeRecord, vectors, what: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != len(take.segments):
        raise ViewSegmentMismatch(
            f"{take.take_id}: {what} has shape {arr.shape}, expected one row per segment ({len(take.segments)})"
        )
    return arr


def _build(
    take: TakeRecord,
    ego: np.ndarray,
    mode: ContextMode,
    exo: Sequence[np.ndarray] = (),
    text: Optional[np.ndarray] = None,
    exo_temporal_edges: bool = False,
) -> list[Graph]:
    ego = _check_rows(take, ego, "ego vectors")
    exo = [_check_rows(take, x, f"exo view {j} vectors") for j, x in enumerate(exo)]
    if len(exo) > len(take.exo_views):
        raise ViewSegmentMismatch(f"{take.take_id}: {len(exo)} exo vector sets for {len(take.exo_views)} exo views")
    graphs = []
    for w, seg_ids in enumerate(context_windows(take, mode)):
        g = _GraphAssembler(take.take_id, w)
        prev_ego = None
        prev_exo: list[Optional[int]] = [None] * len(exo)
        for i in seg_ids:
            seg = take.segments[i]
            e = g.node(NodeType.EgoVision, take.ego_view.view_id, seg, ego[i])
            if prev_ego is not None:
                g.edge(prev_ego, e, EdgeType.Temporal)
            prev_ego = e
            for j, x in enumerate(exo):
                o = g.node(NodeType.ExoVision, take.exo_views[j].view_id, seg, x[i])
                g.edge(e, o, EdgeType.EgoExo)
                if exo_temporal_edges and prev_exo[j] is not None:
                    g.edge(prev_exo[j], o, EdgeType.Temporal)
                prev_exo[j] = o
            if text is not None:
                t = g.node(NodeType.Text, "text", seg, text[i])
                g.edge(e, t, EdgeType.VisionText)
        graphs.append(g.build())
    return graphs


def build_ego_graphs(take: TakeRecord, ego_vectors, mode: ContextMode) -> list[Graph]:
    return _build(take, ego_vectors, mode)


def build_multiview_graphs(
    take: TakeRecord,
    ego_vectors,
    exo_vectors: Sequence,
    mode: ContextMode,
    exo_temporal_edges: bool = False,
) -> list[Graph]:
    """Ego graphs plus one exo node per (segment, view), tied to the ego node."""
    if len(exo_vectors) != len(take.exo_views):
        raise ViewSegmentMismatch(
            f"{take.take_id}: {len(exo_vectors)} exo vector sets for {len(take.exo_views)} exo views"
        )
    return _build(take, ego_vectors, mode, exo=exo_vectors, exo_temporal_edges=exo_temporal_edges)


def build_hetero_graphs(
    take: TakeRecord,
    ego_vectors,
    text_vectors,
    mode: ContextMode,
    include_exo: bool = False,
    exo_vectors: Sequence = (),
    exo_temporal_edges: bool = False,
) -> list[Graph]:
    """Ego (or multiview, with ``include_exo``) graphs plus one text node per segment.

    Text nodes connect to the ego node of their segment only.
    """
    if text_vectors is None:
        raise MissingTextFeatures(f"{take.take_id}: no text features")
    text = np.asarray(text_vectors, dtype=np.float64)
    if text.ndim != 2 or text.shape[1] == 0:
        raise MissingTextFeatures(f"{take.take_id}: text features have shape {text.shape}")
    text = _check_rows(take, text, "text vectors")
    if include_exo and len(exo_vectors) != len(take.exo_views):
        raise ViewSegmentMismatch(
            f"{take.take_id}: {len(exo_vectors)} exo vector sets for {len(take.exo_views)} exo views"
        )
    exo = exo_vectors if include_exo else ()
    return _build(take, ego_vectors, mode, exo=exo, text=text, exo_temporal_edges=exo_temporal_edges)


# ---------------------------------------------------------------------------
# stats and dumps


@dataclass(frozen=True)
class GraphStats:
    graphs: int
    nodes: int
    mean_nodes: float
    mean_segments: float
    edges: dict

    def as_dict(self) -> dict:
        return {
            "graphs": self.graphs,
            "nodes": self.nodes,
            "mean_nodes": self.mean_nodes,
            "mean_segments": self.mean_segments,
            **self.edges,
        }


def graph_stats(graphs: Sequence[Graph]) -> GraphStats:
    hist = {r.value: 0 for r in EdgeType}
    nodes = segments = 0
    for g in graphs:
        nodes += g.num_nodes
        segments += sum(n.node_type is NodeType.EgoVision for n in g.nodes)
        for _, _, r in g.edges:
            hist[r.value] += 1
    n = len(graphs)
    return GraphStats(
        graphs=n,
        nodes=nodes,
        mean_nodes=round(nodes / n, 2) if n else 0.0,
        mean_segments=round(segments / n, 2) if n else 0.0,
        edges=hist,
    )


def graph_to_dict(graph: Graph) -> dict:
    return {
        "take_id": graph.take_id,
        "window": graph.window,
        "nodes": [
            {
                "node_id": n.node_id,
                "type": n.node_type.value,
                "view_id": n.view_id,
                "segment_index": n.segment_index,
                "label": n.label,
                "train_mask": n.train_mask,
                "eval_mask": n.eval_mask,
                "features": [float(v) for v in n.features],
            }
            for n in graph.nodes
        ],
        "edges": [[a, b, r.value] for a, b, r in graph.edges],
    }


def dump_graphs_jsonl(graphs: Iterable[Graph], path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_dict(g), separators=(",", ":")) + "\n")
