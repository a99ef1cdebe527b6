"""Builders for small on-disk datasets used across tests."""
import json
from pathlib import Path

import numpy as np

from keystep_graph import autodiff as ad
from keystep_graph.datamodel import write_features
from keystep_graph.graphs import EdgeType, Graph, Node, NodeType
from keystep_graph.model import ModelConfig, forward, init_params


def make_manifest_doc(root: Path, takes: list[dict], num_classes=3, dim=4, dim_text=0, fps=1.0, name="tiny"):
    return {
        "dataset_name": name,
        "num_classes": num_classes,
        "feature_dim_vision": dim,
        "feature_dim_text": dim_text,
        "frame_rate": fps,
        "takes": takes,
    }


def write_take(root: Path, take_id: str, labels, dim=4, num_exo=0, dim_text=0, frames_per_seg=2, fps=1.0, seed=0):
    """Write feature files for a take with contiguous segments; return its manifest entry."""
    rng = np.random.default_rng(seed)
    n = len(labels)
    total = n * frames_per_seg
    (root / "feat").mkdir(exist_ok=True)
    write_features(root / "feat" / f"{take_id}_ego.glvf", rng.standard_normal((total, dim)))
    exo = []
    for j in range(num_exo):
        write_features(root / "feat" / f"{take_id}_exo{j}.glvf", rng.standard_normal((total, dim)))
        exo.append({"view_id": f"exo{j}", "features_path": f"feat/{take_id}_exo{j}.glvf", "num_frames": total})
    text = None
    if dim_text:
        write_features(root / "feat" / f"{take_id}_text.glvf", rng.standard_normal((n, dim_text)))
        text = f"feat/{take_id}_text.glvf"
    seg_len = frames_per_seg / fps
    return {
        "take_id": take_id,
        "duration": n * seg_len,
        "ego_view": {"view_id": "ego", "features_path": f"feat/{take_id}_ego.glvf", "num_frames": total},
        "exo_views": exo,
        "text_features_path": text,
        "segments": [
            {"segment_index": i, "start_time": i * seg_len, "end_time": (i + 1) * seg_len, "label": int(lab)}
            for i, lab in enumerate(labels)
        ],
    }


def write_manifest_doc(root: Path, doc: dict) -> Path:
    path = root / "manifest.json"
    path.write_text(json.dumps(doc))
    return path




def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    """Elementwise relative error; ``floor`` keeps near-zero entries from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor), initial=0.0))


def random_graph(rng, num_nodes, dims, num_classes=3, edge_prob=0.4, take_id="g"):
    """Random typed graph; node 0 is always EgoVision so the eval mask is nonempty."""
    types = [NodeType.EgoVision] + [rng.choice(sorted(dims, key=lambda t: t.value)) for _ in range(num_nodes - 1)]
    nodes = tuple(
        Node(
            i,
            t,
            t.value,
            i,
            rng.standard_normal(dims[t]),
            int(rng.integers(num_classes)),
            train_mask=t is not NodeType.Text,
            eval_mask=t is NodeType.EgoVision,
        )
        for i, t in enumerate(types)
    )
    edges = tuple(
        (a, b, EdgeType(rng.choice([r.value for r in EdgeType])))
        for a in range(num_nodes)
        for b in range(a + 1, num_nodes)
        if rng.random() < edge_prob
    )
    return Graph(take_id, nodes, edges)


def weighted_sum(out: ad.Tensor, weights: np.ndarray) -> ad.Tensor:
    """sum(out * weights) as a 1x1 loss; its gradient w.r.t. ``out`` is ``weights``."""
    return ad._emit(np.array([[np.sum(out.data * weights)]]), (out,), lambda g: (g[0, 0] * weights,))


def op_gradient_error(build, inputs, seed):
    """Worst relative error between tape gradients of sum(op(inputs) * W) and central differences."""
    rng = np.random.default_rng(1000 + seed)
    leaves = [ad.Tensor(x, requires_grad=True) for x in inputs]
    with ad.Tape():
        out = build(*leaves)
        weights = rng.standard_normal(out.shape)
        loss = weighted_sum(out, weights)
    ad.backward(loss)

    def value():
        return float(np.sum(build(*[ad.Tensor(t.data) for t in leaves]).data * weights))

    worst = 0.0
    for t in leaves:
        numeric = central_difference(value, t.data)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst


def check_op(build, inputs, seed, tol=1e-4):
    assert op_gradient_error(build, inputs, seed) < tol


def full_model_gradient_error(seed, num_nodes=5, hidden=8, bidirectional=False):
    """Worst relative error of the masked cross-entropy gradient over every model parameter."""
    rng = np.random.default_rng(seed)
    dims = {NodeType.EgoVision: 4, NodeType.ExoVision: 3, NodeType.Text: 5}
    cfg = ModelConfig(num_classes=3, input_dims=dims, hidden_dim=hidden, num_layers=2, dropout_p=0.0,
                      egoexo_bidirectional=bidirectional)
    params = init_params(cfg, seed)
    g = random_graph(rng, num_nodes, dims, edge_prob=0.5)
    for p in params:  # nonzero biases exercise every gradient path
        p.data += 0.05 * rng.standard_normal(p.data.shape)

    def loss_value():
        return ad.softmax_cross_entropy(forward(g, params, cfg), g.labels, g.train_mask).data[0, 0]

    params.zero_grad()
    with ad.Tape():
        loss = ad.softmax_cross_entropy(forward(g, params, cfg), g.labels, g.train_mask)
    ad.backward(loss)
    worst = 0.0
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, max_rel_error(grad, central_difference(loss_value, p.data)))
    return worst
