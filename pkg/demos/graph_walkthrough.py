# %% [markdown]
# Building keystep graphs by hand
#
# One synthetic take, three context lengths, and what each graph looks like.
# Run with ``python3 demos/graph_walkthrough.py``.

# %%
import tempfile
from pathlib import Path

import numpy as np

from keystep_graph.datamodel import pool_take
from keystep_graph.graphs import ContextMode, build_hetero_graphs, build_multiview_graphs, context_windows, graph_stats
from keystep_graph.synthgen import SynthConfig, generate

out = Path(tempfile.mkdtemp())
cfg = SynthConfig(num_takes=3, segments_per_take=(6, 9), num_classes=5, feature_dim_vision=8, feature_dim_text=6, seed=11)
manifest = generate(cfg, out)
take = manifest.takes[0]
print(take.take_id, "duration", round(take.duration, 2), "labels", take.labels)

# %% [markdown]
# Windows: none gives one segment per graph, short cuts the take into
# quarters by segment midpoint, full keeps everything together.

# %%
for mode in ContextMode:
    print(f"{mode.value:>5}", context_windows(take, mode))

# %%
pooled = pool_take(manifest, take)
for mode in ContextMode:
    graphs = build_multiview_graphs(take, pooled.ego, pooled.exo, mode)
    print(mode.value, graph_stats(graphs).as_dict())

# %% [markdown]
# The heterogeneous graph adds a text node per segment, tied to the ego node only.

# %%
(g,) = build_hetero_graphs(take, pooled.ego, pooled.text, ContextMode.FullContext)
for src, dst, et in g.edges[-4:]:
    print(g.nodes[src].node_type.value, "->", g.nodes[dst].node_type.value, et.value)
print("eval nodes:", int(np.sum([n.eval_mask for n in g.nodes])), "of", g.num_nodes)
