"""Train a GCN on a two-community graph and look at what it relies on.

Run: python demos/train_and_explain.py
"""

import numpy as np

from gnnverify.explain import take_snapshot
from gnnverify.gnn import ModelConfig, accuracy, train
from gnnverify.graph import generate_sbm, sample_forget_set

# Two blocks of 100 nodes; feature column b lights up on block b.
g = generate_sbm([100, 100], p_in=0.1, p_out=0.01, d=16, seed=0, noise=0.5)
print(f"{g.name}: {g.n} nodes, {g.num_edges} edges, {int(g.train_mask.sum())} train")

config = ModelConfig(backbone="GCN", seed=1001)
params = train(g, config)
print(f"test accuracy {accuracy(params, g, config, 'test'):.3f}")

forget = sample_forget_set(g, 0.05, seed=1001)
snap = take_snapshot(params, g, config, forget, k=2, label="pre")

# Saliency is the L1 size of each node's input gradient.
top = np.argsort(snap.attribution.values)[::-1][:5]
print("most salient nodes:", top.tolist())
print(f"forget set {sorted(forget)} carries "
      f"{100 * snap.attribution.values[forget.as_array()].sum() / snap.attribution.values.sum():.2f}% of saliency")
print(f"2-hop proxy around the forget set: {len(snap.proxy)} edges")

print("surrogate rules:")
for line in snap.rules.lines():
    print("  ", line)
