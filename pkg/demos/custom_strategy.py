"""Plug a new unlearning method into the grid runner.

The strategy below zeroes the forget-set features instead of deleting the
nodes. The edges stay, so the proxy graph is unchanged and GEDΔ reports 0
even though the model's saliency moves.

Run: python demos/custom_strategy.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from gnnverify.gnn import fit
from gnnverify.runner import ExperimentPlan, read_records, run_plan
from gnnverify.unlearning import UnlearningOutcome, register


@register("mask-features")
def mask_features(g, f, config, pre_params, epochs=5, **_):
    x = np.array(g.features)
    x[f.as_array()] = 0.0
    g_post = g.replace(features=x)
    train_ids = np.flatnonzero(g_post.train_mask)
    params = fit(pre_params, g_post, config, train_ids, int(epochs), dropout_role="mask-dropout")
    return UnlearningOutcome(params, g_post, "mask-features", strategy_metadata={"epochs": int(epochs)})


out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="gnnverify-"))
plan = ExperimentPlan(
    dataset="sbm:blocks=60+60,p_in=0.15,p_out=0.01,d=8,seed=4",
    backbones=("GCN",),
    methods=("retrain", "mask-features"),
    seeds=(1001, 1002),
    method_args=("mask-features.epochs=20",),
    out=out,
)
report = run_plan(plan)
print((out / "table.txt").read_text())
for rec in read_records(out / "cells.jsonl"):
    print(rec["method"], rec["seed"], "meta:", {k: v for k, v in rec.items() if k.startswith("meta_")})
print("report written to", out)
