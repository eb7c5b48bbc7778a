"""Explanation artifacts captured before and after unlearning.

A snapshot bundles a gradient saliency map, the k-hop proxy graph around the
forget set, a depth-limited surrogate rule set and member / non-member loss
pools, all computed from one ``(params, graph)`` pair.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gnn import LossReport, ModelConfig, ModelParams, loss_and_gradients, per_node_losses, predict
from .graph import EdgeSet, ForgetSet, Graph, proxy_graph


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """Non-negative saliency per original node id; absent nodes carry 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("attribution must be a vector")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("attribution values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, node):
        return self.values[node]


def saliency(params: ModelParams, g: Graph, config: ModelConfig) -> AttributionMap:
    """L1 norm of each node's input-feature gradient of the train-mask loss.

    Computed in eval mode over the train nodes that are still present.
    """
    if params["W1"].shape[0] != g.d:
        raise ValueError(f"model expects {params['W1'].shape[0]} features, graph has {g.d}")
    nodes = np.flatnonzero(g.train_mask & g.present)
    if len(nodes) == 0:
        return AttributionMap(np.zeros(g.n))
    _, dx = loss_and_gradients(params, g, config, nodes, wrt="inputs")
    a = np.abs(dx).sum(axis=1)
    a[~g.present] = 0.0
    return AttributionMap(a)


# -------------------------------------------------------------- surrogate


@dataclass(frozen=True)
class Predicate:
    feature: int
    threshold: float
    op: str  # "<=" or ">"

    def __str__(self):
        return f"x[{self.feature}] {self.op} {self.threshold!r}"


@dataclass(frozen=True)
class Rule:
    predicates: tuple[Predicate, ...]
    predicted_class: int
    support: int

    def __str__(self):
        body = " AND ".join(str(p) for p in self.predicates) or "TRUE"
        return f"{body} => class {self.predicted_class} (n={self.support})"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    depth: int
    tree_seed: int = 0

    def __len__(self):
        return len(self.rules)

    def lines(self) -> list[str]:
        return [str(r) for r in self.rules]


def _gini(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / tot[..., None]
    return np.where(tot > 0, 1.0 - (p * p).sum(axis=-1), 0.0)


def _best_split(x: np.ndarray, y: np.ndarray, n_classes: int):
    """Exhaustive Gini split search with ties going to the lowest feature, then threshold."""
    n = len(y)
    parent = _gini(np.bincount(y, minlength=n_classes).astype(float))
    best = (0.0, None, None)
    onehot = np.eye(n_classes)[y]
    total = onehot.sum(axis=0)
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cuts = np.flatnonzero(xs[1:] > xs[:-1])  # split after position cut
        if len(cuts) == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[cuts]
        right = total - left
        nl = cuts + 1.0
        impurity = (nl * _gini(left) + (n - nl) * _gini(right)) / n
        gains = parent - impurity
        k = int(np.argmax(gains))  # first maximum = lowest threshold
        if gains[k] > best[0]:
            best = (float(gains[k]), j, float((xs[cuts[k]] + xs[cuts[k] + 1]) / 2.0))
    return best


def _grow(x, y, n_classes, depth, path, out):
    counts = np.bincount(y, minlength=n_classes)
    if depth > 0 and np.count_nonzero(counts) > 1:
        gain, j, thr = _best_split(x, y, n_classes)
        if j is not None and gain > 0:
            go_left = x[:, j] <= thr
            _grow(x[go_left], y[go_left], n_classes, depth - 1, path + (Predicate(j, thr, "<="),), out)
            _grow(x[~go_left], y[~go_left], n_classes, depth - 1, path + (Predicate(j, thr, ">"),), out)
            return
    out.append(Rule(path, int(np.argmax(counts)), int(len(y))))


def fit_tree_rules(x: np.ndarray, y: np.ndarray, depth: int = 3, tree_seed: int = 0) -> RuleSet:
    """CART (Gini) on ``x -> y``; returns every root-to-leaf path as a rule.

    The search is exhaustive and deterministic, so ``tree_seed`` is only
    recorded for provenance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot fit a surrogate on zero samples")
    out: list[Rule] = []
    _grow(x, y, int(y.max()) + 1, depth, (), out)
    return RuleSet(tuple(out), depth, tree_seed)


def fit_surrogate(
    params: ModelParams, g: Graph, config: ModelConfig, depth: int = 3, tree_seed: int = 0
) -> RuleSet:
    """Decision-tree surrogate of the model's predictions on present nodes."""
    ids = g.present_ids
    pred = predict(params, g, config)[ids]
    return fit_tree_rules(g.features[ids], pred, depth, tree_seed)


def apply_rules(rules: RuleSet, x: np.ndarray) -> np.ndarray:
    """Class assigned to each row by the first rule whose predicates all hold."""
    out = np.full(len(x), -1)
    for r in rules.rules:
        hit = out < 0
        for p in r.predicates:
            col = x[:, p.feature]
            hit &= (col <= p.threshold) if p.op == "<=" else (col > p.threshold)
        out[hit] = r.predicted_class
    return out


# --------------------------------------------------------------- snapshot


def config_digest(config: ModelConfig, forget: ForgetSet, k: int, heldout, depth: int, tree_seed: int) -> str:
    payload = {
        "model": config.as_dict(),
        "forget": sorted(int(v) for v in forget.node_ids),
        "k": int(k),
        "heldout": sorted(int(v) for v in heldout),
        "depth": int(depth),
        "tree_seed": int(tree_seed),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True, eq=False)
class Snapshot:
    attribution: AttributionMap
    proxy: EdgeSet
    rules: RuleSet
    member_losses: LossReport
    nonmember_losses: LossReport
    predictions: np.ndarray
    digest: str
    label: str = "snapshot"
    flags: tuple[str, ...] = field(default=())

    def same_artifacts(self, other: "Snapshot") -> bool:
        return (
            np.array_equal(self.attribution.values, other.attribution.values)
            and self.proxy == other.proxy
            and self.rules == other.rules
            and np.array_equal(self.member_losses.node_ids, other.member_losses.node_ids)
            and np.array_equal(self.member_losses.losses, other.member_losses.losses)
            and np.array_equal(self.nonmember_losses.node_ids, other.nonmember_losses.node_ids)
            and np.array_equal(self.nonmember_losses.losses, other.nonmember_losses.losses)
            and np.array_equal(self.predictions, other.predictions)
        )


def take_snapshot(
    params: ModelParams,
    g: Graph,
    config: ModelConfig,
    f: ForgetSet,
    k: int = 2,
    heldout=None,
    depth: int = 3,
    tree_seed: int = 0,
    label: str = "snapshot",
) -> Snapshot:
    """Compute every explanation artifact for one model state.

    ``heldout`` defaults to the test mask. Members are present train nodes,
    non-members are present held-out nodes.
    """
    if heldout is None:
        heldout = np.flatnonzero(g.test_mask)
    heldout = np.asarray(sorted(int(v) for v in heldout), dtype=np.int64)
    if g.train_mask[heldout].any():
        raise ValueError("held-out nodes overlap the train mask")
    flags = []
    if len(f) == 0:
        flags.append("empty-forget-set")
    proxy = proxy_graph(g, f, k) if len(f) else frozenset()
    members = np.flatnonzero(g.train_mask & g.present)
    nonmembers = heldout[g.present[heldout]]
    return Snapshot(
        attribution=saliency(params, g, config),
        proxy=proxy,
        rules=fit_surrogate(params, g, config, depth, tree_seed),
        member_losses=per_node_losses(params, g, config, members),
        nonmember_losses=per_node_losses(params, g, config, nonmembers),
        predictions=predict(params, g, config),
        digest=config_digest(config, f, k, heldout, depth, tree_seed),
        label=label,
        flags=tuple(flags),
    )


def export_snapshot(snap: Snapshot, directory: str | Path) -> Path:
    """Write a snapshot as plain text files for external audit.

    Layout: ``attribution.tsv`` (``node<TAB>value``), ``proxy_edges.txt``
    (``u v``), ``rules.txt`` (one conjunctive rule per line),
    ``member_losses.tsv`` / ``nonmember_losses.tsv`` (``node<TAB>loss``),
    ``predictions.tsv`` (``node<TAB>class``, -1 for absent) and ``meta.json``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "attribution.tsv").open("w") as fh:
        for i, v in enumerate(snap.attribution.values.tolist()):
            fh.write(f"{i}\t{v!r}\n")
    with (d / "proxy_edges.txt").open("w") as fh:
        for u, v in sorted(snap.proxy):
            fh.write(f"{u} {v}\n")
    (d / "rules.txt").write_text("".join(line + "\n" for line in snap.rules.lines()))
    for name, rep in (("member_losses", snap.member_losses), ("nonmember_losses", snap.nonmember_losses)):
        with (d / f"{name}.tsv").open("w") as fh:
            for i, v in zip(rep.node_ids.tolist(), rep.losses.tolist()):
                fh.write(f"{i}\t{v!r}\n")
    with (d / "predictions.tsv").open("w") as fh:
        for i, c in enumerate(snap.predictions.tolist()):
            fh.write(f"{i}\t{c}\n")
    meta = {
        "label": snap.label,
        "digest": snap.digest,
        "flags": list(snap.flags),
        "rule_count": len(snap.rules),
        "depth": snap.rules.depth,
        "tree_seed": snap.rules.tree_seed,
        "proxy_edges": len(snap.proxy),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_attribution(path: str | Path) -> AttributionMap:
    rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line]
    values = np.zeros(len(rows))
    for i, v in rows:
        values[int(i)] = float(v)
    return AttributionMap(values)
