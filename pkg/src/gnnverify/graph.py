"""Attributed undirected graphs with stable node identities.

Nodes are never reindexed: deleting a node only clears its ``present`` flag
and drops its incident edges, so per-node arrays computed before and after a
deletion always line up by position.
"""

from __future__ import annotations

import math
import pickle
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GraphIntegrityError, GraphParseError
from .rng import rng_for

Edge = tuple[int, int]
EdgeSet = frozenset  # frozenset[Edge], every pair normalized to u < v

MASK_NAMES = ("train", "val", "test")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def normalize_edges(pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    """Return sorted, deduplicated ``(m, 2)`` edges with ``u < v``.

    Raises GraphIntegrityError on self-loops.
    """
    arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        u = int(arr[loops][0, 0])
        raise GraphIntegrityError(f"self-loop on node {u}")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


def as_edge_set(edges: np.ndarray | Iterable[Edge]) -> EdgeSet:
    return frozenset((int(min(u, v)), int(max(u, v))) for u, v in edges)


@dataclass(frozen=True, eq=False)
class Graph:
    """Attributed undirected graph.

    ``features`` is ``(n, d)``, ``labels`` is ``(n,)`` with values in
    ``[0, num_classes)``, ``edges`` is ``(m, 2)`` with ``u < v``. The three
    split masks are disjoint. ``present`` is False for deleted nodes.
    """

    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    present: np.ndarray = None
    num_classes: int = None
    name: str = field(default="graph")

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise GraphIntegrityError("features must be a 2-d array")
        n = x.shape[0]
        y = np.asarray(self.labels, dtype=np.int64)
        if y.shape != (n,):
            raise GraphIntegrityError(f"{y.shape[0]} labels for {n} feature rows")
        present = np.ones(n, bool) if self.present is None else np.asarray(self.present, bool)
        masks = [np.asarray(m, bool) for m in (self.train_mask, self.val_mask, self.test_mask)]
        for nm, m in zip(MASK_NAMES, masks):
            if m.shape != (n,):
                raise GraphIntegrityError(f"{nm} mask has shape {m.shape}, expected ({n},)")
        if present.shape != (n,):
            raise GraphIntegrityError("present flag has wrong shape")
        if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
            raise GraphIntegrityError("train/val/test masks overlap")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            if (e[:, 0] >= e[:, 1]).any():
                raise GraphIntegrityError("edges must be normalized with u < v (no self-loops)")
            if e.min() < 0 or e.max() >= n:
                raise GraphIntegrityError("edge endpoint outside node range")
            if not present[e].all():
                raise GraphIntegrityError("edge endpoint refers to an absent node")
            if len(np.unique(e, axis=0)) != len(e):
                raise GraphIntegrityError("duplicate edges")
        if not np.isfinite(x).all():
            raise GraphIntegrityError("non-finite feature values")
        c = self.num_classes
        if c is None:
            c = int(y.max()) + 1 if n else 0
        if n and (y.min() < 0 or y.max() >= c):
            raise GraphIntegrityError(f"labels must lie in [0, {c})")

        set_ = object.__setattr__
        set_(self, "features", _frozen(x))
        set_(self, "labels", _frozen(y))
        set_(self, "edges", _frozen(e))
        set_(self, "present", _frozen(present))
        set_(self, "num_classes", int(c))
        for nm, m in zip(MASK_NAMES, masks):
            set_(self, f"{nm}_mask", _frozen(m))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def node_ids(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def present_ids(self) -> np.ndarray:
        return np.flatnonzero(self.present)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_set(self) -> EdgeSet:
        return as_edge_set(self.edges.tolist())

    @cached_property
    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges.tolist():
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def mask(self, name: str) -> np.ndarray:
        if name not in MASK_NAMES:
            raise ValueError(f"unknown mask {name!r}")
        return getattr(self, f"{name}_mask")

    def replace(self, **changes) -> "Graph":
        fields = dict(
            features=self.features, labels=self.labels, edges=self.edges,
            train_mask=self.train_mask, val_mask=self.val_mask, test_mask=self.test_mask,
            present=self.present, num_classes=self.num_classes, name=self.name,
        )
        fields.update(changes)
        return Graph(**fields)


@dataclass(frozen=True)
class ForgetSet:
    node_ids: frozenset
    seed: int | None = None
    fraction: float | None = None

    def __len__(self):
        return len(self.node_ids)

    def __iter__(self):
        return iter(sorted(self.node_ids))

    def as_array(self) -> np.ndarray:
        return np.array(sorted(self.node_ids), dtype=np.int64)


# ---------------------------------------------------------------- loading


def _read_edge_list(path: Path) -> list[tuple[int, int]]:
    pairs = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise GraphParseError(f"{path.name}:{lineno}: expected 'u v', got {s!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphParseError(f"{path.name}:{lineno}: non-integer node id in {s!r}") from None
    return pairs


def _read_features(path: Path) -> np.ndarray:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                rows.append([float(t) for t in s.split(",")])
            except ValueError:
                raise GraphParseError(f"{path.name}:{lineno}: bad feature row") from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphIntegrityError(
                    f"{path.name}:{lineno}: {len(rows[-1])} features, expected {len(rows[0])}"
                )
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def _read_tokens(path: Path) -> list[str]:
    with path.open() as fh:
        return [line.strip() for line in fh if line.strip()]


def load_edge_list(directory: str | Path, name: str | None = None) -> Graph:
    """Load a graph from a directory holding the plain-text layout.

    Expected files: ``edges.txt`` (``u v`` per line), ``features.csv``
    (one comma-separated row per node), ``labels.txt`` (one integer per line)
    and optionally ``masks.txt`` (``train``/``val``/``test``/``none`` per line).
    Directed pairs are symmetrized and duplicates dropped.
    """
    d = Path(directory)
    x = _read_features(d / "features.csv")
    n = x.shape[0]
    label_tok = _read_tokens(d / "labels.txt")
    try:
        y = np.array([int(t) for t in label_tok], dtype=np.int64)
    except ValueError:
        raise GraphParseError("labels.txt: non-integer label") from None
    if len(y) != n:
        raise GraphIntegrityError(f"{len(y)} labels for {n} feature rows")
    masks = {m: np.zeros(n, bool) for m in MASK_NAMES}
    mpath = d / "masks.txt"
    if mpath.exists():
        toks = _read_tokens(mpath)
        if len(toks) != n:
            raise GraphIntegrityError(f"{len(toks)} mask rows for {n} nodes")
        for i, t in enumerate(toks):
            if t in masks:
                masks[t][i] = True
            elif t != "none":
                raise GraphParseError(f"masks.txt:{i + 1}: unknown split {t!r}")
    pairs = _read_edge_list(d / "edges.txt")
    for u, v in pairs:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphIntegrityError(f"dangling edge ({u}, {v}) for {n} nodes")
    return Graph(
        features=x, labels=y, edges=normalize_edges(pairs),
        train_mask=masks["train"], val_mask=masks["val"], test_mask=masks["test"],
        name=name or d.name,
    )


def _planetoid_obj(path: Path):
    with path.open("rb") as fh:
        # Written by Python 2; latin1 keeps numpy buffers intact.
        return pickle.load(fh, encoding="latin1")


def _dense(m) -> np.ndarray:
    if hasattr(m, "toarray"):
        m = m.toarray()
    return np.asarray(m, dtype=np.float64)


def load_planetoid(directory: str | Path, dataset: str) -> Graph:
    """Read the public Planetoid ``ind.<dataset>.*`` files.

    Uses the standard fixed split: the first ``len(y)`` nodes for training,
    the next 500 for validation and ``test.index`` for testing. Test indices
    missing from the file (Citeseer) become zero-feature nodes.
    """
    d = Path(directory)
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        p = d / f"ind.{dataset}.{key}"
        if not p.exists():
            raise FileNotFoundError(p)
        parts[key] = _planetoid_obj(p)
    test_idx = []
    with (d / f"ind.{dataset}.test.index").open() as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    test_idx.append(int(line))
                except ValueError:
                    raise GraphParseError(f"ind.{dataset}.test.index:{lineno}: bad index") from None
    test_idx = np.array(test_idx, dtype=np.int64)
    tx, ty = _dense(parts["tx"]), _dense(parts["ty"])
    allx, ally = _dense(parts["allx"]), _dense(parts["ally"])
    if len(tx) != len(test_idx) or len(ty) != len(test_idx):
        raise GraphIntegrityError("test features/labels do not match test.index")
    if allx.shape[1] != tx.shape[1]:
        raise GraphIntegrityError("feature dimension mismatch between allx and tx")

    # Row i of tx/ty belongs to node test_idx[i]; gaps in the test range
    # (isolated Citeseer nodes) stay as zero rows.
    n = max(len(allx), int(test_idx.max()) + 1)
    x = np.zeros((n, allx.shape[1]))
    onehot = np.zeros((n, ally.shape[1]))
    x[: len(allx)] = allx
    onehot[: len(ally)] = ally
    x[test_idx] = tx
    onehot[test_idx] = ty

    labels = onehot.argmax(axis=1)
    graph = parts["graph"]
    pairs = []
    for u, nbrs in graph.items():
        for v in nbrs:
            u_, v_ = int(u), int(v)
            if u_ == v_:
                continue  # a few raw files carry self-citations
            if not (0 <= u_ < n and 0 <= v_ < n):
                raise GraphIntegrityError(f"dangling edge ({u_}, {v_}) for {n} nodes")
            pairs.append((u_, v_))
    n_train = len(_dense(parts["y"]))
    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    train[:n_train] = True
    val[n_train:n_train + 500] = True
    test[test_idx] = True
    val &= ~test
    return Graph(
        features=x, labels=labels, edges=normalize_edges(pairs),
        train_mask=train, val_mask=val, test_mask=test,
        num_classes=onehot.shape[1], name=dataset,
    )


def load_graph(path: str | Path, format: str = "edge-list") -> Graph:
    """Load a graph in ``edge-list`` or ``planetoid-raw`` format.

    For ``planetoid-raw`` the path is ``<dir>/<dataset>`` or a directory
    containing exactly one ``ind.<dataset>.graph`` file.
    """
    p = Path(path)
    if format == "edge-list":
        return load_edge_list(p)
    if format == "planetoid-raw":
        if p.is_dir():
            found = sorted(p.glob("ind.*.graph"))
            if len(found) != 1:
                raise GraphParseError(f"expected one ind.<name>.graph in {p}, found {len(found)}")
            return load_planetoid(p, found[0].name.split(".")[1])
        return load_planetoid(p.parent, p.name)
    raise ValueError(f"unknown graph format {format!r}")


# ------------------------------------------------------------ generation


def generate_sbm(
    blocks: list[int],
    p_in: float,
    p_out: float,
    d: int,
    seed: int,
    noise: float = 0.3,
    split: tuple[float, float] = (0.6, 0.2),
) -> Graph:
    """Stochastic block model with block-indicator features.

    Feature column ``b`` (for ``b < d``) is 1 on block ``b``; every entry then
    gets Gaussian noise of scale ``noise``. Labels are block indices. Nodes
    are split into train/val/test at the fractions in ``split`` (rest test).
    """
    if not blocks:
        raise ValueError("blocks must be a non-empty list of sizes")
    if any(b < 1 for b in blocks):
        raise ValueError("block sizes must be >= 1")
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise ValueError("p_in and p_out must lie in [0, 1]")
    if d < 1:
        raise ValueError("feature dimension must be >= 1")
    labels = np.repeat(np.arange(len(blocks)), blocks)
    n = len(labels)
    rng_e = rng_for(seed, "sbm-edges")
    rng_x = rng_for(seed, "sbm-features")
    rng_s = rng_for(seed, "sbm-split")

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng_e.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    x = np.zeros((n, d))
    cols = labels < d
    x[np.flatnonzero(cols), labels[cols]] = 1.0
    x += noise * rng_x.standard_normal((n, d))

    perm = rng_s.permutation(n)
    n_tr = int(math.floor(split[0] * n + 0.5))
    n_va = int(math.floor(split[1] * n + 0.5))
    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    train[perm[:n_tr]] = True
    val[perm[n_tr:n_tr + n_va]] = True
    test[perm[n_tr + n_va:]] = True
    return Graph(
        features=x, labels=labels, edges=edges.astype(np.int64),
        train_mask=train, val_mask=val, test_mask=test,
        num_classes=len(blocks), name=f"sbm{n}",
    )


# -------------------------------------------------------------- deletion


def sample_forget_set(g: Graph, fraction: float, seed: int) -> ForgetSet:
    """Sample ``round(fraction * n)`` present nodes uniformly without replacement."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    pool = g.present_ids
    m = int(math.floor(fraction * len(pool) + 0.5))
    if m < 1:
        raise ValueError(f"graph with {len(pool)} nodes is too small for fraction {fraction}")
    chosen = rng_for(seed, "forget").choice(pool, size=m, replace=False)
    return ForgetSet(frozenset(int(v) for v in chosen), seed=seed, fraction=fraction)


def remove_nodes(g: Graph, f: ForgetSet | Iterable[int]) -> Graph:
    """Mark the forget-set nodes absent and drop their incident edges."""
    ids = f.as_array() if isinstance(f, ForgetSet) else np.array(sorted(set(f)), dtype=np.int64)
    if len(ids) == 0:
        return g
    if ids.min() < 0 or ids.max() >= g.n:
        raise ValueError("forget set refers to unknown node ids")
    if not g.present[ids].all():
        gone = ids[~g.present[ids]]
        raise ValueError(f"node {int(gone[0])} is already absent")
    present = g.present.copy()
    present[ids] = False
    e = g.edges
    keep = present[e[:, 0]] & present[e[:, 1]] if len(e) else np.zeros(0, bool)
    return g.replace(present=present, edges=e[keep])


# -------------------------------------------------------- neighbourhoods


def hop_ball(g: Graph, center: int, k: int) -> set[int]:
    """Present nodes within undirected hop distance ``k`` of ``center``."""
    if not (0 <= center < g.n) or not g.present[center]:
        raise ValueError(f"center {center} is not a present node")
    if k < 0:
        raise ValueError("k must be >= 0")
    adj = g.neighbors
    seen = {center}
    frontier = deque([(center, 0)])
    while frontier:
        u, dist = frontier.popleft()
        if dist == k:
            continue
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                frontier.append((v, dist + 1))
    return seen


def ego_network(g: Graph, center: int, k: int) -> EdgeSet:
    """Edges of the subgraph induced by the ``k``-hop ball around ``center``."""
    ball = hop_ball(g, center, k)
    adj = g.neighbors
    out = set()
    for u in ball:
        for v in adj[u]:
            if u < v and v in ball:
                out.add((u, v))
    return frozenset(out)


def proxy_graph(g: Graph, f: ForgetSet | Iterable[int], k: int) -> EdgeSet:
    """Union of the ``k``-hop ego networks around the forget set.

    Centers that are absent from ``g`` (already deleted) contribute nothing.
    """
    if k < 1:
        raise ValueError("k must be >= 1 for a proxy graph")
    out: set[Edge] = set()
    for v in sorted(f.node_ids if isinstance(f, ForgetSet) else f):
        if 0 <= v < g.n and g.present[v]:
            out |= ego_network(g, v, k)
    return frozenset(out)


def edge_symmetric_difference(e1: Iterable[Edge], e2: Iterable[Edge]) -> int:
    """Size of the symmetric difference of two normalized edge sets."""
    return len(frozenset(e1) ^ frozenset(e2))
