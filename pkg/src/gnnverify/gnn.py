"""Dense two-layer GCN / GAT with hand-written reverse-mode gradients.

Everything runs on the subgraph of present nodes. Public functions that
return per-node arrays use full-length rows indexed by node id, with zero
rows for absent nodes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import NumericError
from .graph import Graph
from .rng import rng_for

BACKBONES = ("GCN", "GAT")
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "GCN"
    hidden: int = 64
    layers: int = 2
    dropout: float = 0.5
    lr: float = 0.005
    epochs: int = 100
    seed: int = 0
    gat_heads: int = 1
    leaky_slope: float = 0.2

    def __post_init__(self):
        b = self.backbone.upper()
        if b not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        object.__setattr__(self, "backbone", b)
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.layers != 2:
            raise ValueError("only two-layer models are supported")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.gat_heads != 1:
            raise ValueError("only single-head attention is supported")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Named weight arrays: ``W1 b1 W2 b2`` plus ``att{1,2}_{src,dst}`` for GAT."""

    arrays: Mapping[str, np.ndarray]
    backbone: str
    seed: int = 0

    def __post_init__(self):
        frozen = {}
        for k, v in self.arrays.items():
            a = np.array(v, dtype=np.float64)
            if not np.isfinite(a).all():
                raise NumericError(f"parameter {k} has non-finite entries")
            a.setflags(write=False)
            frozen[k] = a
        object.__setattr__(self, "arrays", frozen)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    @property
    def names(self) -> list[str]:
        return list(self.arrays)

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(dict(arrays), self.backbone, self.seed)

    def equal(self, other: "ModelParams") -> bool:
        return (
            self.backbone == other.backbone
            and self.names == other.names
            and all(np.array_equal(self[k], other[k]) for k in self.names)
        )


@dataclass(frozen=True)
class LossReport:
    node_ids: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64)
        ls = np.asarray(self.losses, dtype=np.float64)
        if ids.shape != ls.shape:
            raise ValueError("node_ids and losses differ in length")
        if len(ls) and (not np.isfinite(ls).all() or ls.min() < 0):
            raise NumericError("losses must be finite and non-negative")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "losses", ls)

    def __len__(self):
        return len(self.losses)


# ------------------------------------------------------------- structure


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Symmetric ``D^-1/2 (A + I) D^-1/2`` over present nodes, in id order."""
    idx = g.present_ids
    pos = np.full(g.n, -1)
    pos[idx] = np.arange(len(idx))
    a = np.eye(len(idx))
    if len(g.edges):
        u, v = pos[g.edges[:, 0]], pos[g.edges[:, 1]]
        a[u, v] = 1.0
        a[v, u] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return dinv[:, None] * a * dinv[None, :]


def _neighbor_mask(g: Graph) -> np.ndarray:
    idx = g.present_ids
    pos = np.full(g.n, -1)
    pos[idx] = np.arange(len(idx))
    m = np.eye(len(idx), dtype=bool)
    if len(g.edges):
        u, v = pos[g.edges[:, 0]], pos[g.edges[:, 1]]
        m[u, v] = True
        m[v, u] = True
    return m


@dataclass
class _Structure:
    idx: np.ndarray
    adj: np.ndarray  # normalized adjacency (GCN) or neighbour-plus-self mask (GAT)

    @classmethod
    def of(cls, g: Graph, backbone: str) -> "_Structure":
        s = normalized_adjacency(g) if backbone == "GCN" else _neighbor_mask(g)
        return cls(g.present_ids, s)


# ----------------------------------------------------------------- layers


def _check(name: str, a: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {name}")
    return a


def _gcn_layer(x, w, b, a_norm, layer):
    xw = x @ w
    out = a_norm @ xw + b
    return _check(f"layer {layer}", out), (x, xw)


def _gcn_layer_back(dout, cache, w, a_norm):
    x, _ = cache
    dxw = a_norm.T @ dout
    return {"W": x.T @ dxw, "b": dout.sum(axis=0)}, dxw @ w.T


def _gat_layer(x, w, a_src, a_dst, b, mask, slope, layer):
    h = x @ w
    s = h @ a_src
    t = h @ a_dst
    e = s[:, None] + t[None, :]
    pos = e > 0
    lk = np.where(pos, e, slope * e)
    lk = np.where(mask, lk, -np.inf)
    lk -= lk.max(axis=1, keepdims=True)
    p = np.exp(lk)
    p /= p.sum(axis=1, keepdims=True)
    out = p @ h + b
    return _check(f"layer {layer}", out), (x, h, p, pos)


def _gat_layer_back(dout, cache, w, a_src, a_dst, slope):
    x, h, p, pos = cache
    dp = dout @ h.T
    dh = p.T @ dout
    de = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    ds = np.where(pos, de, slope * de)
    ds_row = ds.sum(axis=1)
    ds_col = ds.sum(axis=0)
    dh += np.outer(ds_row, a_src) + np.outer(ds_col, a_dst)
    grads = {"W": x.T @ dh, "b": dout.sum(axis=0), "src": h.T @ ds_row, "dst": h.T @ ds_col}
    return grads, dh @ w.T


# ---------------------------------------------------------------- forward


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``p``, else ``1/(1-p)``."""
    if p == 0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


@np.errstate(over="ignore", invalid="ignore")  # non-finite results are raised by _check
def _forward_core(params: ModelParams, x: np.ndarray, st: _Structure, config: ModelConfig, drop):
    slope = config.leaky_slope
    if config.backbone == "GCN":
        z1, c1 = _gcn_layer(x, params["W1"], params["b1"], st.adj, 1)
    else:
        z1, c1 = _gat_layer(x, params["W1"], params["att1_src"], params["att1_dst"],
                            params["b1"], st.adj, slope, 1)
    h1 = np.maximum(z1, 0.0)
    h1d = h1 if drop is None else h1 * drop
    if config.backbone == "GCN":
        z2, c2 = _gcn_layer(h1d, params["W2"], params["b2"], st.adj, 2)
    else:
        z2, c2 = _gat_layer(h1d, params["W2"], params["att2_src"], params["att2_dst"],
                            params["b2"], st.adj, slope, 2)
    return z2, (c1, z1, drop, c2)


def _backward_core(params, st, config, cache, dlogits, need_input=False):
    c1, z1, drop, c2 = cache
    slope = config.leaky_slope
    grads = {}
    if config.backbone == "GCN":
        g2, dh1d = _gcn_layer_back(dlogits, c2, params["W2"], st.adj)
    else:
        g2, dh1d = _gat_layer_back(dlogits, c2, params["W2"], params["att2_src"],
                                   params["att2_dst"], slope)
        grads["att2_src"], grads["att2_dst"] = g2["src"], g2["dst"]
    grads["W2"], grads["b2"] = g2["W"], g2["b"]
    dh1 = dh1d if drop is None else dh1d * drop
    dz1 = dh1 * (z1 > 0)
    if config.backbone == "GCN":
        g1, dx = _gcn_layer_back(dz1, c1, params["W1"], st.adj)
    else:
        g1, dx = _gat_layer_back(dz1, c1, params["W1"], params["att1_src"],
                                 params["att1_dst"], slope)
        grads["att1_src"], grads["att1_dst"] = g1["src"], g1["dst"]
    grads["W1"], grads["b1"] = g1["W"], g1["b"]
    return grads, (dx if need_input else None)


def _check_dims(params: ModelParams, g: Graph, config: ModelConfig):
    if params.backbone != config.backbone:
        raise ValueError(f"parameters are for {params.backbone}, config asks for {config.backbone}")
    if params["W1"].shape[0] != g.d:
        raise ValueError(f"model expects {params['W1'].shape[0]} features, graph has {g.d}")


def _features(g: Graph, st: _Structure, x: np.ndarray | None = None) -> np.ndarray:
    return (g.features if x is None else x)[st.idx]


def forward(
    params: ModelParams,
    g: Graph,
    config: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    drop: np.ndarray | None = None,
) -> np.ndarray:
    """Class logits, shape ``(n, C)``; rows of absent nodes are zero.

    In ``train`` mode a dropout multiplier for the hidden layer is drawn from
    ``rng`` unless ``drop`` (shape ``(n_present, hidden)``) is supplied.
    """
    _check_dims(params, g, config)
    st = _Structure.of(g, config.backbone)
    drop = _resolve_drop(mode, rng, drop, (len(st.idx), params["W1"].shape[1]), config)
    z, _ = _forward_core(params, _features(g, st), st, config, drop)
    out = np.zeros((g.n, z.shape[1]))
    out[st.idx] = z
    return out


def _resolve_drop(mode, rng, drop, shape, config):
    if mode == "eval":
        return None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if drop is not None:
        return drop
    if rng is None:
        raise ValueError("train mode needs a dropout rng or an explicit mask")
    return dropout_mask(rng, shape, config.dropout)


def attention_matrices(params: ModelParams, g: Graph, config: ModelConfig) -> list[np.ndarray]:
    """Row-stochastic attention matrices of both GAT layers (eval mode)."""
    if config.backbone != "GAT":
        raise ValueError("attention is only defined for GAT")
    _check_dims(params, g, config)
    st = _Structure.of(g, "GAT")
    _, (c1, _, _, c2) = _forward_core(params, _features(g, st), st, config, None)
    return [c1[2], c2[2]]


# ------------------------------------------------------------------- loss


def _node_positions(g: Graph, st: _Structure, node_set) -> np.ndarray:
    ids = np.asarray(sorted(set(int(v) for v in node_set)), dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("node set is empty")
    if ids.min() < 0 or ids.max() >= g.n or not g.present[ids].all():
        raise ValueError("node set contains absent or unknown nodes")
    pos = np.full(g.n, -1)
    pos[st.idx] = np.arange(len(st.idx))
    return pos[ids]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def _ce_and_grad(z, rows, y):
    logp = _log_softmax(z[rows])
    losses = -logp[np.arange(len(rows)), y]
    probs = np.exp(logp)
    probs[np.arange(len(rows)), y] -= 1.0
    dz = np.zeros_like(z)
    dz[rows] = probs / len(rows)
    return losses, dz


def loss_and_gradients(
    params: ModelParams,
    g: Graph,
    config: ModelConfig,
    node_set: Iterable[int],
    wrt: str = "parameters",
    mode: str | None = None,
    rng: np.random.Generator | None = None,
    drop: np.ndarray | None = None,
    features: np.ndarray | None = None,
):
    """Mean cross-entropy over ``node_set`` and its gradient.

    ``wrt`` is ``parameters`` (dict of arrays), ``inputs`` (``(n, d)`` array,
    zero rows for absent nodes) or ``both`` (a tuple of the two). Input
    gradients default to eval mode so attributions never see dropout.
    ``features`` overrides ``g.features`` (used by finite-difference checks).
    """
    if wrt not in ("parameters", "inputs", "both"):
        raise ValueError(f"wrt must be parameters, inputs or both, got {wrt!r}")
    _check_dims(params, g, config)
    if mode is None:
        mode = "eval" if wrt == "inputs" else "train"
    st = _Structure.of(g, config.backbone)
    rows = _node_positions(g, st, node_set)
    y = g.labels[st.idx][rows]
    drop = _resolve_drop(mode, rng, drop, (len(st.idx), params["W1"].shape[1]), config)
    z, cache = _forward_core(params, _features(g, st, features), st, config, drop)
    losses, dz = _ce_and_grad(z, rows, y)
    loss = float(losses.mean())
    grads, dx = _backward_core(params, st, config, cache, dz, need_input=wrt != "parameters")
    if dx is not None:
        full = np.zeros((g.n, g.d))
        full[st.idx] = dx
        dx = full
    if wrt == "parameters":
        return loss, grads
    if wrt == "inputs":
        return loss, dx
    return loss, (grads, dx)


def per_node_losses(params: ModelParams, g: Graph, config: ModelConfig, node_set) -> LossReport:
    """Eval-mode cross-entropy of each node in ``node_set``, sorted by id."""
    _check_dims(params, g, config)
    st = _Structure.of(g, config.backbone)
    ids = np.asarray(sorted(set(int(v) for v in node_set)), dtype=np.int64)
    if len(ids) == 0:
        return LossReport(ids, np.zeros(0))
    rows = _node_positions(g, st, ids)
    z, _ = _forward_core(params, _features(g, st), st, config, None)
    logp = _log_softmax(z[rows])
    return LossReport(ids, -logp[np.arange(len(rows)), g.labels[ids]])


def predict(params: ModelParams, g: Graph, config: ModelConfig) -> np.ndarray:
    """Argmax class per node; -1 for absent nodes."""
    z = forward(params, g, config, "eval")
    out = z.argmax(axis=1)
    out[~g.present] = -1
    return out


def accuracy(params: ModelParams, g: Graph, config: ModelConfig, split: str = "test") -> float:
    m = g.mask(split) & g.present
    if not m.any():
        return float("nan")
    return float((predict(params, g, config)[m] == g.labels[m]).mean())


# --------------------------------------------------------------- training


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(d: int, num_classes: int, config: ModelConfig, role: str = "init") -> ModelParams:
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``."""
    rng = rng_for(config.seed, role)
    h, c = config.hidden, num_classes
    arrays = {
        "W1": _glorot(rng, d, h, (d, h)),
        "b1": np.zeros(h),
        "W2": _glorot(rng, h, c, (h, c)),
        "b2": np.zeros(c),
    }
    if config.backbone == "GAT":
        arrays["att1_src"] = _glorot(rng, h, 1, (h,))
        arrays["att1_dst"] = _glorot(rng, h, 1, (h,))
        arrays["att2_src"] = _glorot(rng, c, 1, (c,))
        arrays["att2_dst"] = _glorot(rng, c, 1, (c,))
    return ModelParams(arrays, config.backbone, config.seed)


@dataclass
class Adam:
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, arrays: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in arrays.items():
            gk = grads[k]
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * gk
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * gk * gk
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def fit(
    params: ModelParams,
    g: Graph,
    config: ModelConfig,
    node_set,
    epochs: int,
    dropout_role: str = "dropout",
) -> ModelParams:
    """Full-batch Adam on the mean cross-entropy of ``node_set``."""
    _check_dims(params, g, config)
    if epochs == 0:
        return params
    st = _Structure.of(g, config.backbone)
    rows = _node_positions(g, st, node_set)
    y = g.labels[st.idx][rows]
    x = _features(g, st)
    rng = rng_for(config.seed, dropout_role)
    opt = Adam(config.lr)
    arrays = {k: np.array(v) for k, v in params.arrays.items()}
    shape = (len(st.idx), config.hidden)
    for epoch in range(epochs):
        drop = dropout_mask(rng, shape, config.dropout)
        try:
            z, cache = _forward_core(arrays, x, st, config, drop)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from None
        losses, dz = _ce_and_grad(z, rows, y)
        if not np.isfinite(losses).all():
            raise NumericError(f"training diverged at epoch {epoch}")
        grads, _ = _backward_core(arrays, st, config, cache, dz)
        arrays = opt.step(arrays, grads)
    return ModelParams(arrays, params.backbone, params.seed)


def train(g: Graph, config: ModelConfig, stream: str = "") -> ModelParams:
    """Train from a seeded Glorot init for exactly ``config.epochs`` steps.

    ``stream`` namespaces the init and dropout random streams, so two runs
    with the same seed but different streams start from unrelated weights.
    """
    nodes = np.flatnonzero(g.train_mask & g.present)
    if len(nodes) == 0:
        raise ValueError("train mask is empty")
    prefix = f"{stream}-" if stream else ""
    params = init_params(g.d, g.num_classes, config, role=prefix + "init")
    return fit(params, g, config, nodes, config.epochs, dropout_role=prefix + "dropout")


# ------------------------------------------------------------- checkpoint


def save_params(params: ModelParams, path: str | Path) -> None:
    """Write a ``.npz`` checkpoint (see README for the layout)."""
    header = {
        "format": "gnnverify-params",
        "version": CHECKPOINT_VERSION,
        "backbone": params.backbone,
        "seed": int(params.seed),
        "names": params.names,
        "shapes": {k: list(params[k].shape) for k in params.names},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)),
                 **{k: np.ascontiguousarray(params[k]) for k in params.names})


def load_params(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != "gnnverify-params":
            raise ValueError(f"{path} is not a parameter checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} is newer than supported")
        arrays = {}
        for k in header["names"]:
            a = z[k]
            if list(a.shape) != header["shapes"][k]:
                raise ValueError(f"shape mismatch for {k}")
            arrays[k] = a
    return ModelParams(arrays, header["backbone"], header["seed"])
