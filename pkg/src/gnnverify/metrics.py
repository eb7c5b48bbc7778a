"""Forgetting metrics comparing a pre-unlearning and a post-unlearning snapshot."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import SnapshotMismatchError
from .explain import AttributionMap, RuleSet, Snapshot
from .gnn import LossReport
from .graph import ForgetSet, Graph, edge_symmetric_difference

# Serialized key order; fixed so emitted records diff cleanly.
RECORD_KEYS = (
    "ra_pre_pct", "ra_post_pct", "hs", "esd", "ged_delta", "grs", "mi_auc_pre", "mi_auc_post",
)


def _values(att) -> np.ndarray:
    return att.values if isinstance(att, AttributionMap) else np.asarray(att, dtype=np.float64)


def _ids(f) -> np.ndarray:
    ids = f.node_ids if isinstance(f, ForgetSet) else f
    return np.array(sorted(int(v) for v in ids), dtype=np.int64)


def residual_attribution(att, f, surviving, flags: list | None = None) -> float:
    """Percentage of total attribution over ``surviving`` carried by ``f``.

    A zero denominator returns 0.0 and appends ``"ra-degenerate"`` to ``flags``.
    """
    a = _values(att)
    num = a[_ids(f)].sum()
    den = a[_ids(surviving)].sum()
    if den == 0:
        if flags is not None:
            flags.append("ra-degenerate")
        return 0.0
    return float(100.0 * num / den)


def heatmap_shift(pre, post, n: int | None = None) -> float:
    """Mean absolute per-node attribution change over the original node set."""
    a, b = _values(pre), _values(post)
    if a.shape != b.shape:
        raise ValueError(f"attribution domains differ: {a.shape} vs {b.shape}")
    if n is None:
        n = len(a)
    if n != len(a):
        raise ValueError(f"n={n} does not match attribution length {len(a)}")
    return float(np.abs(a - b).sum() / n)


def esd(pre, post, f) -> float:
    """Mean absolute attribution change restricted to the forget set."""
    ids = _ids(f)
    if len(ids) == 0:
        raise ValueError("forget set is empty")
    a, b = _values(pre), _values(post)
    if a.shape != b.shape:
        raise ValueError(f"attribution domains differ: {a.shape} vs {b.shape}")
    return float(np.abs(a[ids] - b[ids]).sum() / len(ids))


def ged_delta(proxy_pre, proxy_post) -> int:
    return edge_symmetric_difference(proxy_pre, proxy_post)


def grs(rules_pre: RuleSet, rules_post: RuleSet) -> int:
    """Rule-count difference; negative when the post tree has more leaves."""
    return len(rules_pre) - len(rules_post)


def _losses(x) -> np.ndarray:
    return x.losses if isinstance(x, LossReport) else np.asarray(x, dtype=np.float64)


def mi_auc(member, nonmember) -> float:
    """ROC-AUC of the loss-threshold attack (score = -loss, members positive).

    Rank statistic with half credit for ties, counted exactly in integers.
    """
    m = -_losses(member)
    o = np.sort(-_losses(nonmember))
    if len(m) == 0 or len(o) == 0:
        raise ValueError("both loss pools must be non-empty")
    lo = np.searchsorted(o, m, side="left")
    hi = np.searchsorted(o, m, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return (wins + 0.5 * ties) / (len(m) * len(o))


@dataclass
class MetricVector:
    ra_pre: float
    ra_post: float
    hs: float
    esd: float
    ged_delta: int
    grs: int
    mi_auc_pre: float
    mi_auc_post: float
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("ra_pre", "ra_post"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.ged_delta < 0:
            raise ValueError("ged_delta must be >= 0")
        for name in ("mi_auc_pre", "mi_auc_post"):
            v = getattr(self, name)
            if not (np.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_record(self) -> dict:
        return {
            "ra_pre_pct": self.ra_pre,
            "ra_post_pct": self.ra_post,
            "hs": self.hs,
            "esd": self.esd,
            "ged_delta": self.ged_delta,
            "grs": self.grs,
            "mi_auc_pre": self.mi_auc_pre,
            "mi_auc_post": self.mi_auc_post,
        }

    @classmethod
    def from_record(cls, rec: dict, flags: Iterable[str] = ()) -> "MetricVector":
        return cls(
            ra_pre=float(rec["ra_pre_pct"]),
            ra_post=float(rec["ra_post_pct"]),
            hs=float(rec["hs"]),
            esd=float(rec["esd"]),
            ged_delta=int(rec["ged_delta"]),
            grs=int(rec["grs"]),
            mi_auc_pre=float(rec["mi_auc_pre"]),
            mi_auc_post=float(rec["mi_auc_post"]),
            flags=list(flags),
        )

    def same_values(self, other: "MetricVector") -> bool:
        a, b = asdict(self), asdict(other)
        a.pop("flags"), b.pop("flags")
        return a == b


def _auc_or_nan(snap: Snapshot, flags: list) -> float:
    if len(snap.member_losses) == 0 or len(snap.nonmember_losses) == 0:
        flags.append(f"mi-empty-pool-{snap.label}")
        return float("nan")
    return mi_auc(snap.member_losses, snap.nonmember_losses)


def compute_all(pre: Snapshot, post: Snapshot, f: ForgetSet, graph_post: Graph, graph_pre: Graph | None = None) -> MetricVector:
    """Fill every metric from two snapshots of the same run.

    RA before unlearning is taken over the nodes present in ``graph_pre``
    (all nodes when omitted); RA after over those present in ``graph_post``.
    """
    if pre.digest != post.digest:
        raise SnapshotMismatchError("snapshots were taken under different run configurations")
    flags: list[str] = []
    n = len(pre.attribution)
    surviving_pre = np.arange(n) if graph_pre is None else graph_pre.present_ids
    ra_pre = residual_attribution(pre.attribution, f, surviving_pre, flags)
    ra_post = residual_attribution(post.attribution, f, graph_post.present_ids, flags)
    if len(f):
        e = esd(pre.attribution, post.attribution, f)
    else:
        e = 0.0
        flags.append("empty-forget-set")
    return MetricVector(
        ra_pre=ra_pre,
        ra_post=ra_post,
        hs=heatmap_shift(pre.attribution, post.attribution, n),
        esd=e,
        ged_delta=ged_delta(pre.proxy, post.proxy),
        grs=grs(pre.rules, post.rules),
        mi_auc_pre=_auc_or_nan(pre, flags),
        mi_auc_post=_auc_or_nan(post, flags),
        flags=sorted(set(flags)),
    )
