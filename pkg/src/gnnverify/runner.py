"""Experiment grid: dataset x backbone x method x seed.

For each ``(backbone, seed)`` one pre-unlearning model is trained and one
forget set sampled; every method at that seed starts from the same model and
the same forget set. Cells are written under ``out/<dataset>/<backbone>/
<method>/seed<seed>/`` and the grid summary under ``out/``.
"""

from __future__ import annotations

import json
import logging
import random
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PlanError, VerifierError
from .explain import Snapshot, export_snapshot, take_snapshot
from .gnn import ModelConfig, ModelParams, train
from .graph import ForgetSet, Graph, generate_sbm, load_graph, sample_forget_set
from .metrics import RECORD_KEYS, MetricVector, compute_all
from .unlearning import UnlearningOutcome, available, run_strategy

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1001, 1002, 1003)
LARGE_GRAPH_NODES = 30_000
SBM_DEFAULTS = {"blocks": "100+100", "p_in": 0.1, "p_out": 0.01, "d": 16, "seed": 0, "noise": 0.5}
METRIC_COLUMNS = (
    ("RA_pre (%)", "ra_pre_pct"),
    ("RA_post (%)", "ra_post_pct"),
    ("HS", "hs"),
    ("ESD", "esd"),
    ("GEDΔ", "ged_delta"),
    ("GRS", "grs"),
)
MI_COLUMNS = (("MI AUC pre", "mi_auc_pre"), ("MI AUC post", "mi_auc_post"))


class RunError(VerifierError):
    pass


def parse_value(text: str):
    """Best-effort literal: int, then float, then bool, else the string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_sbm_spec(spec: str) -> dict:
    """``sbm:blocks=100+100,p_in=0.1,p_out=0.01,d=16,seed=0,noise=0.5``"""
    body = spec[len("sbm:"):] if spec.startswith("sbm:") else spec
    out = dict(SBM_DEFAULTS)
    for item in filter(None, body.split(",")):
        if "=" not in item:
            raise PlanError(f"bad sbm field {item!r}; expected key=value")
        k, v = item.split("=", 1)
        if k not in SBM_DEFAULTS:
            raise PlanError(f"unknown sbm field {k!r}")
        out[k] = v
    try:
        return {
            "blocks": [int(b) for b in str(out["blocks"]).split("+")],
            "p_in": float(out["p_in"]),
            "p_out": float(out["p_out"]),
            "d": int(out["d"]),
            "seed": int(out["seed"]),
            "noise": float(out["noise"]),
        }
    except ValueError as exc:
        raise PlanError(f"bad sbm spec {spec!r}: {exc}") from None


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: str
    format: str = "edge-list"
    backbones: tuple[str, ...] = ("GCN", "GAT")
    methods: tuple[str, ...] = ("retrain", "local-finetune", "noop")
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    forget_frac: float = 0.05
    k: int = 2
    out: Path | None = None
    method_args: tuple[str, ...] = ()
    model: ModelConfig = field(default_factory=ModelConfig)
    surrogate_depth: int = 3
    allow_large: bool = False

    def __post_init__(self):
        object.__setattr__(self, "backbones", tuple(b.upper() for b in self.backbones))
        object.__setattr__(self, "methods", tuple(m.strip().lower().replace("_", "-") for m in self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "method_args", tuple(self.method_args))
        if self.out is not None:
            object.__setattr__(self, "out", Path(self.out))

    def validate(self) -> None:
        if not self.backbones:
            raise PlanError("at least one backbone is required")
        for b in self.backbones:
            if b not in ("GCN", "GAT"):
                raise PlanError(f"unknown backbone {b!r}")
        if not self.methods:
            raise PlanError("at least one method is required")
        unknown = [m for m in self.methods if m not in available()]
        if unknown:
            raise PlanError(f"unknown method(s) {unknown}; available: {', '.join(available())}")
        if not self.seeds:
            raise PlanError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise PlanError("seeds must be non-negative")
        if not 0 < self.forget_frac < 1:
            raise PlanError("forget fraction must lie in (0, 1)")
        if self.k < 1:
            raise PlanError("k must be >= 1")
        if self.dataset.startswith("sbm:"):
            parse_sbm_spec(self.dataset)
        elif self.format not in ("edge-list", "planetoid-raw"):
            raise PlanError(f"unknown format {self.format!r}")
        self.strategy_kwargs(self.methods[0])

    def strategy_kwargs(self, method: str) -> dict:
        """``key=value`` applies to every method, ``method.key=value`` to one."""
        out = {}
        for item in self.method_args:
            if "=" not in item:
                raise PlanError(f"bad --method-arg {item!r}; expected key=value")
            key, value = item.split("=", 1)
            if "." in key:
                target, key = key.split(".", 1)
                if target.replace("_", "-") != method:
                    continue
            out[key] = parse_value(value)
        return out

    @property
    def dataset_name(self) -> str:
        if self.dataset.startswith("sbm:"):
            s = parse_sbm_spec(self.dataset)
            return f"sbm{sum(s['blocks'])}"
        return Path(self.dataset).name

    def echo(self) -> dict:
        return {
            "dataset": self.dataset,
            "format": self.format,
            "backbones": list(self.backbones),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "forget_frac": self.forget_frac,
            "k": self.k,
            "method_args": list(self.method_args),
            "model": {k: v for k, v in self.model.as_dict().items() if k not in ("backbone", "seed")},
            "surrogate_depth": self.surrogate_depth,
            "allow_large": self.allow_large,
            "nonmember_pool": "test-mask",
            "saliency_batch": "train-mask",
        }


def load_dataset(plan: ExperimentPlan) -> Graph:
    if plan.dataset.startswith("sbm:"):
        s = parse_sbm_spec(plan.dataset)
        g = generate_sbm(s["blocks"], s["p_in"], s["p_out"], s["d"], s["seed"], noise=s["noise"])
    else:
        g = load_graph(plan.dataset, plan.format)
    if g.n > LARGE_GRAPH_NODES:
        msg = f"{g.n} nodes exceeds the dense-engine desk limit of {LARGE_GRAPH_NODES}"
        if not plan.allow_large:
            raise PlanError(msg + "; pass allow_large to proceed")
        warnings.warn(msg, ResourceWarning, stacklevel=2)
    return g


@dataclass
class PreContext:
    graph: Graph
    config: ModelConfig
    params: ModelParams
    forget: ForgetSet
    snapshot: Snapshot
    heldout: np.ndarray


def prepare(plan: ExperimentPlan, g: Graph, backbone: str, seed: int) -> PreContext:
    config = plan.model.replace(backbone=backbone, seed=seed)
    params = train(g, config)
    forget = sample_forget_set(g, plan.forget_frac, seed)
    heldout = np.flatnonzero(g.test_mask)
    snap = take_snapshot(params, g, config, forget, plan.k, heldout,
                         depth=plan.surrogate_depth, tree_seed=seed, label="pre")
    return PreContext(g, config, params, forget, snap, heldout)


@dataclass
class CellResult:
    dataset: str
    backbone: str
    method: str
    seed: int
    metrics: MetricVector | None = None
    error: str | None = None
    wall_time: float = 0.0
    metadata: dict = field(default_factory=dict)
    forget: ForgetSet | None = None
    outcome: UnlearningOutcome | None = None
    post: Snapshot | None = None

    @property
    def key(self) -> tuple:
        return (self.dataset, self.backbone, self.method, self.seed)

    @property
    def ok(self) -> bool:
        return self.error is None

    def record(self) -> dict:
        rec = {"dataset": self.dataset, "backbone": self.backbone, "method": self.method,
               "seed": self.seed, "status": "ok" if self.ok else "failed"}
        if self.ok:
            rec.update(self.metrics.as_record())
            rec["flags"] = ";".join(self.metrics.flags)
        else:
            rec.update({k: None for k in RECORD_KEYS})
            rec["error"] = self.error
        for k in sorted(self.metadata):
            rec[f"meta_{k}"] = self.metadata[k]
        return rec


def _cell_dir(plan: ExperimentPlan, backbone: str, method: str, seed: int) -> Path | None:
    if plan.out is None:
        return None
    return plan.out / plan.dataset_name / backbone.lower() / method / f"seed{seed}"


def run_cell(plan: ExperimentPlan, backbone: str, method: str, seed: int,
             context: PreContext | None = None, graph: Graph | None = None) -> CellResult:
    """Run one grid cell; failures are captured in the result, never raised."""
    res = CellResult(plan.dataset_name, backbone.upper(), method, int(seed))
    t0 = time.perf_counter()
    try:
        if context is None:
            context = prepare(plan, graph if graph is not None else load_dataset(plan), res.backbone, seed)
        kwargs = plan.strategy_kwargs(method)
        outcome = run_strategy(method, context.graph, context.forget, context.config, context.params, **kwargs)
        post = take_snapshot(outcome.params_post, outcome.graph_post, context.config, context.forget,
                             plan.k, context.heldout, depth=plan.surrogate_depth, tree_seed=seed, label="post")
        res.metrics = compute_all(context.snapshot, post, context.forget, outcome.graph_post, context.graph)
        res.metadata = dict(outcome.strategy_metadata)
        res.metadata.update({f"arg_{k}": v for k, v in kwargs.items()})
        res.forget, res.outcome, res.post = context.forget, outcome, post
        d = _cell_dir(plan, res.backbone, method, seed)
        if d is not None:
            export_snapshot(context.snapshot, d / "pre")
            export_snapshot(post, d / "post")
            (d / "forget_set.txt").write_text("".join(f"{v}\n" for v in context.forget))
            (d / "metrics.json").write_text(json.dumps(res.record(), indent=2, sort_keys=True) + "\n")
    except Exception as exc:  # a failing cell must not stop the grid
        log.warning("cell %s failed: %s", res.key, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_time = time.perf_counter() - t0
    return res


@dataclass
class VerificationReport:
    cells: list[CellResult]
    aggregates: list[dict]
    config: dict
    version: str = __version__

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def cell(self, backbone: str, method: str, seed: int) -> CellResult:
        for c in self.cells:
            if (c.backbone, c.method, c.seed) == (backbone.upper(), method, seed):
                return c
        raise KeyError((backbone, method, seed))


def aggregate(cells: list[CellResult]) -> list[dict]:
    """Mean and sample std (n-1; 0 for one seed) per dataset/backbone/method.

    Groups keep the order in which their first cell appears.
    """
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        groups.setdefault((c.dataset, c.backbone, c.method), []).append(c)
    rows = []
    for key in groups:
        ok = [c for c in groups[key] if c.ok]
        row = {"dataset": key[0], "backbone": key[1], "method": key[2],
               "n_seeds": len(ok), "n_failed": len(groups[key]) - len(ok)}
        for k in RECORD_KEYS:
            vals = np.array([c.metrics.as_record()[k] for c in ok], dtype=np.float64)
            if len(vals) == 0:
                row[f"{k}_mean"] = row[f"{k}_std"] = None
                continue
            row[f"{k}_mean"] = float(vals.mean())
            row[f"{k}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def run_plan(plan: ExperimentPlan, workers: int = 1, shuffle_seed: int | None = None,
             emit: bool = True) -> VerificationReport:
    """Execute the whole grid and (when ``plan.out`` is set) write the report.

    ``shuffle_seed`` permutes execution order; the report is sorted by cell
    key so its content does not depend on it.
    """
    plan.validate()
    g = load_dataset(plan)
    groups = [(b, s) for b in plan.backbones for s in plan.seeds]
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(groups)

    def run_group(bs):
        b, s = bs
        methods = list(plan.methods)
        if shuffle_seed is not None:
            random.Random(shuffle_seed + s).shuffle(methods)
        try:
            ctx = prepare(plan, g, b, s)
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
            return [CellResult(plan.dataset_name, b, m, s, error=err) for m in methods]
        return [run_cell(plan, b, m, s, context=ctx) for m in methods]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = [c for batch in pool.map(run_group, groups) for c in batch]
    else:
        results = [c for bs in groups for c in run_group(bs)]

    order = {m: i for i, m in enumerate(plan.methods)}
    results.sort(key=lambda c: (c.dataset, plan.backbones.index(c.backbone), order[c.method], c.seed))
    report = VerificationReport(results, aggregate(results), plan.echo())
    if emit and plan.out is not None:
        emit_report(report, plan.out)
    if not any(c.ok for c in results):
        raise RunError("every cell failed: " + results[0].error)
    return report


# ------------------------------------------------------------------ output


def _fmt(v, spec: str) -> str:
    return "nan" if v is None else format(v, spec)


def format_table(report: VerificationReport, columns=METRIC_COLUMNS) -> str:
    """Aligned text table of ``mean±std`` per dataset/backbone/method."""
    head = ["Dataset", "Backbone", "Method"] + [c for c, _ in columns]
    rows = [head]
    for a in report.aggregates:
        row = [a["dataset"], a["backbone"], a["method"]]
        for _, k in columns:
            spec = ".2f" if k.startswith("ra_") or k == "grs" else ".0f" if k == "ged_delta" else ".4f"
            row.append(f"{_fmt(a[f'{k}_mean'], spec)}±{_fmt(a[f'{k}_std'], spec)}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) if i < 3 else cell.rjust(w)
                       for i, (cell, w) in enumerate(zip(r, widths))).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def emit_report(report: VerificationReport, out: str | Path,
                formats=("structured-record", "table-text")) -> list[Path]:
    """Write report files; all content is deterministic except ``timings.json``.

    ``cells.jsonl``     one flat record per cell
    ``aggregate.jsonl`` one record per dataset/backbone/method
    ``config.json``     plan echo and tool version
    ``table.txt``       RA_pre, RA_post, HS, ESD, GED delta, GRS as mean±std
    ``mi_table.txt``    membership-inference AUC before and after
    ``timings.json``    wall-clock seconds per cell
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "structured-record" in formats:
        p = out / "cells.jsonl"
        p.write_text("".join(_dumps(c.record()) + "\n" for c in report.cells))
        written.append(p)
        p = out / "aggregate.jsonl"
        p.write_text("".join(_dumps(a) + "\n" for a in report.aggregates))
        written.append(p)
        p = out / "config.json"
        p.write_text(json.dumps({"config": report.config, "version": report.version},
                                indent=2, sort_keys=True) + "\n")
        written.append(p)
    if "table-text" in formats:
        p = out / "table.txt"
        p.write_text(format_table(report))
        written.append(p)
        p = out / "mi_table.txt"
        p.write_text(format_table(report, MI_COLUMNS))
        written.append(p)
    timings = {"/".join(map(str, c.key)): c.wall_time for c in report.cells}
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return written


def read_records(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def metrics_from_record(rec: dict) -> MetricVector:
    flags = [f for f in rec.get("flags", "").split(";") if f]
    return MetricVector.from_record(rec, flags)
