"""Command line entry point: ``gnnverify verify ...``.

Exit status: 0 success, 1 one or more cells failed, 2 invalid plan.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import GraphIntegrityError, GraphParseError, PlanError
from .gnn import ModelConfig
from .runner import ExperimentPlan, RunError, run_plan

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnnverify", description="Explanation-based verification of GNN unlearning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run a dataset x backbone x method x seed grid")
    v.add_argument("--dataset", required=True, help="graph directory, planetoid prefix, or sbm:key=value,...")
    v.add_argument("--format", default="edge-list", choices=["edge-list", "planetoid-raw"])
    v.add_argument("--backbone", default="gcn,gat", help="comma-separated subset of gcn,gat")
    v.add_argument("--method", default="retrain,local-finetune,noop", help="comma-separated strategy names")
    v.add_argument("--seeds", default="1001,1002,1003")
    v.add_argument("--forget-frac", type=float, default=0.05)
    v.add_argument("--k", type=int, default=2, help="hop radius of the proxy graph")
    v.add_argument("--out", required=True, type=Path)
    v.add_argument("--method-arg", action="append", default=[], metavar="KEY=VALUE",
                   help="strategy hyperparameter; prefix with 'method.' to target one method")
    v.add_argument("--allow-large", action="store_true", help="permit graphs above 30k nodes")
    v.add_argument("--epochs", type=int, default=100)
    v.add_argument("--hidden", type=int, default=64)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("-v", "--verbose", action="store_true")
    return p


def plan_from_args(args) -> ExperimentPlan:
    try:
        seeds = tuple(int(s) for s in _csv(args.seeds))
    except ValueError:
        raise PlanError(f"seeds must be integers, got {args.seeds!r}") from None
    try:
        model = ModelConfig(epochs=args.epochs, hidden=args.hidden)
    except ValueError as exc:
        raise PlanError(str(exc)) from None
    plan = ExperimentPlan(
        dataset=args.dataset,
        format=args.format,
        backbones=tuple(_csv(args.backbone)),
        methods=tuple(_csv(args.method)),
        seeds=seeds,
        forget_frac=args.forget_frac,
        k=args.k,
        out=args.out,
        method_args=tuple(args.method_arg),
        model=model,
        allow_large=args.allow_large,
    )
    plan.validate()
    return plan


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        plan = plan_from_args(args)
        report = run_plan(plan, workers=args.workers)
    except (PlanError, GraphParseError, GraphIntegrityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    sys.stdout.write((plan.out / "table.txt").read_text())
    if report.failed:
        for c in report.failed:
            print(f"failed: {'/'.join(map(str, c.key))}: {c.error}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
