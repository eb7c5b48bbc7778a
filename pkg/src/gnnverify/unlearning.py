"""Unlearning strategies behind a name-keyed registry.

Every strategy is called as ``fn(g, f, config, pre_params, **kwargs)`` and
returns an :class:`UnlearningOutcome`. Three reference strategies cover the
complete / partial / ineffective range:

``retrain``
    delete the nodes and train a fresh model on what is left.
``local-finetune``
    delete the nodes and fine-tune the old model briefly on nearby train nodes.
``noop``
    leave the graph alone and take a few tiny gradient-ascent steps on the
    forget-set loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import RegistryError, StrategyError
from .gnn import ModelConfig, ModelParams, fit, loss_and_gradients, train
from .graph import ForgetSet, Graph, hop_ball, remove_nodes


@dataclass(frozen=True, eq=False)
class UnlearningOutcome:
    params_post: ModelParams
    graph_post: Graph
    strategy_name: str
    wall_time: float = 0.0
    strategy_metadata: dict = field(default_factory=dict)


Strategy = Callable[..., UnlearningOutcome]
_REGISTRY: dict[str, Strategy] = {}


def register(name: str, fn: Strategy | None = None, *, replace: bool = False):
    """Register ``fn`` under ``name``; usable as a decorator."""
    def deco(f):
        if name in _REGISTRY and not replace:
            raise RegistryError(f"strategy {name!r} is already registered")
        _REGISTRY[name] = f
        return f
    return deco(fn) if fn is not None else deco


def unregister(name: str) -> None:
    _REGISTRY.pop(name, None)


def available() -> list[str]:
    return sorted(_REGISTRY)


def _canonical(name: str) -> str:
    return name.strip().lower().replace("_", "-")


def run_strategy(name: str, g: Graph, f: ForgetSet, config: ModelConfig,
                 pre_params: ModelParams | None = None, **kwargs) -> UnlearningOutcome:
    key = _canonical(name)
    if key not in _REGISTRY:
        raise RegistryError(f"unknown strategy {name!r}; available: {', '.join(available())}")
    t0 = time.perf_counter()
    out = _REGISTRY[key](g, f, config, pre_params, **kwargs)
    if not isinstance(out, UnlearningOutcome):
        raise StrategyError(f"strategy {name!r} returned {type(out).__name__}")
    return UnlearningOutcome(
        params_post=out.params_post,
        graph_post=out.graph_post,
        strategy_name=out.strategy_name or key,
        wall_time=time.perf_counter() - t0,
        strategy_metadata=dict(out.strategy_metadata),
    )


@register("retrain")
def retrain(g: Graph, f: ForgetSet, config: ModelConfig, pre_params=None, **_) -> UnlearningOutcome:
    g_post = remove_nodes(g, f)
    if not (g_post.train_mask & g_post.present).any():
        raise StrategyError("deleting the forget set empties the train mask")
    params = train(g_post, config, stream="retrain")
    return UnlearningOutcome(params, g_post, "retrain",
                             strategy_metadata={"init_seed": config.seed, "init_stream": "retrain"})


@register("local-finetune")
def local_finetune(
    g: Graph,
    f: ForgetSet,
    config: ModelConfig,
    pre_params: ModelParams,
    finetune_epochs: int = 10,
    radius: int = 2,
    lr_scale: float = 1.0,
    **_,
) -> UnlearningOutcome:
    """Delete ``f`` then Adam-tune ``pre_params`` on train nodes near ``f``.

    The neighbourhood is measured in the original graph. With no labelled
    node in range the model is returned unchanged and flagged.
    """
    if pre_params is None:
        raise StrategyError("local-finetune needs the pre-unlearning parameters")
    finetune_epochs, radius = int(finetune_epochs), int(radius)
    g_post = remove_nodes(g, f)
    near: set[int] = set()
    for v in f:
        near |= hop_ball(g, v, radius)
    near_ids = np.array(sorted(near), dtype=np.int64)
    if len(near_ids):
        near_ids = near_ids[g_post.train_mask[near_ids] & g_post.present[near_ids]]
    meta = {"finetune_epochs": finetune_epochs, "radius": radius, "local_train_nodes": int(len(near_ids))}
    if len(near_ids) == 0:
        meta["flag"] = "no-labelled-node-in-radius"
        return UnlearningOutcome(pre_params, g_post, "local-finetune", strategy_metadata=meta)
    meta["lr_scale"] = float(lr_scale)
    tune_cfg = config.replace(lr=config.lr * float(lr_scale))
    params = fit(pre_params, g_post, tune_cfg, near_ids, finetune_epochs, dropout_role="finetune-dropout")
    return UnlearningOutcome(params, g_post, "local-finetune", strategy_metadata=meta)


@register("noop")
def noop_approx(
    g: Graph,
    f: ForgetSet,
    config: ModelConfig,
    pre_params: ModelParams,
    ascent_steps: int = 1,
    **_,
) -> UnlearningOutcome:
    """Leave ``g`` untouched; plain gradient ascent on the forget-set loss at ``lr / 10``."""
    if pre_params is None:
        raise StrategyError("noop needs the pre-unlearning parameters")
    ascent_steps = int(ascent_steps)
    step = config.lr / 10.0
    params = pre_params
    targets = [v for v in f if g.present[v]]
    for _ in range(ascent_steps if targets else 0):
        _, grads = loss_and_gradients(params, g, config, targets, wrt="parameters", mode="eval")
        params = params.with_arrays({k: params[k] + step * grads[k] for k in params.names})
    return UnlearningOutcome(params, g, "noop", strategy_metadata={"ascent_steps": ascent_steps, "step_size": step})
