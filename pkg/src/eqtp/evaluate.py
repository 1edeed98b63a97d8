"""Policy evaluation on unseen seeds."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .bench import tasks as T
from .nets import PickPlaceAction, TransporterModel, act

EVAL_SEED_OFFSET = 1_000_000


class EvalError(ValueError):
    pass


def thread_count() -> int:
    raw = os.environ.get("EQTP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise EvalError(f"EQTP_THREADS must be an integer, got {raw!r}") from e
    return max(1, n)


def eval_seeds(seed: int, episodes: int) -> list[int]:
    if episodes <= 0:
        raise EvalError("number of evaluation episodes must be positive")
    return [EVAL_SEED_OFFSET + seed + i for i in range(episodes)]


def model_policy(model: TransporterModel) -> Callable:
    def policy(obs, goal) -> PickPlaceAction:
        return act(model, T.model_input(obs, goal))
    return policy


def oracle_policy(spec: T.TaskSpec, seed: int) -> Callable:
    scene = T.reset(spec, seed)
    return lambda obs, goal: T.oracle(scene, spec)


def evaluate(spec: T.TaskSpec, seeds: list[int], policy_for_seed: Callable[[int], Callable]) -> list[float]:
    """Scores per seed, in seed order. Episodes run on EQTP_THREADS workers."""
    def one(s):
        with threadpool_limits(1):
            return T.rollout(spec, s, policy_for_seed(s))

    n = thread_count()
    if n == 1 or len(seeds) == 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(one, seeds))


def evaluate_model(model: TransporterModel, spec: T.TaskSpec, episodes: int, seed: int = 0) -> float:
    if model.config.goal != spec.goal:
        raise EvalError(f"model {'with' if model.config.goal else 'without'} goal input "
                        f"does not match task {spec.name}")
    policy = model_policy(model)
    scores = evaluate(spec, eval_seeds(seed, episodes), lambda s: policy)
    return float(np.mean(scores))
