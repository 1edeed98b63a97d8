"""Behavior-cloning training loop with periodic evaluation."""

from __future__ import annotations

import csv
import logging
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .bench import tasks as T
from .bench.dataset import Demonstration, read_dataset
from .config import RunConfig, save_config
from .evaluate import evaluate_model
from .nets import PickPlaceAction, TransporterModel, bc_loss, save_checkpoint

log = logging.getLogger(__name__)

MAX_SHIFT = 4


class TrainError(RuntimeError):
    pass


@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    model: TransporterModel | None = None

    @property
    def best(self) -> dict | None:
        if not self.rows:
            return None
        return max(self.rows, key=lambda r: (r["score"], -r["step"]))

    def steps_to(self, score: float) -> int | None:
        for r in self.rows:
            if r["score"] >= score:
                return r["step"]
        return None


def _rot_pixel(u: float, v: float, size: int) -> tuple[float, float]:
    # one counter-clockwise quarter turn, matching np.rot90
    return (size - 1 - v, u)


def augment(x: np.ndarray, a: PickPlaceAction, rng: np.random.Generator) -> tuple[np.ndarray, PickPlaceAction]:
    """Random quarter-turn plus integer translation of an (observation, action) pair."""
    size = x.shape[-1]
    k = int(rng.integers(4))
    x = np.rot90(x, k, axes=(1, 2))
    p, q = a.pick, a.place
    for _ in range(k):
        p, q = _rot_pixel(*p, size), _rot_pixel(*q, size)
    tp = (a.theta_pick + k * math.pi / 2) % math.pi
    du, dv = (int(s) for s in rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2))
    p2, q2 = (p[0] + du, p[1] + dv), (q[0] + du, q[1] + dv)
    if all(0 <= c < size for c in (*p2, *q2)):
        shifted = np.zeros_like(x)
        src = x[:, max(0, -du):size - max(0, du), max(0, -dv):size - max(0, dv)]
        shifted[:, max(0, du):max(0, du) + src.shape[1], max(0, dv):max(0, dv) + src.shape[2]] = src
        x, p, q = shifted, p2, q2
    return np.ascontiguousarray(x), PickPlaceAction(p, tp, q, a.theta_place)


def load_demos(cfg: RunConfig) -> list[Demonstration]:
    if not cfg.dataset:
        raise TrainError("config has no dataset path")
    path = Path(cfg.dataset)
    if not path.exists():
        raise TrainError(f"dataset {path} does not exist")
    demos = read_dataset(path)
    demos = [d for d in demos if d.task == cfg.task]
    if len({d.seed for d in demos}) < cfg.demos:
        raise TrainError(f"dataset {path} holds {len(demos)} {cfg.task} episodes, config wants {cfg.demos}")
    seeds = sorted({d.seed for d in demos}, key=[d.seed for d in demos].index)[:cfg.demos]
    return [d for d in demos if d.seed in set(seeds)]


def train(cfg: RunConfig, demos: list[Demonstration] | None = None, out: str | Path | None = None,
          write: bool = True) -> TrainResult:
    out = Path(out or cfg.out)
    if demos is None:
        demos = load_demos(cfg)
    if not demos:
        raise TrainError("no demonstrations to train on")
    spec = T.task(cfg.task)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        save_config(out / "config.txt", cfg)
    model = TransporterModel(cfg.model, cfg.seed)
    state = ad.AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 7])
    inputs = [T.model_input(d.observation, d.goal) for d in demos]
    result = TrainResult(model=model)
    best_score = -1.0
    timing = []
    t0 = time.perf_counter()
    model_tag = "baseline" if cfg.baseline else "equivariant"
    aug_tag = "on" if cfg.augmentation else "off"
    with threadpool_limits(1):
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(len(demos), size=cfg.batch_size)
            xs, acts = [], []
            for i in idx:
                x, a = inputs[i], demos[i].action
                if cfg.augmentation:
                    x, a = augment(x, a, rng)
                xs.append(x)
                acts.append(a)
            for p in model.params.values():
                p.grad = None
            loss = bc_loss(model, np.stack(xs), acts)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainError(f"non-finite loss at step {step}")
            ad.backward(loss)
            ad.adam_step(model.params, state)
            result.losses.append(val)
            if step % cfg.eval_interval == 0 or step == cfg.steps:
                score = evaluate_model(model, spec, cfg.eval_episodes, cfg.seed)
                row = {"step": step, "score": score, "model": model_tag, "augment": aug_tag}
                result.rows.append(row)
                timing.append((step, time.perf_counter() - t0))
                log.info("step %d loss %.4f score %.3f", step, val, score)
                if write:
                    ck = out / f"ckpt_{step:06d}.eqck"
                    save_checkpoint(ck, model, {"task": cfg.task, "step": step})
                    if score > best_score:
                        shutil.copyfile(ck, out / "best.eqck")
                best_score = max(best_score, score)
                if cfg.stop_score and score >= cfg.stop_score:
                    break
    if write:
        write_report(out / "report.csv", result.rows)
        with open(out / "losses.csv", "w", newline="") as fp:
            w = csv.writer(fp)
            w.writerow(["step", "loss"])
            for i, v in enumerate(result.losses, 1):
                w.writerow([i, repr(v)])
        with open(out / "timing.csv", "w", newline="") as fp:
            w = csv.writer(fp)
            w.writerow(["step", "wall_seconds"])
            for s, t in timing:
                w.writerow([s, f"{t:.3f}"])
    return result


def write_report(path: str | Path, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: r["step"])
    best = max(rows, key=lambda r: (r["score"], -r["step"]))["step"] if rows else None
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["step", "score", "best", "model", "augment"])
        for r in rows:
            w.writerow([r["step"], f"{r['score']:.4f}", "1" if r["step"] == best else "0",
                        r.get("model", ""), r.get("augment", "")])
