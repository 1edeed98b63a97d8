"""Toy pick-and-place tasks: scene sampling, scripted oracle, step and success."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union

from ..nets import PickPlaceAction, snap_angle
from .scene import (Pose, Scene, SceneObject, Workspace, angle_error, corner_marker, disk,
                    l_shape, object_mask, rectangle, render_depth, rim, ring)

TASKS = ("block-insertion", "place-disk-in-ring", "align-corner", "goal-insertion")
MAX_TRIES = 1000


class TaskError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    tau: float = 0.01
    omega: float = math.pi / 12
    steps: int = 1
    grasp_tolerance: float = math.pi / 12
    n_place: int = 36
    workspace: Workspace = Workspace()

    def __post_init__(self):
        if self.name not in TASKS:
            raise TaskError(f"unknown task {self.name!r}; choose from {', '.join(TASKS)}")
        if self.tau <= 0 or self.omega <= 0:
            raise TaskError("success thresholds must be positive")

    @property
    def goal(self) -> bool:
        return self.name == "goal-insertion"


def task(name: str, **kw) -> TaskSpec:
    return TaskSpec(name, **kw)


# ---------------------------------------------------------------------------
# sampling


def _random_pose(rng: np.random.Generator, ws: Workspace, radius: float) -> Pose:
    lim = ws.half_extent - radius - ws.pitch
    if lim <= 0:
        raise TaskError("object does not fit in the workspace")
    x, y = rng.uniform(-lim, lim, size=2)
    return Pose(float(x), float(y), float(rng.uniform(0, 2 * math.pi)))


def _radius(shape: BaseGeometry) -> float:
    xs, ys = shape.exterior.coords.xy if hasattr(shape, "exterior") else shape.envelope.exterior.coords.xy
    return float(np.max(np.hypot(np.asarray(xs), np.asarray(ys))))


def _footprint(obj: SceneObject, pose: Pose | None = None) -> BaseGeometry:
    return (obj.moved(pose) if pose is not None else obj).world_shape()


def _build(name: str, rng: np.random.Generator, ws: Workspace, seed: int) -> Scene:
    p = ws.pitch
    objs: list[SceneObject] = []
    params: dict = {}
    if name in ("block-insertion", "goal-insertion"):
        shape = l_shape(p)
        block = SceneObject("block", shape, Pose(0, 0, 0), 0.04, "pickable", 1, math.pi / 2)
        extra = rim(shape, 0.5 * p, 2 * p) if name == "block-insertion" else None
        extra_h, extra_role = 0.02, "fixture"
    elif name == "place-disk-in-ring":
        block = SceneObject("disk", disk(4 * p), Pose(0, 0, 0), 0.03, "pickable", 0, 0.0)
        extra = ring(5 * p, 7.5 * p)
        extra_h, extra_role = 0.02, "fixture"
    else:
        w, h = rng.uniform(10, 14) * p, rng.uniform(5, 7) * p
        params = {"w": w, "h": h}
        block = SceneObject("rectangle", rectangle(w, h), Pose(0, 0, 0), 0.03, "pickable", 2, math.pi / 2)
        extra = corner_marker(w, h, 1 * p, 6 * p, 1.5 * p)
        extra_h, extra_role = 0.01, "goal-marker"
    r_block = _radius(block.shape)
    target_shape = block.shape if extra is None else unary_union([block.shape, extra])
    r_target = _radius(target_shape.convex_hull)
    for _ in range(MAX_TRIES):
        start = _random_pose(rng, ws, r_block)
        target = _random_pose(rng, ws, r_target)
        a = _footprint(block, start)
        b = _footprint(replace(block, shape=target_shape), target)
        if a.buffer(2 * p).intersects(b):
            continue
        objs = [block.moved(start)]
        if extra is not None:
            objs.append(SceneObject("fixture" if extra_role == "fixture" else "marker", extra, target,
                                    extra_h, extra_role, 1))
        return Scene(ws, tuple(objs), seed, target, params)
    raise TaskError(f"scene placement failed after {MAX_TRIES} samples (seed {seed})")


def reset(spec: TaskSpec, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    return _build(spec.name, rng, spec.workspace, seed)


def goal_scene(scene: Scene) -> Scene:
    i = scene.pickable()
    obj = scene.objects[i].moved(scene.target)
    return replace(scene, objects=(obj,))


def observe(scene: Scene, spec: TaskSpec) -> tuple[np.ndarray, np.ndarray | None]:
    obs = render_depth(scene).astype(np.float32)
    goal = render_depth(goal_scene(scene)).astype(np.float32) if spec.goal else None
    return obs, goal


def model_input(obs: np.ndarray, goal: np.ndarray | None) -> np.ndarray:
    return obs if goal is None else np.concatenate([obs, goal], axis=0)


# ---------------------------------------------------------------------------
# oracle / dynamics


def _wrap(a: float, period: float) -> float:
    """Representative of a modulo period in (-period/2, period/2]."""
    r = a % period
    return r - period if r > period / 2 else r


def oracle(scene: Scene, spec: TaskSpec) -> PickPlaceAction:
    ws = scene.workspace
    obj = scene.objects[scene.pickable()]
    u, v = (round(c) for c in ws.world_to_pixel(obj.pose.x, obj.pose.y))
    if not object_mask(ws, obj)[u, v]:
        raise TaskError(f"no valid grasp for seed {scene.seed}")
    px, py = ws.pixel_to_world(u, v)
    theta_pick = (obj.pose.theta + obj.grasp_axis) % math.pi
    if obj.symmetry == 0:
        delta = 0.0
    else:
        delta = _wrap(scene.target.theta - obj.pose.theta, 2 * math.pi / obj.symmetry)
    i = snap_angle(delta % (2 * math.pi), spec.n_place, 2 * math.pi)
    ds = 2 * math.pi * i / spec.n_place
    c, s = math.cos(ds), math.sin(ds)
    ox, oy = obj.pose.x - px, obj.pose.y - py
    qx = scene.target.x - (c * ox - s * oy)
    qy = scene.target.y - (s * ox + c * oy)
    qu, qv = (round(t) for t in ws.world_to_pixel(qx, qy))
    if not (0 <= qu < ws.size and 0 <= qv < ws.size):
        raise TaskError(f"oracle place point outside the workspace for seed {scene.seed}")
    return PickPlaceAction((float(u), float(v)), theta_pick, (float(qu), float(qv)), ds)


def success(scene: Scene, spec: TaskSpec) -> float:
    obj = scene.objects[scene.pickable()]
    t = scene.target
    d = math.hypot(obj.pose.x - t.x, obj.pose.y - t.y)
    e = angle_error(obj.pose.theta, t.theta, obj.symmetry)
    return 1.0 if (d <= spec.tau and e <= spec.omega) else 0.0


def step(scene: Scene, action: PickPlaceAction, spec: TaskSpec) -> tuple[Scene, float]:
    """Grasp test, then teleport the object from the pick frame to the place frame."""
    ws = scene.workspace
    i = scene.pickable()
    obj = scene.objects[i]
    u, v = (int(round(c)) for c in action.pick)
    qu, qv = (int(round(c)) for c in action.place)
    for a, b in ((u, v), (qu, qv)):
        if not (0 <= a < ws.size and 0 <= b < ws.size):
            raise TaskError(f"action pixel {(a, b)} outside the workspace")
    if not object_mask(ws, obj)[u, v]:
        return scene, 0.0
    if obj.symmetry != 0 and angle_error(action.theta_pick, obj.pose.theta + obj.grasp_axis, 2) > spec.grasp_tolerance:
        return scene, 0.0
    px, py = ws.pixel_to_world(u, v)
    qx, qy = ws.pixel_to_world(qu, qv)
    d = action.theta_place
    c, s = math.cos(d), math.sin(d)
    ox, oy = obj.pose.x - px, obj.pose.y - py
    new = Pose(qx + c * ox - s * oy, qy + s * ox + c * oy, (obj.pose.theta + d) % (2 * math.pi))
    scene = scene.replace_object(i, obj.moved(new))
    return scene, success(scene, spec)


def rollout(spec: TaskSpec, seed: int, policy) -> float:
    """Run one episode; ``policy(obs, goal) -> PickPlaceAction``. Returns the final score."""
    scene = reset(spec, seed)
    score = 0.0
    for _ in range(spec.steps):
        obs, goal = observe(scene, spec)
        scene, score = step(scene, policy(obs, goal), spec)
        if score >= 1.0:
            break
    return score


def demonstrations(spec: TaskSpec, count: int, seed: int):
    """Oracle episodes for seeds seed..seed+count-1, one record per executed step."""
    from .dataset import Demonstration

    demos = []
    for s in range(seed, seed + count):
        scene = reset(spec, s)
        for k in range(spec.steps):
            obs, goal = observe(scene, spec)
            try:
                a = oracle(scene, spec)
            except TaskError as e:
                raise TaskError(f"oracle failed on seed {s}: {e}") from e
            demos.append(Demonstration(spec.name, s, obs, a, goal, k))
            scene, score = step(scene, a, spec)
            if score >= 1.0:
                break
    return demos
