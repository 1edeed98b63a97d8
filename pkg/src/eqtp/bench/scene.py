"""Planar scenes of rigid polygons and their top-down depth rendering.

World frame: metres, origin at the workspace centre, x along image columns,
y towards the top of the image. Pixel (u, v) = (row, col) has its centre at
x = (v - c) * pitch, y = (c - u) * pitch with c = (size - 1) / 2, so a
quarter-turn of the world is exactly ``np.rot90`` of the rendered image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.geometry.base import BaseGeometry
from shapely import affinity

MAX_HEIGHT = 0.04   # depth normalization (metres)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def apply(self, pts: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float)
        return pts @ np.array([[c, s], [-s, c]]) + np.array([self.x, self.y])


@dataclass(frozen=True)
class SceneObject:
    name: str
    shape: BaseGeometry          # object frame, metres
    pose: Pose
    height: float
    role: str                    # pickable | fixture | goal-marker
    symmetry: int = 1            # rotational symmetry order; 0 = continuous
    grasp_axis: float = 0.0      # gripper angle in the object frame (mod pi)

    def world_shape(self) -> BaseGeometry:
        g = affinity.rotate(self.shape, self.pose.theta, origin=(0, 0), use_radians=True)
        return affinity.translate(g, self.pose.x, self.pose.y)

    def moved(self, pose: Pose) -> "SceneObject":
        return replace(self, pose=pose)


@dataclass(frozen=True)
class Workspace:
    size: int = 64
    pitch: float = 0.005

    @property
    def centre(self) -> float:
        return (self.size - 1) / 2

    def pixel_to_world(self, u: float, v: float) -> tuple[float, float]:
        return ((v - self.centre) * self.pitch, (self.centre - u) * self.pitch)

    def world_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        return (self.centre - y / self.pitch, self.centre + x / self.pitch)

    def pixel_centres(self) -> tuple[np.ndarray, np.ndarray]:
        u, v = np.meshgrid(np.arange(self.size), np.arange(self.size), indexing="ij")
        return (v - self.centre) * self.pitch, (self.centre - u) * self.pitch

    @property
    def half_extent(self) -> float:
        return self.size * self.pitch / 2


@dataclass(frozen=True)
class Scene:
    workspace: Workspace
    objects: tuple[SceneObject, ...]
    seed: int
    target: Pose | None = None            # goal pose of the pickable object
    params: dict = field(default_factory=dict, compare=False)

    def pickable(self) -> int:
        for i, o in enumerate(self.objects):
            if o.role == "pickable":
                return i
        raise ValueError("scene has no pickable object")

    def replace_object(self, i: int, obj: SceneObject) -> "Scene":
        objs = list(self.objects)
        objs[i] = obj
        return replace(self, objects=tuple(objs))


def object_mask(ws: Workspace, obj: SceneObject) -> np.ndarray:
    x, y = ws.pixel_centres()
    return shapely.contains_xy(obj.world_shape(), x, y)


def render_depth(scene: Scene, roles=("pickable", "fixture", "goal-marker")) -> np.ndarray:
    """(1, H, W) orthographic height map normalized by MAX_HEIGHT, background 0."""
    ws = scene.workspace
    depth = np.zeros((ws.size, ws.size))
    for obj in scene.objects:
        if obj.role not in roles:
            continue
        m = object_mask(ws, obj)
        depth = np.where(m, np.maximum(depth, obj.height), depth)
    return (np.clip(depth / MAX_HEIGHT, 0.0, 1.0))[None]


def rotate_scene(scene: Scene, quarter_turns: int) -> Scene:
    """Rotate every pose (and the target) about the workspace centre."""
    a = quarter_turns * math.pi / 2

    def rot(p: Pose) -> Pose:
        c, s = round(math.cos(a)), round(math.sin(a))
        return Pose(c * p.x - s * p.y, s * p.x + c * p.y, (p.theta + a) % (2 * math.pi))

    objs = tuple(o.moved(rot(o.pose)) for o in scene.objects)
    tgt = rot(scene.target) if scene.target is not None else None
    return replace(scene, objects=objs, target=tgt)


def angle_error(a: float, b: float, symmetry: int) -> float:
    """Smallest |a - b| modulo the rotational symmetry of the object."""
    if symmetry == 0:
        return 0.0
    period = 2 * math.pi / symmetry
    d = (a - b) % period
    return min(d, period - d)


# ---------------------------------------------------------------------------
# shapes (object frame, metres)


def l_shape(pitch: float, long_arm=12.0, short_arm=8.0, thick=4.0) -> Polygon:
    """L with the long arm centred on the origin along x and the foot going up at +x."""
    h = long_arm / 2
    t = thick / 2
    pts = [(-h, -t), (h, -t), (h, short_arm - t), (h - thick, short_arm - t), (h - thick, t), (-h, t)]
    return Polygon([(x * pitch, y * pitch) for x, y in pts])


def rectangle(w: float, h: float) -> Polygon:
    return Polygon([(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)])


def disk(r: float) -> BaseGeometry:
    return shapely.Point(0, 0).buffer(r, quad_segs=32)


def ring(r_in: float, r_out: float) -> BaseGeometry:
    return disk(r_out).difference(disk(r_in))


def rim(shape: BaseGeometry, clearance: float, width: float) -> BaseGeometry:
    inner = shape.buffer(clearance, join_style="mitre")
    return inner.buffer(width, join_style="mitre").difference(inner)


def corner_marker(w: float, h: float, gap: float, arm: float, thick: float) -> BaseGeometry:
    """Thin L hugging the (+w/2, +h/2) corner of a w x h rectangle from outside."""
    cx, cy = w / 2 + gap, h / 2 + gap
    a = Polygon([(cx - arm, cy), (cx + thick, cy), (cx + thick, cy + thick), (cx - arm, cy + thick)])
    b = Polygon([(cx, cy - arm), (cx + thick, cy - arm), (cx + thick, cy + thick), (cx, cy + thick)])
    return a.union(b)
