import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqtp.bench import tasks as T
from eqtp.bench.dataset import decode_dataset, encode_dataset, read_dataset, write_dataset
from eqtp.bench.scene import (Pose, Scene, SceneObject, Workspace, angle_error, object_mask, rectangle,
                              render_depth, rotate_scene)
from eqtp.nets import PickPlaceAction
from eqtp.tensorio import FormatError

SEEDS = st.integers(0, 10 ** 6)


def square_scene(x=0.0, y=0.0, side=0.02):
    ws = Workspace()
    obj = SceneObject("sq", rectangle(side, side), Pose(x, y, 0.0), 0.04, "pickable")
    return Scene(ws, (obj,), 0, Pose(0, 0, 0))


@pytest.mark.parametrize("name", T.TASKS)
def test_reset_is_deterministic(name):
    spec = T.task(name)
    a, b = T.observe(T.reset(spec, 7), spec), T.observe(T.reset(spec, 7), spec)
    assert np.array_equal(a[0], b[0])
    assert (a[1] is None) == (not spec.goal)


@settings(max_examples=25)
@given(st.sampled_from(T.TASKS), SEEDS)
def test_objects_never_overlap_the_target(name, seed):
    spec = T.task(name)
    scene = T.reset(spec, seed)
    block = scene.objects[scene.pickable()]
    for other in scene.objects:
        if other is not block:
            assert not block.world_shape().intersects(other.world_shape())
    for o in scene.objects:
        assert abs(o.pose.x) < scene.workspace.half_extent and abs(o.pose.y) < scene.workspace.half_extent


def test_empty_scene_renders_zeros():
    assert not render_depth(Scene(Workspace(), (), 0)).any()


def test_rasterization_oracle():
    scene = square_scene(side=0.02)   # 4 pixels across, centred on a pixel corner
    d = render_depth(scene)[0]
    assert d.sum() == 16
    assert np.array_equal(np.argwhere(d > 0)[[0, -1]], [[30, 30], [33, 33]])


def test_integer_translation_shifts_the_image():
    p = Workspace().pitch
    a = render_depth(square_scene(0.0, 0.0))[0]
    b = render_depth(square_scene(3 * p, -2 * p))[0]
    assert np.array_equal(np.roll(a, (2, 3), axis=(0, 1)), b)


@pytest.mark.parametrize("name", T.TASKS)
def test_scene_rotation_rotates_the_observation(name):
    spec = T.task(name)
    scene = T.reset(spec, 3)
    obs = T.observe(scene, spec)[0]
    for k in range(4):
        assert np.array_equal(T.observe(rotate_scene(scene, k), spec)[0], np.rot90(obs, k, axes=(1, 2)))


@pytest.mark.parametrize("name", T.TASKS)
def test_oracle_solves_every_task(name):
    spec = T.task(name)
    scores = [T.rollout(spec, s, lambda o, g, s=s: T.oracle(T.reset(spec, s), spec)) for s in range(30)]
    assert sum(scores) == 30


@settings(max_examples=20)
@given(st.sampled_from(T.TASKS), SEEDS)
def test_oracle_pick_angle_range(name, seed):
    spec = T.task(name)
    a = T.oracle(T.reset(spec, seed), spec)
    assert 0 <= a.theta_pick < math.pi
    assert 0 <= a.theta_place < 2 * math.pi


def test_background_pick_changes_nothing():
    spec = T.task("block-insertion")
    scene = T.reset(spec, 0)
    mask = object_mask(scene.workspace, scene.objects[scene.pickable()])
    u, v = np.argwhere(~mask)[0]
    after, score = T.step(scene, PickPlaceAction((float(u), float(v)), 0.0, (32.0, 32.0), 0.0), spec)
    assert after == scene and score == 0.0


def test_success_thresholds():
    spec = T.task("block-insertion")
    scene = T.reset(spec, 1)
    i = scene.pickable()
    at = lambda pose: T.success(scene.replace_object(i, scene.objects[i].moved(pose)), spec)
    t = scene.target
    assert at(t) == 1.0
    assert at(Pose(t.x + 2 * spec.tau, t.y, t.theta)) == 0.0
    assert at(Pose(t.x, t.y, t.theta + math.pi)) == 0.0     # the L-block has no rotational symmetry
    assert at(Pose(t.x + 0.5 * spec.tau, t.y, t.theta + 0.5 * spec.omega)) == 1.0


def test_angle_error():
    assert angle_error(0.1, 0.1 + math.pi, 2) <= 1e-12
    assert abs(angle_error(0.0, math.pi, 1) - math.pi) <= 1e-12
    assert angle_error(0.3, 2.0, 0) == 0.0


def test_out_of_bounds_action_is_an_error():
    spec = T.task("align-corner")
    with pytest.raises(T.TaskError):
        T.step(T.reset(spec, 0), PickPlaceAction((0.0, 0.0), 0.0, (64.0, 0.0), 0.0), spec)


def test_unknown_task():
    with pytest.raises(T.TaskError):
        T.task("stack-blocks")


@pytest.mark.parametrize("name", ["block-insertion", "goal-insertion"])
def test_dataset_round_trip(tmp_path, name):
    demos = T.demonstrations(T.task(name), 3, 5)
    write_dataset(tmp_path / "d.eqpd", demos)
    back = read_dataset(tmp_path / "d.eqpd")
    assert back == demos
    assert encode_dataset(back) == (tmp_path / "d.eqpd").read_bytes()


def test_empty_dataset():
    assert decode_dataset(encode_dataset([])) == []


def test_corrupt_dataset_reports_offset():
    blob = encode_dataset(T.demonstrations(T.task("place-disk-in-ring"), 1, 0))
    with pytest.raises(FormatError) as e:
        decode_dataset(blob[:-10])
    assert e.value.offset is not None and 0 < e.value.offset < len(blob)
    with pytest.raises(FormatError, match="magic"):
        decode_dataset(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="trailing"):
        decode_dataset(blob + b"\x00")
