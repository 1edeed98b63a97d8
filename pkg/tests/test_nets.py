import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqtp import autodiff as ad
from eqtp.nets import (ModelConfig, ModelError, PickPlaceAction, TransporterModel, act, action_targets, bc_loss,
                       decode_action, load_checkpoint, save_checkpoint, snap_angle, softmax)
from eqtp.tensorio import FormatError

MODELS = {}


def model(baseline=False, goal=False, seed=0):
    key = (baseline, goal, seed)
    if key not in MODELS:
        MODELS[key] = TransporterModel(ModelConfig(baseline=baseline, goal=goal), seed)
    return MODELS[key]


def noise(seed, shape):
    return np.random.default_rng(seed).uniform(0, 1, size=shape).astype(np.float32)


@pytest.mark.parametrize("baseline", [False, True])
def test_pick_distribution_sums_to_one(baseline):
    p = softmax(model(baseline).pick_logits(noise(0, (1, 1, 64, 64))).data[0])
    assert abs(p.sum() - 1) <= 1e-9 and p.shape == (64 * 64,)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_pick_map_rotates_with_observation(k):
    m = model()
    o = noise(1, (1, 1, 64, 64))
    base = m.pick_logits(o).data.reshape(64, 64)
    rot = m.pick_logits(np.rot90(o, k, axes=(2, 3))).data.reshape(64, 64)
    assert np.max(np.abs(rot - np.rot90(base, k))) <= 1e-4


def test_pick_angle_bins_shift_by_a_quarter_turn():
    m = model()
    c = noise(2, (1, 1, 17, 17))
    base = m.angle_logits(c).data[0]
    for k in range(1, 4):
        rot = m.angle_logits(np.rot90(c, k, axes=(2, 3))).data[0]
        assert np.max(np.abs(rot - np.roll(base, k * 9))) <= 1e-4
    assert np.max(np.abs(m.angle_logits(np.rot90(c, 2, axes=(2, 3))).data[0] - base)) <= 1e-4


@pytest.mark.parametrize("g1,g2", [(0, 1), (1, 0), (2, 3), (3, 3), (1, 2)])
def test_place_map_relation(g1, g2):
    m = model()
    o, c = noise(3, (1, 1, 64, 64)), noise(4, (1, 1, 33, 33))
    base = m.place_logits(o, c).data[0]
    lhs = m.place_logits(np.rot90(o, g2, axes=(2, 3)), np.rot90(c, g1, axes=(2, 3))).data[0]
    rhs = np.roll(np.rot90(base, g2, axes=(1, 2)), (g2 - g1) * 9, axis=0)
    assert np.max(np.abs(lhs - rhs)) <= 1e-4


def test_baseline_breaks_place_relation():
    m = model(baseline=True)
    o, c = noise(3, (1, 1, 64, 64)), noise(4, (1, 1, 33, 33))
    base = m.place_logits(o, c).data[0]
    lhs = m.place_logits(np.rot90(o, 1, axes=(2, 3)), c).data[0]
    assert np.max(np.abs(lhs - np.roll(np.rot90(base, 1, axes=(1, 2)), 9, axis=0))) > 1e-3


def test_goal_stacked_inputs():
    m = model(goal=True)
    o = noise(5, (1, 2, 64, 64))
    assert m.pick_logits(o).shape == (1, 64 * 64)
    base = m.pick_logits(o).data.reshape(64, 64)
    assert np.max(np.abs(m.pick_logits(np.rot90(o, 1, axes=(2, 3))).data.reshape(64, 64) - np.rot90(base))) <= 1e-4
    with pytest.raises(ModelError):
        m.pick_logits(noise(5, (1, 1, 64, 64)))


def test_constant_crop_gives_uniform_angles():
    for baseline in (False, True):
        p = softmax(model(baseline).angle_logits(np.full((1, 1, 17, 17), 0.3, np.float32)).data[0])
        assert p.max() - p.min() <= 1e-3


def test_matched_parameter_budget():
    eq, base = model().free_parameters, model(True).free_parameters
    assert abs(base - eq) / eq <= 0.15


def test_rejects_bad_inputs():
    with pytest.raises(ModelError):
        model().pick_logits(np.full((1, 1, 64, 64), np.nan))
    with pytest.raises(ModelError):
        model().angle_logits(noise(0, (1, 1, 15, 15)))
    with pytest.raises(ModelError):
        ModelConfig(n_place=35)
    with pytest.raises(ModelError):
        ModelConfig(hidden_order=8)


def test_decode_one_hot():
    pick = np.zeros((8, 8))
    pick[2, 5] = 1
    angle = np.zeros(18)
    angle[4] = 1
    place = np.zeros((36, 8, 8))
    place[7, 1, 6] = 1
    a = decode_action(pick, angle, place)
    assert a == PickPlaceAction((2.0, 5.0), 4 * math.pi / 18, (1.0, 6.0), 7 * 2 * math.pi / 36)


def test_decode_ties_take_lowest_index():
    a = decode_action(np.ones((4, 4)), np.ones(18), np.ones((36, 4, 4)))
    assert a == PickPlaceAction((0.0, 0.0), 0.0, (0.0, 0.0), 0.0)


@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_decode_invariant_to_rescaling(seed, s):
    rng = np.random.default_rng(seed)
    pick, angle, place = rng.normal(size=(8, 8)), rng.normal(size=18), rng.normal(size=(36, 8, 8))
    assert decode_action(pick, angle, place) == decode_action(pick * s, angle * s, place * s)


def test_snap_angle():
    assert snap_angle(0.0, 18, math.pi) == 0
    assert snap_angle(math.pi, 18, math.pi) == 0
    assert snap_angle(0.5 * math.pi / 18, 18, math.pi) == 0
    assert snap_angle(0.51 * math.pi / 18, 18, math.pi) == 1
    assert snap_angle(-0.1, 36, 2 * math.pi) == 35


def test_action_targets_and_bounds():
    cfg = ModelConfig()
    a = PickPlaceAction((3.0, 4.0), math.pi / 2, (10.0, 20.0), math.pi)
    assert action_targets(a, (64, 64), cfg) == (3 * 64 + 4, 9, 18 * 4096 + 10 * 64 + 20)
    with pytest.raises(ModelError, match="place"):
        action_targets(PickPlaceAction((3.0, 4.0), 0.0, (64.0, 0.0), 0.0), (64, 64), cfg)


def test_initial_loss_is_near_uniform():
    m = model()
    o = noise(6, (2, 1, 64, 64))
    acts = [PickPlaceAction((10.0, 20.0), 0.3, (40.0, 30.0), 1.0), PickPlaceAction((50.0, 5.0), 2.0, (5.0, 60.0), 4.0)]
    uniform = math.log(4096) + math.log(18) + math.log(4096 * 36)
    assert abs(float(bc_loss(m, o, acts).data) - uniform) / uniform <= 0.05


def test_loss_matches_analytic_values():
    m = TransporterModel(ModelConfig(), 0)
    for p in m.params.values():
        p.data = np.zeros_like(p.data)
    acts = [PickPlaceAction((10.0, 20.0), 0.3, (40.0, 30.0), 1.0)]
    uniform = math.log(4096) + math.log(18) + math.log(4096 * 36)
    assert abs(float(bc_loss(m, noise(7, (1, 1, 64, 64)), acts).data) - uniform) <= 1e-3


def test_act_returns_valid_action():
    a = act(model(), noise(8, (1, 64, 64)))
    assert 0 <= a.pick[0] < 64 and 0 <= a.place[1] < 64 and 0 <= a.theta_pick < math.pi


def test_checkpoint_round_trip(tmp_path):
    m = model(seed=3)
    save_checkpoint(tmp_path / "m.eqck", m, {"task": "block-insertion", "step": 5})
    r, meta = load_checkpoint(tmp_path / "m.eqck")
    assert meta == {"task": "block-insertion", "step": "5"} and r.config == m.config
    for k in m.params:
        assert np.array_equal(r.params[k].data, m.params[k].data)
    o = noise(9, (1, 1, 64, 64))
    assert np.array_equal(r.pick_logits(o).data, m.pick_logits(o).data)


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.eqck"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_gradients_reach_every_parameter():
    m = TransporterModel(ModelConfig(), 1)
    loss = bc_loss(m, noise(10, (1, 1, 64, 64)), [PickPlaceAction((30.0, 30.0), 0.5, (20.0, 40.0), 2.0)])
    ad.backward(loss)
    assert all(p.grad is not None for p in m.params.values())
