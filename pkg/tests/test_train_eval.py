import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqtp.bench import tasks as T
from eqtp.config import RunConfig
from eqtp.evaluate import EvalError, eval_seeds, evaluate, evaluate_model, oracle_policy
from eqtp.nets import ModelConfig, TransporterModel
from eqtp.train import augment, train

DEMOS = {}


def demos(name="block-insertion", count=10):
    if (name, count) not in DEMOS:
        DEMOS[name, count] = T.demonstrations(T.task(name), count, 0)
    return DEMOS[name, count]


def test_short_run_is_deterministic(tmp_path):
    cfg = RunConfig(steps=6, eval_interval=3, eval_episodes=3, lr=3e-4)
    a = train(cfg, demos(), tmp_path / "a")
    b = train(cfg, demos(), tmp_path / "b")
    assert a.losses == b.losses
    for f in ("report.csv", "losses.csv", "config.txt", "best.eqck", "ckpt_000006.eqck"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "report.csv").read_text().splitlines()[0] == "step,score,best,model,augment"
    assert [r["step"] for r in a.rows] == [3, 6]


def test_loss_decreases_on_one_demo():
    cfg = RunConfig(steps=50, eval_interval=50, eval_episodes=1, lr=1e-3)
    res = train(cfg, demos()[:1], write=False)
    assert np.mean(res.losses[-5:]) < 0.5 * np.mean(res.losses[:5])


@given(st.integers(0, 2 ** 31), st.integers(0, 9))
def test_augmentation_keeps_the_pairing(seed, i):
    d = demos()[i]
    x, a = augment(d.observation, d.action, np.random.default_rng(seed))
    pu, pv = (int(c) for c in a.pick)
    qu, qv = (int(c) for c in a.place)
    ou, ov = (int(c) for c in d.action.pick)
    assert x[0, pu, pv] == d.observation[0, ou, ov] > 0
    assert 0 <= qu < 64 and 0 <= qv < 64
    k = round(((a.theta_pick - d.action.theta_pick) % math.pi) / (math.pi / 2))
    assert abs((d.action.theta_pick + k * math.pi / 2) % math.pi - a.theta_pick) <= 1e-9
    assert a.theta_place == d.action.theta_place
    assert np.isclose(x.sum(), d.observation.sum()) or x.sum() < d.observation.sum()


def test_augmented_oracle_still_solves_the_scene():
    spec = T.task("block-insertion")
    from eqtp.bench.scene import rotate_scene
    scene = T.reset(spec, 4)
    a = T.oracle(scene, spec)
    for k in range(4):
        rs = rotate_scene(scene, k)
        ra = T.oracle(rs, spec)
        assert T.step(rs, ra, spec)[1] == 1.0
        assert np.array_equal(T.observe(rs, spec)[0], np.rot90(T.observe(scene, spec)[0], k, axes=(1, 2)))
    assert a is not None


def test_eval_seeds_are_disjoint_from_training():
    s = eval_seeds(0, 100)
    assert len(set(s)) == 100 and min(s) >= 10 ** 6
    with pytest.raises(EvalError):
        eval_seeds(0, 0)


def test_oracle_policy_scores_one():
    spec = T.task("place-disk-in-ring")
    assert evaluate(spec, eval_seeds(0, 10), lambda s: oracle_policy(spec, s)) == [1.0] * 10


def test_random_weights_fail():
    m = TransporterModel(ModelConfig(), 0)
    assert evaluate_model(m, T.task("block-insertion"), 10) <= 0.1


def test_goal_mismatch_is_rejected():
    with pytest.raises(EvalError):
        evaluate_model(TransporterModel(ModelConfig(), 0), T.task("goal-insertion"), 1)


def test_thread_count_does_not_change_scores(monkeypatch):
    m = TransporterModel(ModelConfig(), 2)
    spec = T.task("align-corner")
    scores = {}
    for n in ("1", "3"):
        monkeypatch.setenv("EQTP_THREADS", n)
        scores[n] = evaluate_model(m, spec, 6, 1)
    assert scores["1"] == scores["3"]
    monkeypatch.setenv("EQTP_THREADS", "many")
    with pytest.raises(EvalError):
        evaluate_model(m, spec, 1)
