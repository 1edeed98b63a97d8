import pytest

from eqtp import verify as V


@pytest.fixture(scope="module")
def rows():
    return V.run(4, seeds=4)


def test_every_property_is_exercised(rows):
    ids = [r.id for r in rows]
    assert set(V.EXPECTED_IDS) <= set(ids) and ids[-1] == "COV"
    assert len(ids) == len(set(ids))


def test_quarter_turn_battery_passes(rows):
    assert [r.id for r in rows if not r.passed] == []


def test_sabotage_fails_prop2():
    ctx = V.Context(4, seeds=2, sabotage="baseline-prop2")
    p2 = next(r for r in V.check_propositions(ctx) if r.id == "P2")
    assert not p2.passed and p2.residual > 1e-2


def test_context_validation():
    with pytest.raises(V.VerifyError):
        V.Context(1)
    with pytest.raises(V.VerifyError):
        V.Context(4, sabotage="something-else")


def test_row_pass_direction():
    assert V._row("X", "x", "-", 1.0, 2.0).passed
    assert not V._row("X", "x", "-", 3.0, 2.0).passed
    assert V._row("X", "x", "-", 30.0, 10.0, "min").passed


def test_format_table(rows):
    text = V.format_table(rows[:2])
    lines = text.splitlines()
    assert len(lines) == 3 and lines[0].startswith("id")
    assert "PASS" in lines[1] and lines[1].startswith(rows[0].id)


def test_model_config_for_interpolated_groups():
    assert V.model_config_for(6).hidden_order == 12
    cfg = V.model_config_for(8)
    assert cfg.hidden_order == 8 and cfg.n_place % 8 == 0 and cfg.n_pick * 2 == cfg.n_place
