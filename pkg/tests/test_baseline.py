import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clca.baseline import run_baseline_simulation, update_baseline_queue
from clca.scheduler import CLCA, NEELY, Simulation, Variant


@pytest.mark.parametrize(
    "Zp, Q, mu, D, expected",
    [(5.0, 0.0, 1.0, 0.0, 4.0), (0.0, 2.0, 0.0, 0.0, 6.0), (10.0, 2.0, 3.0, 9.0, 6.0)],
)
def test_update_examples(Zp, Q, mu, D, expected):
    assert update_baseline_queue(Zp, Q, mu, D, 6.0) == expected


def test_ungated_always_adds_epsilon():
    assert update_baseline_queue(5.0, 0.0, 1.0, 0.0, 6.0, gated=False) == 10.0


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 10), st.floats(0, 9), st.floats(0, 9),
       st.booleans())
def test_nonnegative(Zp, Q, mu, D, eps, gated):
    assert update_baseline_queue(Zp, Q, mu, D, eps, gated=gated) >= 0


def test_same_environment_as_clca(model750):
    a, b = Simulation(model750, seed=5, variant=CLCA), Simulation(model750, seed=5, variant=NEELY)
    for t in (0, 17, 2999):
        assert np.array_equal(a.env(t).s_channel, b.env(t).s_channel)
        assert np.array_equal(a.env(t).s_harvest, b.env(t).s_harvest)


def test_baseline_drops_at_v750(model750):
    rep = run_baseline_simulation(model750, seed=0, T=30000)
    assert rep.drops_realized > 0


@pytest.mark.parametrize("engine", ["python", "compiled"])
def test_zero_epsilon_makes_both_algorithms_identical(model750, engine):
    m = model750.with_sessions(epsilon=0.0)
    a, b = Simulation(m, seed=1, variant=CLCA), Simulation(m, seed=1, variant=NEELY)
    for _ in range(6):
        a.run(100, engine=engine)
        b.run(100, engine=engine)
        for k in ("Q", "Z", "E"):
            assert np.array_equal(getattr(a.state, k), getattr(b.state, k))
        assert np.array_equal(a.state.Qtilde, b.state.Zp)
    ra, rb = a.report().to_row(), b.report().to_row()
    ra.pop("algo"), rb.pop("algo")
    assert ra == rb


def test_variant_flags_change_the_run(model750):
    base = run_baseline_simulation(model750, seed=0, T=2000)
    ungated = run_baseline_simulation(model750, seed=0, T=2000, gated=False)
    drop_only = run_baseline_simulation(model750, seed=0, T=2000, substitute_weights=False)
    assert base.to_row() != ungated.to_row()
    assert base.to_row() != drop_only.to_row()


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        Variant("other")
