import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

import oracles
from clca.power import (
    P_FLOOR,
    PowerProblem,
    bcd_objective,
    bcd_solve,
    capacity,
    exact_capacity,
    interference_matrix,
    project_block,
    projected_gradient_norm,
    sinr,
)


def test_sinr_single_link():
    S = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert sinr([1.0], S, [0], [1], [0], 1.0)[0] == 1.0
    assert sinr([0.0], S, [0], [1], [0], 1.0)[0] == 0.0


def test_sinr_two_interfering_links():
    S = np.ones((4, 4))
    g = sinr([1.0, 1.0], S, [0, 2], [1, 3], [0, 0], 1.0)
    assert np.allclose(g, 0.5)


def test_other_channel_does_not_interfere():
    S = np.ones((4, 4))
    assert np.allclose(sinr([1.0, 1.0], S, [0, 2], [1, 3], [0, 1], 1.0), 1.0)


def test_same_transmitter_does_not_interfere():
    cross = interference_matrix(np.ones((3, 3)), [0, 0], [1, 2], [0, 0])
    assert np.all(cross == 0)


@pytest.mark.parametrize("gamma, expected", [(1.0, 0.0), (math.e**2, 2.0)])
def test_capacity(gamma, expected):
    assert capacity(gamma) == pytest.approx(expected)


def test_capacity_high_sinr_gap():
    approx, exact = capacity(20.0), exact_capacity(20.0)
    assert approx == pytest.approx(2.9957, abs=1e-4)
    assert exact == pytest.approx(3.0445, abs=1e-4)
    assert (exact - approx) / exact < 0.02


def test_capacity_at_zero_sinr():
    assert capacity(0.0) == -math.inf


def _single(w=1.0, c=-1.0, gain=1.0, p_max=2.0, N0=1.0):
    return PowerProblem(np.array([w]), np.array([gain]), np.zeros((1, 1)), np.array([c]), np.array([0]), {0: p_max}, N0)


def test_objective_without_links():
    empty = PowerProblem(np.zeros(0), np.zeros(0), np.zeros((0, 0)), np.zeros(0), np.zeros(0, int), {}, 1.0)
    assert bcd_objective(np.zeros(0), empty) == 0.0


def test_objective_single_link_unit_power():
    assert bcd_objective(np.array([0.0]), _single()) == pytest.approx(-1.0)


def test_doubling_weight_doubles_only_the_rate_term():
    x = np.array([math.log(3.0)])
    base = bcd_objective(x, _single(w=1.0, c=-0.5))
    doubled = bcd_objective(x, _single(w=2.0, c=-0.5))
    rate = math.log(3.0)
    assert doubled - base == pytest.approx(rate)


def test_single_link_interior_optimum():
    res = bcd_solve(_single(w=30.0, c=-20.0, gain=1.0))
    assert res.power[0] == pytest.approx(1.5)


def test_single_link_cap_binds():
    res = bcd_solve(_single(w=60.0, c=-20.0, gain=1.0))
    assert res.power[0] == pytest.approx(2.0)


def test_zero_weights_give_zero_power():
    prob = PowerProblem(
        np.zeros(2), np.ones(2), np.array([[0.0, 0.5], [0.5, 0.0]]), np.array([-1.0, -1.0]),
        np.array([0, 1]), {0: 2.0, 1: 2.0}, 1.0,
    )
    assert np.all(bcd_solve(prob).power <= P_FLOOR)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        bcd_solve(_single(w=-1.0))


def _two_link(w, gain, cross, battery, N0, p_max):
    return PowerProblem(
        np.array(w), np.array(gain), np.array([[0.0, cross[0]], [cross[1], 0.0]]),
        np.array(battery), np.array([0, 1]), np.array([p_max, p_max]), N0,
    )


# oracle output frozen from tests/oracles.power_grid_oracle (step 1e-3)
TWO_LINK_CASES = [
    (dict(w=(30.0, 20.0), gain=(1.0, 0.8), cross=(0.3, 0.5), battery=(-20.0, -15.0), N0=1.0, p_max=2.0),
     -55.13078561052241),
    (dict(w=(5.0, 8.0), gain=(1.0, 1.0), cross=(1.0, 1.0), battery=(-1.0, -1.0), N0=1.0, p_max=2.0),
     -8.49306144334055),
    (dict(w=(3.0, 1.0), gain=(2.0, 0.5), cross=(0.8, 0.9), battery=(-0.5, -4.0), N0=0.5, p_max=1.5),
     0.19053937597228598),
]


@pytest.mark.parametrize("case, grid_best", TWO_LINK_CASES)
def test_two_link_matches_grid_search(case, grid_best):
    res = bcd_solve(_two_link(**case))
    assert abs(res.history[-1] - grid_best) <= 1e-4


def test_frozen_grid_values_reproduce():
    case, grid_best = TWO_LINK_CASES[0]
    *_, best = oracles.power_grid_oracle(
        case["w"], case["gain"], case["cross"], case["battery"], case["N0"], case["p_max"]
    )
    assert best == pytest.approx(grid_best, abs=1e-12)


def random_problem(rng, n_nodes=3, links_per_node=2):
    owner = np.repeat(np.arange(n_nodes), links_per_node)
    L = len(owner)
    cross = rng.uniform(0.0, 1.0, (L, L)) * (owner[:, None] != owner[None, :])
    return PowerProblem(
        weights=rng.uniform(0.1, 10.0, L),
        gain=rng.uniform(0.5, 2.0, L),
        cross=cross,
        battery=-rng.uniform(0.1, 10.0, L).repeat(1)[owner],
        owner=owner,
        p_max=rng.uniform(0.5, 3.0, n_nodes),
        N0=float(rng.uniform(0.01, 1.0)),
    )


@given(st.integers(0, 2**31 - 1))
def test_ascent_feasibility_and_stationarity(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng)
    res = bcd_solve(prob)
    h = np.asarray(res.history)
    assert np.all(np.diff(h) >= -1e-12)
    per_node = np.bincount(prob.owner, weights=res.power)
    assert np.all(per_node <= np.asarray(prob.p_max) + 1e-9)
    if not res.hit_cap:
        assert projected_gradient_norm(res.log_power, prob) < 10 * 1e-6


@given(
    st.lists(st.floats(-5, 3), min_size=1, max_size=5),
    st.floats(0.1, 5.0),
)
def test_projection_is_nearest_feasible_point(z, cap):
    z = np.asarray(z)
    y = project_block(z, cap)
    assert np.exp(y).sum() <= cap * (1 + 1e-9)
    if np.exp(z).sum() <= cap:
        assert np.allclose(y, z)
        return
    ref = minimize(
        lambda v: ((v - z) ** 2).sum(), np.full_like(z, math.log(cap / len(z)) - 0.1),
        jac=lambda v: 2 * (v - z),
        constraints=[{"type": "ineq", "fun": lambda v: cap - np.exp(v).sum()}],
        method="SLSQP", options={"ftol": 1e-14, "maxiter": 500},
    )
    # the reference may sit a hair outside the constraint, so compare points
    assert np.allclose(y, ref.x, atol=1e-5)
