"""Independent brute-force oracles used to check the closed forms and the solver.

Nothing here imports the package: each oracle evaluates the stated objective
directly on a grid or from scratch arithmetic.
"""

import math

import numpy as np

GRID_STEP = 1e-3


def grid(lo, hi, step=GRID_STEP):
    n = int(round((hi - lo) / step))
    return np.linspace(lo, hi, n + 1)


# ------------------------------------------------ per-slot subproblems (minimised)


def source_rate_oracle(Q, Z, E, theta, p_sense, R_max):
    """argmin over r in {0, R_max} of ``r * (Q - Z - (E - theta) * p_sense)``; ties -> 0."""
    cost = lambda r: r * (Q - Z - (E - theta) * p_sense)
    return 0.0 if cost(0.0) <= cost(R_max) else R_max


def virtual_rate_oracle(Z, V, omega1, beta, R_max):
    """argmin over a grid of ``Z * x - V * omega1 * beta * ln(1 + x)`` on [0, R_max]."""
    xs = grid(0.0, R_max)
    cost = Z * xs - V * omega1 * beta * np.log1p(xs)
    return float(xs[np.argmin(cost)])


def drop_oracle(Q, Qtilde, V, omega1, beta, D_max):
    """argmin over D in {0, D_max} of ``D * (V*omega1*beta - Q - Qtilde)``; ties -> 0."""
    cost = lambda d: d * (V * omega1 * beta - Q - Qtilde)
    return 0.0 if cost(0.0) <= cost(D_max) else D_max


def energy_cost(e, g, E, theta, s_grid, V, omega1, omega2, harvests, grid_powered):
    """Energy-management objective: battery drift term plus the weighted purchase cost."""
    e = e * harvests
    g = g * grid_powered
    return (E - theta) * (e + g) + V * (1 - omega1) * omega2 * s_grid * g


def energy_oracle(E, theta, h, g_max, s_grid, V, omega1, omega2, harvests, grid_powered):
    """Grid minimiser over ``e in [0, h]``, ``g in [0, g_max]`` with ``E + e + g <= theta``.

    Returns ``(e, g, best_cost)``.
    """
    es = grid(0.0, h) if harvests else np.zeros(1)
    gs = grid(0.0, g_max) if grid_powered else np.zeros(1)
    cost = energy_cost(es[:, None], gs[None, :], E, theta, s_grid, V, omega1, omega2, harvests, grid_powered)
    cost = np.where(E + es[:, None] + gs[None, :] <= theta + 1e-12, cost, np.inf)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    return float(es[i]), float(gs[j]), float(cost[i, j])


def energy_oracle_prefix(E, theta, h, g_max, s_grid, V, omega1, omega2, harvests, grid_powered):
    """Same grid minimum as :func:`energy_oracle`, in linear rather than quadratic time.

    The cost is a sum of an ``e`` term and a ``g`` term, and for each grid ``e``
    the feasible grid ``g`` values are a prefix of the ``g`` grid.  A running
    minimum over the ``g`` term therefore covers every feasible cell.
    """
    es = grid(0.0, h) if harvests else np.zeros(1)
    gs = grid(0.0, g_max) if grid_powered else np.zeros(1)
    e_term = energy_cost(es, 0.0, E, theta, s_grid, V, omega1, omega2, harvests, grid_powered)
    g_term = energy_cost(0.0, gs, E, theta, s_grid, V, omega1, omega2, harvests, grid_powered)
    run_min = np.minimum.accumulate(g_term)
    run_arg = np.zeros(len(gs), dtype=int)
    for j in range(1, len(gs)):
        run_arg[j] = j if g_term[j] < run_min[j - 1] else run_arg[j - 1]
    # number of feasible g grid points for each e
    n_ok = np.searchsorted(gs, theta + 1e-12 - E - es, side="right")
    best, bi, bj = np.inf, 0, 0
    for i in np.flatnonzero(n_ok > 0):
        j = run_arg[n_ok[i] - 1]
        c = e_term[i] + g_term[j]
        if c < best:
            best, bi, bj = c, i, j
    return float(es[bi]), float(gs[bj]), float(best)


# ------------------------------------------------ power allocation (maximised)


def power_objective_2link(p1, p2, w, gain, cross, battery, N0):
    """High-SINR objective for two links on the same channel, powers in linear scale."""
    with np.errstate(divide="ignore"):
        s1 = np.log(gain[0] * p1 / (N0 + cross[0] * p2))
        s2 = np.log(gain[1] * p2 / (N0 + cross[1] * p1))
    return w[0] * s1 + w[1] * s2 + battery[0] * p1 + battery[1] * p2


def power_grid_oracle(w, gain, cross, battery, N0, p_max, step=GRID_STEP):
    """Exhaustive search over ``(p1, p2) in (0, p_max]^2`` at ``step``."""
    ps = grid(0.0, p_max, step)[1:]
    val = power_objective_2link(ps[:, None], ps[None, :], w, gain, cross, battery, N0)
    i, j = np.unravel_index(np.argmax(val), val.shape)
    return float(ps[i]), float(ps[j]), float(val[i, j])


# ------------------------------------------------ bound arithmetic


def bounds_oracle(V, omega1, beta, R_max, eps, mu_in, mu_out, D_max, rho, delta, p_total_max):
    """Per-pair bounds straight from their definitions."""
    z = V * omega1 * beta + R_max
    qt = V * omega1 * beta + eps
    q = V * omega1 * beta + mu_in + R_max
    theta = 2 * delta * V * omega1 * beta + p_total_max + delta * (mu_in + R_max + eps)
    w = max(((1 + rho) * q + rho * qt) / (rho * eps), 2 * qt / (mu_out + D_max - eps))
    return {"z_max": z, "qtilde_max": qt, "q_max": q, "theta_E": theta, "w_max": w, "w_cap": math.ceil(w)}
