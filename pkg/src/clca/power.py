"""SINR, link capacity and the log-domain block-coordinate power solver.

With log-powers ``x = ln p`` and the high-SINR capacity ``ln(gamma)`` the
per-slot power objective

    sum_l  w_l * (ln S_l + x_l - ln(N0 + sum_k cross[l, k] * exp(x_k)))
         + sum_l  c_l * exp(x_l)

is concave in ``x`` (``c_l = E - theta <= 0`` of the link's transmitter).  It is
maximised block by block, one transmitting node at a time, subject to each
node's power cap ``sum_b exp(x_b) <= P_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import wrightomega

P_FLOOR = 1e-20
X_MIN = math.log(P_FLOOR)


class SolverDegenerate(ArithmeticError):
    """The objective is not finite at the starting point (e.g. a zero channel)."""


def interference_matrix(s_channel, tx, rx, channel):
    """``cross[l, k]``: gain from link k's transmitter into link l's receiver.

    Link k interferes with link l when both use the same channel and have
    different transmitters.
    """
    tx = np.asarray(tx)
    rx = np.asarray(rx)
    channel = np.asarray(channel)
    mask = (channel[:, None] == channel[None, :]) & (tx[:, None] != tx[None, :])
    return np.where(mask, s_channel[tx[None, :], rx[:, None]], 0.0)


def sinr(power, s_channel, tx, rx, channel, N0):
    """Per-link SINR for link powers ``power[L]``."""
    power = np.asarray(power, dtype=float)
    direct = s_channel[tx, rx] * power
    interference = interference_matrix(s_channel, tx, rx, channel) @ power
    return direct / (N0 + interference)


def capacity(gamma):
    """High-SINR capacity ``ln(gamma)``; ``-inf`` at zero SINR."""
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(gamma)
    return out if out.ndim else float(out)


def exact_capacity(gamma):
    out = np.log1p(np.asarray(gamma, dtype=float))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PowerProblem:
    """Power allocation over the active links of one slot.

    All arrays are indexed by active link.  ``owner`` holds the transmitting
    node of each link and ``p_max`` maps node index to its cap (a mapping or
    an array indexed by node).
    """

    weights: np.ndarray
    gain: np.ndarray
    cross: np.ndarray
    battery: np.ndarray
    owner: np.ndarray
    p_max: dict
    N0: float

    def __post_init__(self):
        owner = np.asarray(self.owner, dtype=np.intp)
        object.__setattr__(self, "owner", owner)
        if isinstance(self.p_max, dict):
            caps = np.array([self.p_max[int(o)] for o in owner], dtype=float)
        else:
            caps = np.asarray(self.p_max, dtype=float)[owner]
        object.__setattr__(self, "link_cap", caps)

    @classmethod
    def from_links(
        cls, links, weights, s_channel, tx, rx, channel, battery_node, p_max, N0, coupled=True
    ):
        """Build from model-level link arrays restricted to ``links``.

        With ``coupled=False`` the caller asserts that no two of these links
        share a channel, and the interference matrix is left at zero.
        """
        links = np.asarray(links, dtype=np.intp)
        t, r = np.asarray(tx)[links], np.asarray(rx)[links]
        if coupled:
            cross = interference_matrix(s_channel, t, r, np.asarray(channel)[links])
        else:
            cross = np.zeros((len(links), len(links)))
        return cls(
            weights=np.asarray(weights, dtype=float),
            gain=s_channel[t, r],
            cross=cross,
            battery=np.asarray(battery_node, dtype=float)[t],
            owner=t,
            p_max=np.asarray(p_max, dtype=float),
            N0=float(N0),
        )

    def cap_of(self, node):
        return float(self.link_cap[np.flatnonzero(self.owner == node)[0]])

    @property
    def size(self):
        return len(self.weights)

    @property
    def coupled(self):
        return bool(np.any(self.cross > 0))


def bcd_objective(x, problem):
    """Objective at log-powers ``x``."""
    if problem.size == 0:
        return 0.0
    x = np.asarray(x, dtype=float)
    p = np.exp(x)
    with np.errstate(divide="ignore"):
        psi = np.log(problem.gain) + x - np.log(problem.N0 + problem.cross @ p)
    return float(problem.weights @ psi + problem.battery @ p)


def objective_gradient(x, problem):
    p = np.exp(x)
    denom = problem.N0 + problem.cross @ p
    return problem.weights + problem.battery * p - p * (problem.cross.T @ (problem.weights / denom))


def project_block(z, cap, x_min=X_MIN):
    """Euclidean projection of log-powers onto ``{sum exp(y) <= cap, y >= x_min}``.

    Stationarity gives ``y_i = z_i - W(lam * exp(z_i))`` (W the Lambert function,
    evaluated as the Wright omega of ``ln lam + z_i``) clipped at ``x_min``, with
    the multiplier ``lam`` fixed by the cap.
    """
    z = np.asarray(z, dtype=float)
    y = np.maximum(z, x_min)
    if np.exp(y).sum() <= cap:
        return y

    def y_of(mu):
        return np.maximum(z - wrightomega(mu + z).real, x_min)

    def excess(mu):
        return np.exp(y_of(mu)).sum() - cap

    target = math.log(cap / len(z))
    spread = np.maximum(z - target, 0.0).max()
    hi = math.log(max(spread, 1e-300) / math.exp(target)) + 1.0
    while excess(hi) > 0:
        hi += 5.0
    lo = hi - 10.0
    while excess(lo) < 0:
        lo -= 10.0
    mu = brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    y = y_of(mu)
    total = np.exp(y).sum()
    if total > cap:
        y = np.maximum(y - math.log(total / cap), x_min)
    return y


def decoupled_solution(problem):
    """Exact optimum when no link interferes with another.

    Per node the problem is ``max sum w_b ln p_b + c sum p_b`` under the cap:
    ``p_b = w_b / (-c)`` unless the cap binds, then ``p`` is proportional to ``w``.
    """
    w = problem.weights
    c = problem.battery
    cap = problem.link_cap
    _, inv = np.unique(problem.owner, return_inverse=True)
    wsum = np.bincount(inv, weights=w)[inv]
    with np.errstate(divide="ignore", invalid="ignore"):
        free = np.where(c < 0, w / -c, np.inf)
        total = np.where(c < 0, wsum / -c, np.inf)
        p = np.where(total <= cap, free, cap * w / wsum)
    return np.maximum(np.nan_to_num(p, nan=0.0), P_FLOOR)


@dataclass
class BCDResult:
    power: np.ndarray
    log_power: np.ndarray
    history: list
    sweeps: int
    grad_norm: float
    hit_cap: bool


def _block_ascent(x, idx, cap, problem, f0, tol, max_inner, step0, shrink, sigma):
    """Projected gradient ascent on one block.

    Returns ``(x, f, entry_norm, hit)`` where ``entry_norm`` is the block's
    projected-gradient norm before any step and ``hit`` tells whether the
    inner iteration limit was reached.
    """
    f = f0
    entry = None
    for _ in range(max_inner):
        g = objective_gradient(x, problem)[idx]
        xb = x[idx]
        gnorm = float(np.linalg.norm(project_block(xb + g, cap) - xb))
        if entry is None:
            entry = gnorm
        if gnorm < tol:
            return x, f, entry, False
        s = step0
        accepted = False
        while s > 1e-14:
            cand = project_block(xb + s * g, cap)
            trial = x.copy()
            trial[idx] = cand
            ft = bcd_objective(trial, problem)
            if ft >= f + sigma * g @ (cand - xb):
                accepted = True
                break
            s *= shrink
        if not accepted:
            # no ascent step survives rounding: the block is as good as it gets
            return x, f, entry, False
        x, f = trial, ft
    return x, f, entry, True


def bcd_solve(
    problem,
    tol=1e-6,
    max_outer=20,
    max_inner=50,
    x0=None,
    step0=1.0,
    shrink=0.5,
    sigma=1e-4,
):
    """Gauss-Seidel block ascent over transmitting nodes in ascending order.

    Each block runs projected gradient ascent with Armijo backtracking on the
    full objective.  The solve has converged once a sweep finds every block
    with projected-gradient norm below ``tol`` on entry; otherwise it stops
    after ``max_outer`` sweeps with ``hit_cap`` set.  ``history`` holds the
    objective at the start and after every sweep.
    """
    if problem.size == 0:
        return BCDResult(np.zeros(0), np.zeros(0), [0.0], 0, 0.0, False)
    if np.any(problem.weights < 0):
        raise ValueError("link weights must be non-negative")
    if x0 is None:
        p0 = decoupled_solution(problem)
        x = np.log(p0)
    else:
        x = np.asarray(x0, dtype=float).copy()
        for node in np.unique(problem.owner):
            idx = np.flatnonzero(problem.owner == node)
            x[idx] = project_block(x[idx], problem.cap_of(node))
    f = bcd_objective(x, problem)
    if not np.isfinite(f):
        raise SolverDegenerate("power objective is not finite at the start point")
    history = [f]
    if not problem.coupled and x0 is None:
        # the closed form itself, not exp(log(p)), which can move p by an ulp
        return BCDResult(p0, x, history, 0, 0.0, False)

    blocks = [
        (np.flatnonzero(problem.owner == n), problem.cap_of(n)) for n in np.unique(problem.owner)
    ]
    hit_cap = True
    sweeps = 0
    for sweeps in range(1, max_outer + 1):
        worst_entry = 0.0
        for idx, cap in blocks:
            x, f, entry, _ = _block_ascent(x, idx, cap, problem, f, tol, max_inner, step0, shrink, sigma)
            worst_entry = max(worst_entry, entry)
        history.append(f)
        if worst_entry < tol:
            hit_cap = False
            break
    return BCDResult(np.exp(x), x, history, sweeps, projected_gradient_norm(x, problem), hit_cap)


def projected_gradient_norm(x, problem):
    """Largest per-block norm of ``P(x + grad) - x``; zero at a block-stationary point."""
    g = objective_gradient(x, problem)
    worst = 0.0
    for n in np.unique(problem.owner):
        idx = np.flatnonzero(problem.owner == n)
        step = project_block(x[idx] + g[idx], problem.cap_of(n)) - x[idx]
        worst = max(worst, float(np.linalg.norm(step)))
    return worst
