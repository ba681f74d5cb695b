"""Slot objective, run reports, bound checks and sweep verdicts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .env import price

SUMMARY_COLUMNS = (
    "V",
    "seed",
    "algo",
    "phi_bar",
    "avg_Q",
    "avg_Qtilde",
    "avg_Z",
    "avg_E",
    "drops_realized",
    "drops_decided",
    "max_delay_ratio",
    "violations",
    "B_bound",
    "gap_bound",
)

# violations kept verbatim in a report; the count is always exact
MAX_STORED_VIOLATIONS = 1000
BOUND_TOL = 1e-9


def log_utility(x, beta):
    """U(x) = beta * ln(1 + x): concave, U(0) = 0, right-derivative beta at 0."""
    return beta * np.log1p(x)


def slot_objective(decisions, env, model):
    """Per-slot objective from decided admissions-side rates, drops and purchases.

    Uses the decided drops ``D`` rather than realized ones.
    """
    p = model.params
    beta = model.beta
    utility = (log_utility(decisions.r_aux, beta) * model.is_source).sum()
    drop_cost = (beta * decisions.D).sum()
    grid = np.asarray(model.grid_powered)
    cost = (price(env.s_price, decisions.g) * decisions.g * grid).sum()
    return float(p.omega1 * (utility - drop_cost) - (1 - p.omega1) * p.omega2 * cost)


def compute_B(model):
    """Drift constant with every decision at its cap.

    Each squared group ``(a - b)^2`` with ``a in [0, a_max]`` and
    ``b in [0, b_max]`` is bounded by ``max(a_max, b_max)^2``.
    """
    p = model.params
    caps = model.caps
    N, F = model.n_nodes, model.n_sessions
    out_max = caps.mu_out_max[:, None] + p.D_max  # [n, 1]
    in_max = caps.mu_in_max[:, None] + p.R_max * model.is_source
    data = np.maximum(np.broadcast_to(out_max, (N, F)), in_max) ** 2
    flow = np.full(F, p.R_max**2)
    eps = model.epsilon[None, :]
    delay = np.maximum((out_max - eps).clip(min=0), eps) ** 2
    intake = p.h_max * np.asarray(model.harvests) + model.g_max
    energy = np.maximum(intake, caps.p_total_max) ** 2
    return 0.5 * float(data.sum() + flow.sum() + delay.sum() + energy.sum())


@dataclass
class Violation:
    slot: int
    node: int
    session: int
    invariant: str
    value: float
    bound: float


def assert_bounds(state, bounds, slot, holds=None, check_qtilde=True):
    """Check the queue bounds on an end-of-slot state; returns a list of violations."""
    out = []
    checks = [("Z", state.Z, bounds.z_max), ("Q", state.Q, bounds.q_max)]
    if check_qtilde:
        checks.insert(1, ("Qtilde", state.Qtilde, bounds.qtilde_max))
    for name, val, cap in checks:
        bad = val > cap + BOUND_TOL
        if holds is not None:
            bad &= holds
        if bad.any():
            for n, f in zip(*np.nonzero(bad)):
                out.append(Violation(slot, int(n), int(f), name, float(val[n, f]), float(cap[n, f])))
    over = state.E > bounds.theta_E + BOUND_TOL
    for n in np.flatnonzero(over):
        out.append(Violation(slot, int(n), -1, "E", float(state.E[n]), float(bounds.theta_E[n])))
    return out


def energy_violations(E_start, p_total, p_total_max, powered, slot):
    """Energy availability: ``E >= p_total`` when consuming, ``E >= p_total_max`` when powered."""
    out = []
    for n in np.flatnonzero((p_total > 0) & (E_start < p_total - BOUND_TOL)):
        out.append(Violation(slot, int(n), -1, "energy_available", float(E_start[n]), float(p_total[n])))
    for n in np.flatnonzero(powered & (E_start < p_total_max - BOUND_TOL)):
        out.append(
            Violation(slot, int(n), -1, "energy_reserve", float(E_start[n]), float(p_total_max[n]))
        )
    return out


def delay_cap(bounds):
    """Integer delay cap per (node, session): ``ceil(W)``, inf where undefined."""
    w = np.asarray(bounds.w_max, dtype=float)
    return np.where(np.isfinite(w), np.ceil(w - 1e-9), np.inf)


def delay_report(max_delay, bounds):
    """``(max_delay, ratio)`` per (node, session); the ratio uses ``ceil(W)``."""
    cap = delay_cap(bounds)
    md = np.asarray(max_delay, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(md > 0, md / cap, 0.0)
    return md, ratio


@dataclass
class RunReport:
    V: float
    seed: int
    algo: str
    slots: int
    phi_bar: float
    avg_Q: float
    avg_Qtilde: float
    avg_Z: float
    avg_E: float
    drops_realized: float
    drops_decided: float
    max_delay: np.ndarray
    max_delay_ratio: float
    violations: int
    violation_counts: dict = field(default_factory=dict)
    violation_log: list = field(default_factory=list)
    B_bound: float = 0.0
    gap_bound: float = 0.0
    solver_hit_cap: bool = False
    capacity_assumption_violations: int = 0
    delivered: float = 0.0
    admitted: float = 0.0
    max_pending_age: float = 0.0

    def to_row(self):
        return {
            "V": self.V,
            "seed": self.seed,
            "algo": self.algo,
            "phi_bar": self.phi_bar,
            "avg_Q": self.avg_Q,
            "avg_Qtilde": self.avg_Qtilde,
            "avg_Z": self.avg_Z,
            "avg_E": self.avg_E,
            "drops_realized": self.drops_realized,
            "drops_decided": self.drops_decided,
            "max_delay_ratio": self.max_delay_ratio,
            "violations": self.violations,
            "B_bound": self.B_bound,
            "gap_bound": self.gap_bound,
        }

    @property
    def end_to_end_delay(self):
        """Per-session sum of per-node maximum delays (an envelope, not a bound)."""
        return self.max_delay.sum(axis=0)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_rows(rows):
    """Rows (dicts) to CSV text sorted by (V, seed, algo); full precision floats."""
    rows = sorted(rows, key=lambda r: (float(r["V"]), int(r["seed"]), str(r["algo"])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


class CSVFormatError(ValueError):
    pass


def read_summary(path_or_text):
    """Parse a summary CSV into a list of typed dicts."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_COLUMNS:
        raise CSVFormatError(f"unexpected header {reader.fieldnames}")
    rows = []
    for i, raw in enumerate(reader, start=2):
        try:
            row = {c: float(raw[c]) for c in SUMMARY_COLUMNS if c != "algo"}
        except (TypeError, ValueError) as exc:
            raise CSVFormatError(f"line {i}: {exc}") from exc
        row["seed"] = int(row["seed"])
        row["violations"] = int(row["violations"])
        row["algo"] = raw["algo"]
        rows.append(row)
    return rows


# ------------------------------------------------------------------ verdicts


@dataclass
class Verdict:
    name: str
    status: str  # PASS, FAIL or SKIPPED
    detail: str

    @property
    def ok(self):
        return self.status != "FAIL"


def _by_v(rows, algo, column):
    out = {}
    for r in rows:
        if r["algo"] == algo:
            out.setdefault(r["V"], []).append(r[column])
    return {v: np.asarray(x, dtype=float) for v, x in sorted(out.items())}


def mean_and_se(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def monotone_verdict(rows, algo="clca"):
    """Objective non-decreasing in V within one standard error, with shrinking increments.

    A step from ``V_k`` to ``V_{k+1}`` passes when the drop in the mean is at
    most the standard error of the difference.  The shrinking-increment check
    compares the two V intervals ``(150, 350)`` and ``(3500, 6000)`` when both
    are present.
    """
    grouped = _by_v(rows, algo, "phi_bar")
    if len(grouped) < 2:
        return Verdict("objective monotone in V", "SKIPPED", "fewer than two V values")
    vs = list(grouped)
    stats = [mean_and_se(grouped[v]) for v in vs]
    failures = []
    for (v0, (m0, s0)), (v1, (m1, s1)) in zip(zip(vs, stats), zip(vs[1:], stats[1:])):
        if m1 < m0 - math.hypot(s0, s1):
            failures.append(f"phi_bar({v1:g})={m1:.5f} < phi_bar({v0:g})={m0:.5f}")
    detail = ", ".join(f"{v:g}:{m:.4f}±{s:.4f}" for v, (m, s) in zip(vs, stats))
    means = dict(zip(vs, (m for m, _ in stats)))
    if all(v in means for v in (150.0, 350.0, 3500.0, 6000.0)):
        early = means[350.0] - means[150.0]
        late = means[6000.0] - means[3500.0]
        if not late < early:
            failures.append(f"increment 3500->6000 ({late:.5f}) not below 150->350 ({early:.5f})")
        detail += f"; increments 150->350={early:.5f}, 3500->6000={late:.5f}"
    status = "FAIL" if failures else "PASS"
    return Verdict("objective monotone in V", status, "; ".join(failures) or detail)


def linear_fit(x, y):
    """Least-squares line; returns ``(slope, intercept, r_squared)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def total_backlog(row):
    return row["avg_Q"] + row["avg_Qtilde"] + row["avg_Z"]


def backlog_verdict(rows, algo="clca", threshold=0.95):
    pts = [(r["V"], total_backlog(r)) for r in rows if r["algo"] == algo]
    if len({v for v, _ in pts}) < 3:
        return Verdict("backlog linear in V", "SKIPPED", "fewer than three V values")
    slope, icpt, r2 = linear_fit(*zip(*pts))
    status = "PASS" if r2 >= threshold else "FAIL"
    return Verdict("backlog linear in V", status, f"slope={slope:.5f} R^2={r2:.5f}")


def drop_verdict(rows, v_ref=750.0):
    """CLCA drops nothing at ``v_ref``, the baseline does, and never beats CLCA's objective."""
    clca = _by_v(rows, "clca", "phi_bar")
    neely = _by_v(rows, "neely", "phi_bar")
    if not clca or not neely:
        return Verdict("drop comparison", "SKIPPED", "needs both clca and neely rows")
    failures = []
    drops_c = [r["drops_realized"] for r in rows if r["algo"] == "clca" and r["V"] == v_ref]
    drops_n = [r["drops_realized"] for r in rows if r["algo"] == "neely" and r["V"] == v_ref]
    if drops_c and max(drops_c) != 0:
        failures.append(f"clca drops at V={v_ref:g}: {max(drops_c):g}")
    if drops_n and not min(drops_n) > 0:
        failures.append(f"neely drops at V={v_ref:g}: {min(drops_n):g}")
    for v in neely:
        if v in clca:
            # compare seed by seed where both ran
            pairs = {}
            for r in rows:
                if r["V"] == v:
                    pairs.setdefault(r["seed"], {})[r["algo"]] = r["phi_bar"]
            for s, d in sorted(pairs.items()):
                if "clca" in d and "neely" in d and d["neely"] > d["clca"]:
                    failures.append(f"neely phi_bar beats clca at V={v:g}, seed={s}")
    detail = f"clca drops@{v_ref:g}={drops_c}, neely drops@{v_ref:g}={drops_n}"
    return Verdict("drop comparison", "FAIL" if failures else "PASS", "; ".join(failures) or detail)


def delay_verdict(rows, algo="clca"):
    ratios = [r["max_delay_ratio"] for r in rows if r["algo"] == algo]
    if not ratios:
        return Verdict("delay within bound", "SKIPPED", "no rows")
    worst = max(ratios)
    return Verdict("delay within bound", "PASS" if worst <= 1.0 else "FAIL", f"max ratio={worst:.4f}")


def all_verdicts(rows):
    return [monotone_verdict(rows), backlog_verdict(rows), drop_verdict(rows), delay_verdict(rows)]
