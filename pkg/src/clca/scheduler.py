"""Per-slot CLCA decisions and the simulation loop.

Every slot the controller observes queue backlogs, the battery levels and a
fresh random environment, then

1. decides drops from the sum of real and virtual backlog,
2. picks one session per link by back-pressure weight,
3. allocates transmit power with the block-coordinate solver,
4. turns the resulting capacities into link rates,
5. harvests and buys energy,
6. chooses auxiliary (virtual) input rates,
7. serves and drops from the real queues,
8. admits new packets at the sources,
9. updates the virtual and energy queues.

The closed-form subproblem solutions are module-level functions that accept
scalars or numpy arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .env import EnvSampler
from .power import PowerProblem, SolverDegenerate, bcd_solve, capacity, interference_matrix
from .queues import (
    FifoLedger,
    InvariantViolation,
    QueueState,
    apply_service_and_drops,
    admit,
    update_delay_queue,
    update_flow_queue,
)

log = logging.getLogger(__name__)


# ------------------------------------------------------------ closed forms


def utility(x, beta):
    return metrics.log_utility(x, beta)


def source_rate(Q, Z, E, theta, p_sense, R_max):
    """Admit at full rate while the backlog is below the flow/energy threshold."""
    return np.where(np.asarray(Q) < np.asarray(Z) + (np.asarray(E) - theta) * p_sense, R_max, 0.0)


def virtual_input_rate(Z, V, omega1, beta, R_max):
    """Maximiser of ``V*omega1*beta*ln(1 + x) - Z*x`` over ``[0, R_max]``."""
    Z = np.asarray(Z, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        interior = V * omega1 * beta / Z - 1.0
    return np.where(Z > 0, np.clip(interior, 0.0, R_max), R_max)


def drop_decision(Q, Qtilde, V, omega1, beta, D_max):
    return np.where(np.asarray(Q) + Qtilde > V * omega1 * beta, D_max, 0.0)


def link_weight(Q_n, Q_b, E_b, theta_b, p_recv_b, Qtilde_n):
    return Q_n - Q_b + (E_b - theta_b) * p_recv_b + Qtilde_n


def select_sessions(weights):
    """Per link (row) the best session and its weight; ties go to the lowest index.

    Returns ``(session, weight, active)``; a link is active only when its best
    weight is strictly positive.
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    best = np.argmax(weights, axis=1)
    w = weights[np.arange(len(weights)), best]
    return best, w, w > 0


def allocate_rates(cap, mu_max):
    """Link rate from the high-SINR capacity: ``min(max(C, 0), mu_max)``."""
    return np.minimum(np.maximum(cap, 0.0), mu_max)


def energy_management(E, theta, h, g_max, s_grid, V, omega1, omega2, power_class=None, *, harvests=None, grid=None):
    """Harvest first (it is free), then buy from the grid while it is worth it.

    ``power_class`` (a label or array of labels) sets which intakes are
    available; precomputed boolean masks may be passed instead.
    """
    if harvests is None or grid is None:
        pc = np.asarray(power_class)
        harvests = np.isin(pc, ("EH", "ME"))
        grid = np.isin(pc, ("EG", "ME"))
    head = np.maximum(np.asarray(theta, dtype=float) - E, 0.0)
    e = np.where(harvests, np.minimum(h, head), 0.0)
    coeff = (np.asarray(E) - theta) + V * (1 - omega1) * omega2 * np.asarray(s_grid)
    g = np.where(grid & (coeff < 0), np.minimum(g_max, head - e), 0.0)
    g = np.maximum(g, 0.0)
    if np.ndim(e) == 0:
        return float(e), float(g)
    return e, g


# ------------------------------------------------------------ decisions


@dataclass
class SlotDecision:
    """Control outputs of one slot.

    Link-indexed arrays follow the model's link order; ``mu`` expands the
    per-link rate into the ``[link, session]`` layout.
    """

    r: np.ndarray
    r_aux: np.ndarray
    D: np.ndarray
    link_session: np.ndarray
    link_rate: np.ndarray
    p_T: np.ndarray
    e: np.ndarray
    g: np.ndarray
    link_weight: np.ndarray = None
    solver_sweeps: int = 0
    solver_grad_norm: float = 0.0
    solver_hit_cap: bool = False

    @property
    def mu(self):
        out = np.zeros((len(self.link_rate), self.r.shape[1]))
        out[np.arange(len(self.link_rate)), self.link_session] = self.link_rate
        return out


@dataclass(frozen=True)
class Variant:
    """Algorithm selector.

    ``clca`` uses the delay virtual queue.  ``neely`` swaps in the
    persistent-service queue; ``gated`` makes its persistent arrival depend
    on a non-empty real queue and ``substitute_weights`` also uses it in the
    link weights (otherwise only in the drop decision).
    """

    name: str = "clca"
    gated: bool = True
    substitute_weights: bool = True

    def __post_init__(self):
        if self.name not in ("clca", "neely"):
            raise ValueError(f"unknown algorithm {self.name!r}")


CLCA = Variant("clca")
NEELY = Variant("neely")


def variant_for(algo):
    if isinstance(algo, Variant):
        return algo
    return Variant(str(algo))


@dataclass
class SlotMetrics:
    phi: float
    drops_realized: float
    drops_decided: float
    delivered: float
    admitted: float
    delay_samples: list
    violations: list
    capacity_assumption_violations: int


# ------------------------------------------------------------ simulation


class Simulation:
    """Stateful CLCA (or baseline) run over one model.

    ``strict`` escalates any invariant violation into an exception; otherwise
    violations are collected in the report.
    """

    def __init__(self, model, seed=None, variant=CLCA, strict=False, check_ledger=False):
        self.model = model
        self.variant = variant_for(variant)
        self.strict = strict
        self.check_ledger = check_ledger
        p = model.params
        self.seed = p.seed if seed is None else int(seed)
        self.env = EnvSampler(model, self.seed)
        N, F = model.n_nodes, model.n_sessions
        self.N, self.F, self.L = N, F, model.n_links
        self.state = QueueState.zeros(N, F)
        self.ledger = FifoLedger(N, F)
        self.t = 0

        b = model.bounds
        self.theta = np.asarray(b.theta_E)
        self.beta = model.beta
        self.eps = model.epsilon
        self.p_sense = model.p_sense
        self.p_recv = model.p_recv
        self.p_max = model.p_max
        self.g_max = model.g_max
        self.harvests = model.harvests
        self.grid = model.grid_powered
        self.holds = np.asarray(model.holds)
        self.is_src = np.asarray(model.is_source)
        self.tx = np.asarray(model.tx)
        self.rx = np.asarray(model.rx)
        self.channel = np.asarray(model.channel)
        self.mu_out = np.asarray(model.caps.mu_out_max)
        self.p_total_max = np.asarray(model.caps.p_total_max)
        self.drop_threshold = p.V * p.omega1 * self.beta  # [F]
        # link may carry session f only if its transmitter holds f
        self.link_holds = self.holds[self.tx]
        # links whose receiver is the session's sink deliver out of the network
        self.link_delivers = ~self.holds[self.rx]
        self.channel_shared = bool(
            np.any(interference_matrix(np.ones((N, N)), self.tx, self.rx, self.channel) > 0)
        )
        self.delay_cap = metrics.delay_cap(b)
        self.max_delay = np.zeros((N, F))

        self._reset_accumulators()

    def _reset_accumulators(self):
        self.slots_run = 0
        self.sum_phi = 0.0
        self.sum_Q = self.sum_Qt = self.sum_Z = self.sum_E = 0.0
        self.drops_realized = 0.0
        self.drops_decided = 0.0
        self.delivered = 0.0
        self.admitted = 0.0
        self.n_violations = 0
        self.violation_counts = {}
        self.violation_log = []
        self.hit_cap = False
        self.cap_assumption = 0

    # the delay-enforcing virtual queue this variant uses
    def _virtual(self):
        return self.state.Qtilde if self.variant.name == "clca" else self.state.Zp

    def decide(self, env):
        """Steps 1-7: all control decisions from the start-of-slot state."""
        m = self.model
        p = m.params
        s = self.state
        Q, Z, E = s.Q, s.Z, s.E
        virt = self._virtual()
        battery = E - self.theta  # <= 0

        # nodes short of their worst-case consumption stay idle this slot
        ready = E >= self.p_total_max

        D = drop_decision(Q, virt, p.V, p.omega1, self.beta, p.D_max) * self.holds

        weight_virt = virt if (self.variant.name == "clca" or self.variant.substitute_weights) else s.Qtilde
        W = link_weight(
            Q[self.tx],
            Q[self.rx],
            E[self.rx][:, None],
            self.theta[self.rx][:, None],
            self.p_recv[self.rx][:, None],
            weight_virt[self.tx],
        )
        W = np.where(self.link_holds, W, -np.inf)
        sess, w_star, active = select_sessions(W)
        active &= ready[self.tx] & ready[self.rx]

        L = self.L
        p_T = np.zeros(L)
        rate = np.zeros(L)
        sweeps, gnorm, hit = 0, 0.0, False
        links = np.flatnonzero(active)
        if links.size:
            ch = env.s_channel
            keep = ch[self.tx[links], self.rx[links]] > 0
            links = links[keep]
        if links.size:
            prob = PowerProblem.from_links(
                links, w_star[links], env.s_channel, self.tx, self.rx, self.channel,
                battery, self.p_max, p.N0,
            )
            try:
                res = bcd_solve(prob)
            except SolverDegenerate:
                log.debug("slot %d: power solver degenerate, links idle", self.t)
                res = None
            if res is not None:
                sweeps, gnorm, hit = res.sweeps, res.grad_norm, res.hit_cap
                p_T[links] = res.power
                cap = self._capacities(p_T, links, env)
                # negative capacity cannot carry data: refund that power
                dead = links[cap <= 0]
                if dead.size:
                    p_T[dead] = 0.0
                    links = links[cap > 0]
                    cap = self._capacities(p_T, links, env)
                rate[links] = allocate_rates(cap, p.mu_max)
                p_T[links[rate[links] <= 0]] = 0.0

        e, g = energy_management(
            E, self.theta, env.s_harvest, self.g_max, env.s_price, p.V, p.omega1, p.omega2,
            harvests=self.harvests, grid=self.grid,
        )
        r_aux = virtual_input_rate(Z, p.V, p.omega1, self.beta, p.R_max) * self.is_src
        r = source_rate(Q, Z, E[:, None], self.theta[:, None], self.p_sense, p.R_max)
        r = r * self.is_src * ready[:, None]
        return SlotDecision(
            r=r, r_aux=r_aux, D=D, link_session=sess, link_rate=rate, p_T=p_T, e=e, g=g,
            link_weight=w_star, solver_sweeps=sweeps, solver_grad_norm=gnorm, solver_hit_cap=hit,
        )

    def _capacities(self, p_T, links, env):
        if not self.channel_shared:
            gamma = env.s_channel[self.tx[links], self.rx[links]] * p_T[links] / self.model.params.N0
        else:
            t, r = self.tx[links], self.rx[links]
            cross = interference_matrix(env.s_channel, t, r, self.channel[links])
            gamma = env.s_channel[t, r] * p_T[links] / (self.model.params.N0 + cross @ p_T[links])
        return capacity(gamma)

    def step(self, env=None):
        """Run one slot; returns ``(SlotDecision, SlotMetrics)``."""
        m = self.model
        p = m.params
        t = self.t
        if env is None:
            env = self.env(t)
        s = self.state
        Q0, Qt0, Z0, E0 = s.Q.copy(), s.Qtilde.copy(), s.Z.copy(), s.E.copy()
        dec = self.decide(env)

        mu_hat, D_hat, samples, served = apply_service_and_drops(s, self.ledger, dec, t, m)
        admit(s, self.ledger, dec.r, t, p.R_max)

        # virtual queues use start-of-slot backlogs and realized outflows
        if self.variant.name == "clca":
            s.Qtilde = update_delay_queue(
                Qt0, Q0, mu_hat, D_hat, self.eps, self.mu_out[:, None], p.D_max, p.rho
            ) * self.holds
        else:
            s.Zp = self._baseline_update(s.Zp, s.Q, mu_hat, D_hat) * self.holds
        s.Z = update_flow_queue(Z0, dec.r, dec.r_aux) * self.is_src

        viol = []
        for n, f, d in samples:
            if d > self.max_delay[n, f]:
                self.max_delay[n, f] = d
            if self.variant.name == "clca" and d > self.delay_cap[n, f]:
                viol.append(metrics.Violation(t, n, f, "delay", d, self.delay_cap[n, f]))

        received = np.bincount(self.rx, weights=served, minlength=self.N)
        # sequential over sessions (not numpy's pairwise sum) so the compiled loop rounds identically
        sensing = np.zeros(self.N)
        for f in range(m.n_sessions):
            sensing += self.p_sense[f] * dec.r[:, f]
        tx_power = np.bincount(self.tx, weights=dec.p_T, minlength=self.N)
        p_total = sensing + tx_power + self.p_recv * received
        powered = (sensing > 0) | (tx_power > 0) | (received > 0)
        viol += metrics.energy_violations(E0, p_total, self.p_total_max, powered, t)
        intake = np.where(self.harvests, dec.e, 0.0) + np.where(self.grid, dec.g, 0.0)
        s.E = E0 + intake - np.minimum(p_total, E0)

        viol += metrics.assert_bounds(
            s, m.bounds, t, holds=self.holds, check_qtilde=self.variant.name == "clca"
        )

        active = dec.link_rate > 0
        cap_viol = 0
        if active.any():
            c = self._capacities(dec.p_T, np.flatnonzero(active), env)
            cap_viol = int((c > p.delta * dec.p_T[active]).sum())

        if self.check_ledger:
            tot = self.ledger.totals()
            if not np.allclose(tot, s.Q, rtol=0, atol=1e-9):
                raise InvariantViolation(f"slot {t}: ledger disagrees with Q", slot=t, kind="ledger")

        delivered = float(served[self.link_delivers[np.arange(self.L), dec.link_session]].sum())
        sm = SlotMetrics(
            phi=metrics.slot_objective(dec, env, m),
            drops_realized=float(D_hat.sum()),
            drops_decided=float(dec.D.sum()),
            delivered=delivered,
            admitted=float(dec.r.sum()),
            delay_samples=samples,
            violations=viol,
            capacity_assumption_violations=cap_viol,
        )
        self._accumulate(sm, dec)
        self.t += 1
        # the violating slot is completed and counted before stopping
        if viol and self.strict:
            v = viol[0]
            raise InvariantViolation(
                f"slot {v.slot}: node {v.node} session {v.session} breaks {v.invariant} "
                f"({v.value} vs {v.bound})",
                slot=v.slot, node=v.node, kind=v.invariant,
            )
        return dec, sm

    def _baseline_update(self, Zp, Q_end, mu_hat, D_hat):
        from .baseline import update_baseline_queue

        return update_baseline_queue(Zp, Q_end, mu_hat, D_hat, self.eps, gated=self.variant.gated)

    def _accumulate(self, sm, dec):
        s = self.state
        self.slots_run += 1
        self.sum_phi += sm.phi
        self.sum_Q += s.Q.sum()
        self.sum_Qt += (s.Qtilde if self.variant.name == "clca" else s.Zp).sum()
        self.sum_Z += s.Z.sum()
        self.sum_E += s.E.sum()
        self.drops_realized += sm.drops_realized
        self.drops_decided += sm.drops_decided
        self.delivered += sm.delivered
        self.admitted += sm.admitted
        self.hit_cap |= dec.solver_hit_cap
        self.cap_assumption += sm.capacity_assumption_violations
        if sm.violations:
            self.n_violations += len(sm.violations)
            for v in sm.violations:
                self.violation_counts[v.invariant] = self.violation_counts.get(v.invariant, 0) + 1
            room = metrics.MAX_STORED_VIOLATIONS - len(self.violation_log)
            self.violation_log.extend(sm.violations[: max(room, 0)])

    @property
    def compiled_ok(self):
        """Whether the compiled loop can reproduce this run (no shared channels)."""
        return not self.channel_shared and _kernel_available()

    def run(self, T, trace=None, engine="auto"):
        """Run ``T`` slots and return the report.

        ``trace(t, sim, decision)`` is called after each slot (Python engine
        only).  ``engine`` is ``"python"``, ``"compiled"`` or ``"auto"``; the
        compiled loop covers scenarios without cross-link interference and
        follows the same arithmetic as :meth:`step`.
        """
        if T < 1:
            raise ValueError("T must be >= 1")
        if engine not in ("auto", "python", "compiled"):
            raise ValueError(f"unknown engine {engine!r}")
        use_compiled = engine == "compiled" or (
            engine == "auto" and trace is None and not self.check_ledger and self.compiled_ok
        )
        if use_compiled:
            if not self.compiled_ok:
                raise ValueError("compiled engine needs numba and no shared channels")
            if trace is not None:
                raise ValueError("per-slot traces need the python engine")
            from ._kernel import run_compiled

            run_compiled(self, int(T))
        else:
            for _ in range(int(T)):
                dec, _ = self.step()
                if trace is not None:
                    trace(self.t - 1, self, dec)
        return self.report()

    def pending_ages(self):
        """Age (slots until the next possible service) of the oldest batch per queue."""
        ages = np.zeros((self.N, self.F))
        for (n, f), q in self.ledger.batches.items():
            if q:
                ages[n, f] = self.t - q[0][0]
        return ages

    def report(self):
        m = self.model
        k = max(self.slots_run, 1)
        pending = self.pending_ages()
        waited = np.maximum(self.max_delay, pending)
        md, ratio = metrics.delay_report(waited, m.bounds)
        n_viol = self.n_violations
        counts = dict(self.violation_counts)
        log_ = list(self.violation_log)
        if self.variant.name == "clca":
            # data still queued past its bound already breaks the delay guarantee
            late = np.argwhere(pending > self.delay_cap)
            for n, f in late:
                log_.append(metrics.Violation(self.t, int(n), int(f), "delay_pending",
                                              float(pending[n, f]), float(self.delay_cap[n, f])))
            n_viol += len(late)
            if len(late):
                counts["delay_pending"] = counts.get("delay_pending", 0) + len(late)
        B = metrics.compute_B(m)
        return metrics.RunReport(
            V=float(m.params.V),
            seed=self.seed,
            algo=self.variant.name,
            slots=self.slots_run,
            phi_bar=float(self.sum_phi / k),
            avg_Q=float(self.sum_Q / k),
            avg_Qtilde=float(self.sum_Qt / k),
            avg_Z=float(self.sum_Z / k),
            avg_E=float(self.sum_E / k),
            drops_realized=float(self.drops_realized),
            drops_decided=float(self.drops_decided),
            max_delay=self.max_delay.copy(),
            max_delay_ratio=float(ratio.max()) if ratio.size else 0.0,
            violations=int(n_viol),
            violation_counts=counts,
            violation_log=log_[: metrics.MAX_STORED_VIOLATIONS],
            B_bound=B,
            gap_bound=B / m.params.V,
            solver_hit_cap=self.hit_cap,
            capacity_assumption_violations=int(self.cap_assumption),
            delivered=float(self.delivered),
            admitted=float(self.admitted),
            max_pending_age=float(pending.max()) if pending.size else 0.0,
        )


def _kernel_available():
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return False
    return True


def run_slot(model, state, env, t, ledger=None, variant=CLCA, strict=False):
    """One slot from an explicit state; returns ``(decision, new_state, metrics)``.

    The input state and ledger are not modified.
    """
    sim = Simulation(model, variant=variant, strict=strict)
    sim.state = state.copy()
    sim.ledger = ledger.copy() if ledger is not None else _ledger_from_state(state)
    sim.t = t
    dec, sm = sim.step(env)
    return dec, sim.state, sm


def _ledger_from_state(state):
    """A ledger holding each existing backlog as one batch that arrived at slot 0."""
    N, F = state.Q.shape
    ledger = FifoLedger(N, F)
    for n, f in zip(*np.nonzero(state.Q > 0)):
        ledger.push(n, f, 0, float(state.Q[n, f]))
    return ledger


def run_simulation(model, seed=None, T=None, variant=CLCA, strict=False, trace=None, engine="auto"):
    """Run ``T`` slots (default: the model's horizon) from empty queues."""
    sim = Simulation(model, seed=seed, variant=variant, strict=strict)
    return sim.run(model.params.T if T is None else T, trace=trace, engine=engine)
