"""Queue dynamics: data, delay-virtual, flow-state and energy queues.

Amounts are real-valued fluid quantities.  The data queue is backed by a FIFO
ledger of batches so realized per-node delays can be measured.  ``QueueState.Q``
is updated arithmetically alongside the ledger and agrees with the batch sums
up to floating-point rounding (exactly zero whenever the ledger is empty).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

# batch remainders below this (relative) size are treated as fully consumed
_RESIDUE = 1e-12


class InvariantViolation(RuntimeError):
    """A queue or energy invariant broke; carries the slot and node."""

    def __init__(self, message, slot=None, node=None, kind=None):
        super().__init__(message)
        self.slot = slot
        self.node = node
        self.kind = kind


class EnergyViolation(InvariantViolation):
    pass


@dataclass
class QueueState:
    Q: np.ndarray
    Qtilde: np.ndarray
    Z: np.ndarray
    E: np.ndarray
    # persistent-service queue of the baseline; unused (zero) under CLCA
    Zp: np.ndarray = None

    def __post_init__(self):
        if self.Zp is None:
            self.Zp = np.zeros_like(self.Q)

    @classmethod
    def zeros(cls, n_nodes, n_sessions):
        shape = (n_nodes, n_sessions)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(n_nodes))

    def copy(self):
        return QueueState(
            self.Q.copy(), self.Qtilde.copy(), self.Z.copy(), self.E.copy(), self.Zp.copy()
        )


@dataclass
class FifoLedger:
    """Per (node, session) deque of ``[arrival_slot, remaining_amount]`` batches."""

    n_nodes: int
    n_sessions: int
    batches: dict = field(default_factory=dict)

    def queue(self, n, f):
        key = (n, f)
        q = self.batches.get(key)
        if q is None:
            q = self.batches[key] = deque()
        return q

    def push(self, n, f, t, amount):
        if amount <= 0:
            return
        q = self.queue(n, f)
        if q and q[-1][0] == t:
            q[-1][1] += amount
        else:
            if q and q[-1][0] > t:
                raise ValueError("batches must arrive in non-decreasing slot order")
            q.append([t, amount])

    def total(self, n, f):
        q = self.batches.get((n, f))
        return float(sum(b[1] for b in q)) if q else 0.0

    def totals(self):
        out = np.zeros((self.n_nodes, self.n_sessions))
        for (n, f), q in self.batches.items():
            out[n, f] = sum(b[1] for b in q)
        return out

    def oldest(self, n, f):
        q = self.batches.get((n, f))
        return q[0][0] if q else None

    def consume(self, n, f, amount):
        """Remove ``amount`` head-first; returns the arrival slots touched."""
        q = self.batches.get((n, f))
        touched = []
        while amount > 0 and q:
            head = q[0]
            touched.append(head[0])
            if amount >= head[1] - _RESIDUE * max(1.0, head[1]):
                amount -= head[1]
                q.popleft()
            else:
                head[1] -= amount
                amount = 0.0
        return touched

    def copy(self):
        out = FifoLedger(self.n_nodes, self.n_sessions)
        out.batches = {k: deque([b[0], b[1]] for b in q) for k, q in self.batches.items()}
        return out


def _check_nonneg(name, x):
    if np.any(np.asarray(x) < 0):
        raise ValueError(f"negative {name} decision")


def link_service(Q, link_tx, link_session, link_rate):
    """Per-link actual service when allocations are capped by backlog.

    Links sharing a (node, session) backlog are served in ascending link index.
    Returns ``(served[L], mu_hat[n, f])``.
    """
    Q = np.asarray(Q, dtype=float)
    served = np.zeros(len(link_rate))
    avail = Q.copy()
    for l in np.flatnonzero(np.asarray(link_rate) > 0):
        n, f = link_tx[l], link_session[l]
        take = min(link_rate[l], avail[n, f])
        served[l] = take
        avail[n, f] -= take
    return served, Q - avail


def apply_service_and_drops(state, ledger, decisions, t, model=None):
    """Serve, then drop, from the start-of-slot backlog.

    ``decisions`` is either a :class:`~clca.scheduler.SlotDecision`-like object
    with ``link_session``, ``link_rate`` and ``D`` attributes (a ``model``
    supplies link endpoints), or a mapping with keys ``mu`` (array
    ``[n, f]`` of total allocated outflow) and ``D``; the latter form forwards
    nothing downstream.

    Returns ``(mu_hat[n, f], D_hat[n, f], delay_samples, served[L])`` where
    ``delay_samples`` is a list of ``(n, f, delay)``.  Served amounts become
    same-slot arrivals downstream (the ledger is updated in place; packets
    reaching their sink leave the network).
    """
    Q0 = state.Q
    if isinstance(decisions, dict):
        mu_alloc = np.asarray(decisions["mu"], dtype=float)
        D = np.asarray(decisions["D"], dtype=float)
        _check_nonneg("service", mu_alloc)
        _check_nonneg("drop", D)
        mu_hat = np.minimum(mu_alloc, Q0)
        served = np.zeros(0)
        links = ()
    else:
        D = np.asarray(decisions.D, dtype=float)
        _check_nonneg("drop", D)
        _check_nonneg("rate", decisions.link_rate)
        served, mu_hat = link_service(Q0, model.tx, decisions.link_session, decisions.link_rate)
        links = np.flatnonzero(served > 0)
    D_hat = np.minimum(D, Q0 - mu_hat)
    np.maximum(D_hat, 0.0, out=D_hat)

    samples = []
    Q1 = Q0 - mu_hat - D_hat
    for n, f in zip(*np.nonzero(mu_hat + D_hat > 0)):
        for a in ledger.consume(n, f, mu_hat[n, f]):
            samples.append((int(n), int(f), t - a))
        ledger.consume(n, f, D_hat[n, f])
        if not ledger.batches.get((n, f)):
            Q1[n, f] = 0.0
    np.maximum(Q1, 0.0, out=Q1)

    # forward to downstream nodes after all departures are taken
    for l in links:
        f = decisions.link_session[l]
        b = model.rx[l]
        if model.holds[b, f]:
            ledger.push(b, f, t, served[l])
            Q1[b, f] += served[l]
    state.Q = Q1
    return mu_hat, D_hat, samples, served


def admit(state, ledger, r, t, R_max=None):
    """Add admissions ``r[n, f]`` to source backlogs, stamped with slot ``t``."""
    r = np.asarray(r, dtype=float)
    _check_nonneg("admission", r)
    if R_max is not None and np.any(r > R_max + 1e-12):
        raise ValueError(f"admission exceeds R_max = {R_max}")
    for n, f in zip(*np.nonzero(r > 0)):
        ledger.push(n, f, t, r[n, f])
    state.Q = state.Q + r
    return state


def update_delay_queue(Qtilde, Q, mu_hat_out, D_hat, epsilon, mu_out_max, D_max, rho):
    """One step of the delay virtual queue (start-of-slot ``Q`` and ``Qtilde``).

    While the real backlog exceeds ``rho * Qtilde`` the virtual queue is drained
    by the realized outflow; otherwise by the maximum possible outflow.  Either
    way it gains ``epsilon`` and is floored at zero.
    """
    Qtilde = np.asarray(Qtilde, dtype=float)
    Q = np.asarray(Q, dtype=float)
    realized = Qtilde - mu_hat_out - D_hat + epsilon
    worst = Qtilde - np.asarray(mu_out_max) - D_max + epsilon
    nxt = np.where(Q > rho * Qtilde, realized, worst)
    return np.maximum(nxt, 0.0)


def update_flow_queue(Z, r, r_aux):
    return np.maximum(np.asarray(Z, dtype=float) - r + r_aux, 0.0)


def class_masks(power_class):
    pc = np.asarray(power_class)
    return np.isin(pc, ("EH", "ME")), np.isin(pc, ("EG", "ME"))


def update_energy_queue(
    E, e, g, p_total, power_class, theta=None, slot=None, strict=True, masks=None
):
    """Battery update ``E + 1_H e + 1_G g - p_total``.

    ``power_class`` is one class label or an array of labels (ignored when
    precomputed ``(harvest_mask, grid_mask)`` are given).  Returns
    ``(E_next, events)``; ``events`` lists ``(slot, node, kind)`` breaches.
    In strict mode a breach raises :class:`EnergyViolation`; otherwise the
    consumption is clipped to the available energy and the event recorded.
    """
    scalar = np.ndim(E) == 0
    E = np.atleast_1d(np.asarray(E, dtype=float))
    hm, gm = masks if masks is not None else class_masks(power_class)
    intake = np.where(hm, e, 0.0) + np.where(gm, g, 0.0)
    p_total = np.broadcast_to(np.asarray(p_total, dtype=float), E.shape)
    events = []
    short = np.flatnonzero(E < p_total - 1e-12)
    for n in short:
        events.append((slot, int(n), "energy_available"))
    if theta is not None:
        over = np.flatnonzero(E + intake > np.asarray(theta) + 1e-9)
        for n in over:
            events.append((slot, int(n), "battery_capacity"))
    if events and strict:
        s, n, kind = events[0]
        raise EnergyViolation(f"slot {s}: node {n} breaks {kind}", slot=s, node=n, kind=kind)
    used = np.minimum(p_total, E)
    nxt = E + intake - used
    return (float(nxt[0]) if scalar else nxt), events
