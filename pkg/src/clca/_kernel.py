"""Compiled slot loop for scenarios without cross-link interference.

This mirrors :meth:`clca.scheduler.Simulation.step` operation by operation so
both paths produce the same trajectories; the Python loop stays the readable
reference and the differential tests hold the two together.  It only covers
the uncoupled power problem (no two links of different transmitters share a
channel), where the power allocation has a closed form.
"""

import math

import numpy as np
from numba import njit

RESIDUE = 1e-12
BOUND_TOL = 1e-9
P_FLOOR = 1e-20

# violation kind codes, in the order the reference loop reports them
KINDS = ("energy_available", "energy_reserve", "Z", "Qtilde", "Q", "E", "delay")
STATUS_OK, STATUS_STRICT_STOP = 0, 1


@njit(cache=True)
def _push(l_t, l_a, head, count, k, t, amount):
    if amount <= 0.0:
        return l_t, l_a
    cap = l_t.shape[1]
    c = count[k]
    if c > 0:
        last = (head[k] + c - 1) % cap
        if l_t[k, last] == t:
            l_a[k, last] += amount
            return l_t, l_a
    if c == cap:
        # grow every ring to twice the size, unrolled so heads start at 0
        K = l_t.shape[0]
        nt = np.zeros((K, 2 * cap), dtype=l_t.dtype)
        na = np.zeros((K, 2 * cap))
        for q in range(K):
            for i in range(count[q]):
                j = (head[q] + i) % cap
                nt[q, i] = l_t[q, j]
                na[q, i] = l_a[q, j]
            head[q] = 0
        l_t, l_a = nt, na
        cap = 2 * cap
    j = (head[k] + count[k]) % cap
    l_t[k, j] = t
    l_a[k, j] = amount
    count[k] += 1
    return l_t, l_a


@njit(cache=True)
def _record(vrec, nrec, t, n, f, kind, value, bound):
    if nrec < vrec.shape[0]:
        vrec[nrec, 0] = t
        vrec[nrec, 1] = n
        vrec[nrec, 2] = f
        vrec[nrec, 3] = kind
        vrec[nrec, 4] = value
        vrec[nrec, 5] = bound
    return nrec + 1


@njit(cache=True)
def run_chunk(
    t0, nslots, gain, harvest, price,
    tx, rx, holds, is_src, link_holds, link_delivers,
    theta, beta, eps, p_sense, p_recv, p_max, g_max, harvests, grid, mu_out, ptm,
    z_max, qt_max, q_max, delay_cap,
    V, omega1, omega2, rho, R_max, mu_max, D_max, N0, delta,
    is_clca, gated, substitute, strict,
    Q, Qt, Z, E, Zp,
    l_t, l_a, head, count,
    acc, max_delay, kind_counts, vrec,
):
    """Run ``nslots`` slots starting at ``t0``; state arrays are updated in place.

    ``acc`` accumulates [slots, phi, Q, Qtilde, Z, E, drops_realized,
    drops_decided, delivered, admitted, n_violations, capacity_violations,
    stored_records].  Returns ``(status, slots_done, l_t, l_a)``.
    """
    N, F = Q.shape
    L = tx.shape[0]
    thr = np.empty(F)
    for f in range(F):
        thr[f] = V * omega1 * beta[f]
    Q0 = np.empty((N, F))
    Qt0 = np.empty((N, F))
    Z0 = np.empty((N, F))
    E0 = np.empty(N)
    D = np.zeros((N, F))
    r = np.zeros((N, F))
    r_aux = np.zeros((N, F))
    mu_hat = np.zeros((N, F))
    D_hat = np.zeros((N, F))
    avail = np.zeros((N, F))
    sess = np.zeros(L, dtype=np.int64)
    w_star = np.zeros(L)
    active = np.zeros(L, dtype=np.bool_)
    p_T = np.zeros(L)
    rate = np.zeros(L)
    served = np.zeros(L)
    wsum = np.zeros(N)
    e = np.zeros(N)
    g = np.zeros(N)
    ready = np.zeros(N, dtype=np.bool_)
    received = np.zeros(N)
    sensing = np.zeros(N)
    tx_power = np.zeros(N)
    p_total = np.zeros(N)
    nrec = int(acc[12])

    for k in range(nslots):
        t = t0 + k
        Q0[:, :] = Q
        Qt0[:, :] = Qt
        Z0[:, :] = Z
        E0[:] = E
        nviol_slot = 0
        for n in range(N):
            ready[n] = E[n] >= ptm[n]

        # drops
        for n in range(N):
            for f in range(F):
                virt = Qt[n, f] if is_clca else Zp[n, f]
                d = D_max if Q[n, f] + virt > thr[f] else 0.0
                D[n, f] = d * (1.0 if holds[n, f] else 0.0)

        # weights and session selection
        for l in range(L):
            a = tx[l]
            b = rx[l]
            best = -np.inf
            bf = 0
            for f in range(F):
                if link_holds[l, f]:
                    if is_clca:
                        wv = Qt[a, f]
                    elif substitute:
                        wv = Zp[a, f]
                    else:
                        wv = Qt[a, f]
                    w = Q[a, f] - Q[b, f] + (E[b] - theta[b]) * p_recv[b] + wv
                    if w > best:
                        best = w
                        bf = f
            sess[l] = bf
            w_star[l] = best
            active[l] = best > 0 and ready[a] and ready[b] and gain[k, l] > 0

        # power: exact optimum without interference, then rates
        wsum[:] = 0.0
        for l in range(L):
            p_T[l] = 0.0
            rate[l] = 0.0
            if active[l]:
                wsum[tx[l]] += w_star[l]
        for l in range(L):
            if active[l]:
                a = tx[l]
                c = E[a] - theta[a]
                if c < 0:
                    free = w_star[l] / -c
                    total = wsum[a] / -c
                else:
                    free = np.inf
                    total = np.inf
                if total <= p_max[a]:
                    p = free
                else:
                    p = p_max[a] * w_star[l] / wsum[a]
                p_T[l] = max(p, P_FLOOR)
        for l in range(L):
            if active[l]:
                gamma = gain[k, l] * p_T[l] / N0
                cap_l = math.log(gamma) if gamma > 0 else -np.inf
                if cap_l <= 0:
                    p_T[l] = 0.0
                    active[l] = False
                else:
                    rate[l] = min(max(cap_l, 0.0), mu_max)
                    if rate[l] <= 0:
                        p_T[l] = 0.0

        # energy management, auxiliary rates, admissions
        for n in range(N):
            hd = max(theta[n] - E[n], 0.0)
            e[n] = min(harvest[k, n], hd) if harvests[n] else 0.0
            coeff = (E[n] - theta[n]) + V * (1 - omega1) * omega2 * price[k, n]
            gg = min(g_max[n], hd - e[n]) if (grid[n] and coeff < 0) else 0.0
            g[n] = max(gg, 0.0)
        for n in range(N):
            for f in range(F):
                if is_src[n, f]:
                    if Z[n, f] > 0:
                        x = V * omega1 * beta[f] / Z[n, f] - 1.0
                        r_aux[n, f] = min(max(x, 0.0), R_max)
                    else:
                        r_aux[n, f] = R_max
                    thresh = Z[n, f] + (E[n] - theta[n]) * p_sense[f]
                    r[n, f] = R_max if (Q[n, f] < thresh and ready[n]) else 0.0
                else:
                    r_aux[n, f] = 0.0
                    r[n, f] = 0.0

        # service from the start-of-slot backlog, ascending link order
        avail[:, :] = Q0
        for l in range(L):
            served[l] = 0.0
            if rate[l] > 0:
                a = tx[l]
                f = sess[l]
                take = min(rate[l], avail[a, f])
                served[l] = take
                avail[a, f] -= take
        for n in range(N):
            for f in range(F):
                mu_hat[n, f] = Q0[n, f] - avail[n, f]
                dh = min(D[n, f], Q0[n, f] - mu_hat[n, f])
                D_hat[n, f] = max(dh, 0.0)

        cap = l_t.shape[1]
        for n in range(N):
            for f in range(F):
                q1 = Q0[n, f] - mu_hat[n, f] - D_hat[n, f]
                if mu_hat[n, f] + D_hat[n, f] > 0:
                    kk = n * F + f
                    for phase in range(2):
                        amount = mu_hat[n, f] if phase == 0 else D_hat[n, f]
                        while amount > 0 and count[kk] > 0:
                            j = head[kk]
                            h = l_a[kk, j]
                            if phase == 0:
                                dly = t - l_t[kk, j]
                                if dly > max_delay[n, f]:
                                    max_delay[n, f] = dly
                                if is_clca and dly > delay_cap[n, f]:
                                    kind_counts[6] += 1
                                    nviol_slot += 1
                                    nrec = _record(vrec, nrec, t, n, f, 6, dly, delay_cap[n, f])
                            if amount >= h - RESIDUE * max(1.0, h):
                                amount -= h
                                head[kk] = (j + 1) % cap
                                count[kk] -= 1
                            else:
                                l_a[kk, j] = h - amount
                                amount = 0.0
                    if count[kk] == 0:
                        q1 = 0.0
                Q[n, f] = max(q1, 0.0)

        for l in range(L):
            if served[l] > 0:
                f = sess[l]
                b = rx[l]
                if holds[b, f]:
                    l_t, l_a = _push(l_t, l_a, head, count, b * F + f, t, served[l])
                    Q[b, f] += served[l]
        for n in range(N):
            for f in range(F):
                if r[n, f] > 0:
                    l_t, l_a = _push(l_t, l_a, head, count, n * F + f, t, r[n, f])
                Q[n, f] = Q[n, f] + r[n, f]

        # virtual and flow queues
        for n in range(N):
            for f in range(F):
                hm = 1.0 if holds[n, f] else 0.0
                if is_clca:
                    if Q0[n, f] > rho * Qt0[n, f]:
                        nxt = Qt0[n, f] - mu_hat[n, f] - D_hat[n, f] + eps[f]
                    else:
                        nxt = Qt0[n, f] - mu_out[n] - D_max + eps[f]
                    Qt[n, f] = max(nxt, 0.0) * hm
                else:
                    drained = max(Zp[n, f] - mu_hat[n, f] - D_hat[n, f], 0.0)
                    if gated:
                        inc = eps[f] if Q[n, f] > 0 else 0.0
                    else:
                        inc = eps[f]
                    Zp[n, f] = (drained + inc) * hm
                sm = 1.0 if is_src[n, f] else 0.0
                Z[n, f] = max(Z0[n, f] - r[n, f] + r_aux[n, f], 0.0) * sm

        # energy
        received[:] = 0.0
        tx_power[:] = 0.0
        for l in range(L):
            received[rx[l]] += served[l]
            tx_power[tx[l]] += p_T[l]
        for n in range(N):
            s = 0.0
            for f in range(F):
                s += p_sense[f] * r[n, f]
            sensing[n] = s
            p_total[n] = sensing[n] + tx_power[n] + p_recv[n] * received[n]
        for n in range(N):
            if p_total[n] > 0 and E0[n] < p_total[n] - BOUND_TOL:
                kind_counts[0] += 1
                nviol_slot += 1
                nrec = _record(vrec, nrec, t, n, -1, 0, E0[n], p_total[n])
        for n in range(N):
            powered = sensing[n] > 0 or tx_power[n] > 0 or received[n] > 0
            if powered and E0[n] < ptm[n] - BOUND_TOL:
                kind_counts[1] += 1
                nviol_slot += 1
                nrec = _record(vrec, nrec, t, n, -1, 1, E0[n], ptm[n])
        for n in range(N):
            intake = (e[n] if harvests[n] else 0.0) + (g[n] if grid[n] else 0.0)
            E[n] = E0[n] + intake - min(p_total[n], E0[n])

        # theorem bounds on the end-of-slot state
        for n in range(N):
            for f in range(F):
                if holds[n, f] and Z[n, f] > z_max[n, f] + BOUND_TOL:
                    kind_counts[2] += 1
                    nviol_slot += 1
                    nrec = _record(vrec, nrec, t, n, f, 2, Z[n, f], z_max[n, f])
        if is_clca:
            for n in range(N):
                for f in range(F):
                    if holds[n, f] and Qt[n, f] > qt_max[n, f] + BOUND_TOL:
                        kind_counts[3] += 1
                        nviol_slot += 1
                        nrec = _record(vrec, nrec, t, n, f, 3, Qt[n, f], qt_max[n, f])
        for n in range(N):
            for f in range(F):
                if holds[n, f] and Q[n, f] > q_max[n, f] + BOUND_TOL:
                    kind_counts[4] += 1
                    nviol_slot += 1
                    nrec = _record(vrec, nrec, t, n, f, 4, Q[n, f], q_max[n, f])
        for n in range(N):
            if E[n] > theta[n] + BOUND_TOL:
                kind_counts[5] += 1
                nviol_slot += 1
                nrec = _record(vrec, nrec, t, n, -1, 5, E[n], theta[n])

        cap_viol = 0
        for l in range(L):
            if rate[l] > 0:
                c_l = math.log(gain[k, l] * p_T[l] / N0)
                if c_l > delta * p_T[l]:
                    cap_viol += 1

        # slot objective and accumulators
        util = 0.0
        dcost = 0.0
        drops_r = 0.0
        drops_d = 0.0
        adm = 0.0
        for n in range(N):
            for f in range(F):
                if is_src[n, f]:
                    util += beta[f] * math.log1p(r_aux[n, f])
                dcost += beta[f] * D[n, f]
                drops_r += D_hat[n, f]
                drops_d += D[n, f]
                adm += r[n, f]
        cost = 0.0
        for n in range(N):
            if grid[n]:
                cost += price[k, n] * g[n]
        phi = omega1 * (util - dcost) - (1 - omega1) * omega2 * cost
        deliv = 0.0
        for l in range(L):
            if link_delivers[l, sess[l]]:
                deliv += served[l]

        acc[0] += 1
        acc[1] += phi
        acc[2] += Q.sum()
        acc[3] += Qt.sum() if is_clca else Zp.sum()
        acc[4] += Z.sum()
        acc[5] += E.sum()
        acc[6] += drops_r
        acc[7] += drops_d
        acc[8] += deliv
        acc[9] += adm
        acc[10] += nviol_slot
        acc[11] += cap_viol
        acc[12] = nrec

        if strict and nviol_slot > 0:
            return STATUS_STRICT_STOP, k + 1, l_t, l_a
    return STATUS_OK, nslots, l_t, l_a


def _ledger_to_rings(ledger, N, F, cap=1024):
    K = N * F
    need = max([len(q) for q in ledger.batches.values()] + [1])
    while cap < need:
        cap *= 2
    l_t = np.zeros((K, cap), dtype=np.int64)
    l_a = np.zeros((K, cap))
    head = np.zeros(K, dtype=np.int64)
    count = np.zeros(K, dtype=np.int64)
    for (n, f), q in ledger.batches.items():
        k = n * F + f
        for i, (t, a) in enumerate(q):
            l_t[k, i] = t
            l_a[k, i] = a
        count[k] = len(q)
    return l_t, l_a, head, count


def _rings_to_ledger(ledger, l_t, l_a, head, count, F):
    from collections import deque

    cap = l_t.shape[1]
    batches = {}
    for k in np.flatnonzero(count):
        n, f = divmod(int(k), F)
        idx = (head[k] + np.arange(count[k])) % cap
        batches[(n, f)] = deque([int(l_t[k, j]), float(l_a[k, j])] for j in idx)
    ledger.batches = batches


def run_compiled(sim, T, chunk=2048, ring=1024):
    """Advance a :class:`~clca.scheduler.Simulation` by ``T`` slots with the compiled loop.

    ``chunk`` slots of environment are drawn per kernel call; ``ring`` is the
    initial per-queue batch capacity (grown on demand).
    """
    from .metrics import Violation
    from .queues import InvariantViolation

    m = sim.model
    p = m.params
    b = m.bounds
    s = sim.state
    N, F = sim.N, sim.F
    l_t, l_a, head, count = _ledger_to_rings(sim.ledger, N, F, ring)
    acc = np.zeros(13)
    kind_counts = np.zeros(len(KINDS), dtype=np.int64)
    vrec = np.zeros((1000, 6))
    is_clca = sim.variant.name == "clca"
    static = (
        sim.tx.astype(np.int64), sim.rx.astype(np.int64), sim.holds, sim.is_src,
        np.ascontiguousarray(sim.link_holds), np.ascontiguousarray(sim.link_delivers),
        sim.theta.astype(float), sim.beta.astype(float), sim.eps.astype(float),
        sim.p_sense.astype(float), sim.p_recv.astype(float), sim.p_max.astype(float),
        sim.g_max.astype(float), sim.harvests.astype(bool), sim.grid.astype(bool),
        sim.mu_out.astype(float), sim.p_total_max.astype(float),
        np.asarray(b.z_max, dtype=float), np.asarray(b.qtilde_max, dtype=float),
        np.asarray(b.q_max, dtype=float), np.asarray(sim.delay_cap, dtype=float),
        float(p.V), float(p.omega1), float(p.omega2), float(p.rho), float(p.R_max),
        float(p.mu_max), float(p.D_max), float(p.N0), float(p.delta),
        is_clca, bool(sim.variant.gated), bool(sim.variant.substitute_weights), bool(sim.strict),
    )
    Q, Qt, Z, E, Zp = (np.ascontiguousarray(a, dtype=float).copy() for a in (s.Q, s.Qtilde, s.Z, s.E, s.Zp))
    done = 0
    status = STATUS_OK
    while done < T and status == STATUS_OK:
        t0 = sim.t + done
        n = min(chunk, T - done)
        ch, hv, gr = sim.env.block(t0, n)
        gain = np.ascontiguousarray(ch[:, sim.tx, sim.rx])
        status, k, l_t, l_a = run_chunk(
            t0, n, gain, hv, gr, *static, Q, Qt, Z, E, Zp, l_t, l_a, head, count,
            acc, sim.max_delay, kind_counts, vrec,
        )
        done += k

    s.Q, s.Qtilde, s.Z, s.E, s.Zp = Q, Qt, Z, E, Zp
    _rings_to_ledger(sim.ledger, l_t, l_a, head, count, F)
    sim.t += done
    sim.slots_run += int(acc[0])
    sim.sum_phi += acc[1]
    sim.sum_Q += acc[2]
    sim.sum_Qt += acc[3]
    sim.sum_Z += acc[4]
    sim.sum_E += acc[5]
    sim.drops_realized += acc[6]
    sim.drops_decided += acc[7]
    sim.delivered += acc[8]
    sim.admitted += acc[9]
    sim.n_violations += int(acc[10])
    sim.cap_assumption += int(acc[11])
    for i, kind in enumerate(KINDS):
        if kind_counts[i]:
            sim.violation_counts[kind] = sim.violation_counts.get(kind, 0) + int(kind_counts[i])
    stored = min(int(acc[12]), len(vrec))
    records = [
        Violation(int(r[0]), int(r[1]), int(r[2]), KINDS[int(r[3])], float(r[4]), float(r[5]))
        for r in vrec[:stored]
    ]
    room = 1000 - len(sim.violation_log)
    sim.violation_log.extend(records[: max(room, 0)])
    if status == STATUS_STRICT_STOP:
        v = records[-1] if records else None
        first = [r for r in records if r.slot == sim.t - 1]
        v = first[0] if first else v
        raise InvariantViolation(
            f"slot {v.slot}: node {v.node} session {v.session} breaks {v.invariant} "
            f"({v.value} vs {v.bound})",
            slot=v.slot, node=v.node, kind=v.invariant,
        )
