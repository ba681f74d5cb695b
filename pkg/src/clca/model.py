"""Network model: topology, parameters, derived caps and theorem bounds.

A :class:`NetworkModel` is built from a raw (JSON-compatible) config by
:func:`validate_config` and is immutable afterwards.  Nodes and sessions are
addressed by their position in the config lists; array-valued attributes use
the layout ``[node]``, ``[node, session]`` or ``[link]``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

POWER_CLASSES = ("EH", "EG", "ME")

# every scalar of GlobalParams is a named key of the config `params` section
PARAM_DEFAULTS = {
    "R_max": 3.0,
    "mu_max": 1.5,
    "D_max": 9.0,
    "V": 750.0,
    "omega1": 0.5,
    "omega2": 1.0,
    "rho": 3.0,
    "delta": 2.0,
    "N0": 5e-13,
    "h_max": 2.0,
    "T": 30000,
    "S_C_min": 0.9,
    "S_C_max": 1.1,
    "S_G_min": 0.5,
    "S_G_max": 1.0,
    "seed": 0,
}


class ConfigError(ValueError):
    """Raised when a config cannot be turned into a valid model."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InfeasibleBound(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: str
    power_class: str
    position: tuple
    p_max: float
    p_recv_unit: float
    g_max: float
    is_source: bool = False
    sessions: tuple = ()

    @property
    def harvests(self):
        return self.power_class in ("EH", "ME")

    @property
    def grid_powered(self):
        return self.power_class in ("EG", "ME")


@dataclass(frozen=True)
class SessionSpec:
    id: str
    source: str
    sink: str
    beta: float
    epsilon: float
    p_sense_unit: float


@dataclass(frozen=True)
class LinkSpec:
    src: str
    dst: str
    channel: int = 0


@dataclass(frozen=True)
class GlobalParams:
    R_max: float
    mu_max: float
    D_max: float
    V: float
    omega1: float
    omega2: float
    rho: float
    delta: float
    N0: float
    h_max: float
    T: int
    S_C_min: float
    S_C_max: float
    S_G_min: float
    S_G_max: float
    seed: int = 0


@dataclass(frozen=True)
class SweepPlan:
    v_grid: tuple
    seeds: tuple
    algos: tuple
    slots: int

    def __post_init__(self):
        if not self.v_grid or not self.seeds:
            raise ValueError("sweep needs a non-empty v_grid and seeds")
        if self.slots < 1:
            raise ValueError("sweep slots must be >= 1")
        bad = set(self.algos) - {"clca", "neely"}
        if bad or not self.algos:
            raise ValueError(f"unknown algos {sorted(bad)}")


@dataclass(frozen=True)
class DerivedCaps:
    mu_in_max: np.ndarray
    mu_out_max: np.ndarray
    p_total_max: np.ndarray


@dataclass(frozen=True)
class TheoremBounds:
    """Per-slot bounds that CLCA guarantees, arrays shaped [node, session] or [node]."""

    z_max: np.ndarray
    qtilde_max: np.ndarray
    q_max: np.ndarray
    theta_E: np.ndarray
    w_max: np.ndarray


@dataclass(frozen=True)
class BoundsEntry:
    z_max: float
    qtilde_max: float
    q_max: float
    theta_E: float
    w_max: float


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkModel:
    nodes: tuple
    links: tuple
    sessions: tuple
    params: GlobalParams
    sweep: SweepPlan | None = None
    warnings: tuple = ()
    # index arrays, filled in __post_init__
    tx: np.ndarray = field(init=False, repr=False)
    rx: np.ndarray = field(init=False, repr=False)
    channel: np.ndarray = field(init=False, repr=False)
    src_index: np.ndarray = field(init=False, repr=False)
    sink_index: np.ndarray = field(init=False, repr=False)
    holds: np.ndarray = field(init=False, repr=False)
    is_source: np.ndarray = field(init=False, repr=False)
    distance: np.ndarray = field(init=False, repr=False)
    caps: DerivedCaps = field(init=False, repr=False)
    bounds: TheoremBounds = field(init=False, repr=False)

    def __post_init__(self):
        idx = {n.id: i for i, n in enumerate(self.nodes)}
        N, F = len(self.nodes), len(self.sessions)
        tx = np.array([idx[l.src] for l in self.links], dtype=np.intp)
        rx = np.array([idx[l.dst] for l in self.links], dtype=np.intp)
        src = np.array([idx[s.source] for s in self.sessions], dtype=np.intp)
        snk = np.array([idx[s.sink] for s in self.sessions], dtype=np.intp)
        holds = np.ones((N, F), dtype=bool)
        holds[snk, np.arange(F)] = False
        is_src = np.zeros((N, F), dtype=bool)
        is_src[src, np.arange(F)] = True
        pos = np.array([n.position for n in self.nodes], dtype=float).reshape(N, 2)
        dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("tx", _frozen(tx))
        set_("rx", _frozen(rx))
        set_("channel", _frozen(np.array([l.channel for l in self.links], dtype=int)))
        set_("src_index", _frozen(src))
        set_("sink_index", _frozen(snk))
        set_("holds", _frozen(holds))
        set_("is_source", _frozen(is_src))
        set_("distance", _frozen(dist))
        set_("caps", derive_caps(self))
        set_("bounds", derive_bounds(self))

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return self.to_config() == other.to_config() and self.warnings == other.warnings

    __hash__ = None

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_sessions(self):
        return len(self.sessions)

    @property
    def n_links(self):
        return len(self.links)

    def node_index(self, node_id):
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    def session_index(self, session_id):
        for i, s in enumerate(self.sessions):
            if s.id == session_id:
                return i
        raise KeyError(session_id)

    # per-node / per-session vectors used by the slot loop
    @property
    def p_max(self):
        return np.array([n.p_max for n in self.nodes])

    @property
    def p_recv(self):
        return np.array([n.p_recv_unit for n in self.nodes])

    @property
    def g_max(self):
        return np.array([n.g_max if n.grid_powered else 0.0 for n in self.nodes])

    @property
    def harvests(self):
        return np.array([n.harvests for n in self.nodes])

    @property
    def grid_powered(self):
        return np.array([n.grid_powered for n in self.nodes])

    @property
    def beta(self):
        return np.array([s.beta for s in self.sessions])

    @property
    def epsilon(self):
        return np.array([s.epsilon for s in self.sessions])

    @property
    def p_sense(self):
        return np.array([s.p_sense_unit for s in self.sessions])

    def with_params(self, **changes):
        """Copy with some GlobalParams replaced; derived quantities are recomputed."""
        return replace(self, params=replace(self.params, **changes))

    def with_sessions(self, **changes):
        sessions = tuple(replace(s, **changes) for s in self.sessions)
        return replace(self, sessions=sessions)

    def to_config(self):
        cfg = {
            "nodes": [
                {
                    "id": n.id,
                    "power_class": n.power_class,
                    "position": list(n.position),
                    "p_max": n.p_max,
                    "p_recv_unit": n.p_recv_unit,
                    "g_max": n.g_max,
                }
                for n in self.nodes
            ],
            "links": [{"src": l.src, "dst": l.dst, "channel": l.channel} for l in self.links],
            "sessions": [
                {
                    "id": s.id,
                    "source": s.source,
                    "sink": s.sink,
                    "beta": s.beta,
                    "epsilon": s.epsilon,
                    "p_sense_unit": s.p_sense_unit,
                }
                for s in self.sessions
            ],
            "params": {k: getattr(self.params, k) for k in PARAM_DEFAULTS},
        }
        if self.sweep is not None:
            cfg["sweep"] = {
                "v_grid": list(self.sweep.v_grid),
                "seeds": list(self.sweep.seeds),
                "algos": list(self.sweep.algos),
                "slots": self.sweep.slots,
            }
        return cfg


def derive_caps(model):
    N = model.n_nodes
    mu = model.params.mu_max
    in_deg = np.bincount(model.rx, minlength=N).astype(float)
    out_deg = np.bincount(model.tx, minlength=N).astype(float)
    sensing = np.zeros(N)
    for s in model.sessions:
        sensing[model.node_index(s.source)] += s.p_sense_unit * model.params.R_max
    mu_in = in_deg * mu
    p_total = sensing + model.p_max + model.p_recv * mu_in
    return DerivedCaps(_frozen(mu_in), _frozen(out_deg * mu), _frozen(p_total))


def queue_bounds(V, omega1, beta, R_max, epsilon, mu_in):
    """(z_max, qtilde_max, q_max) for one node/session pair."""
    base = V * omega1 * beta
    return base + R_max, base + epsilon, base + mu_in + R_max


def battery_level(V, omega1, beta, delta, p_total_max, mu_in, R_max, epsilon):
    """The perturbation theta_E that doubles as battery capacity."""
    return 2 * delta * V * omega1 * beta + p_total_max + delta * (mu_in + R_max + epsilon)


def worst_case_delay_bound(q_max, qtilde_max, rho, epsilon, mu_out, D_max):
    """Worst-case FIFO delay (slots) at a node whose queues respect the bounds."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if epsilon <= 0:
        raise InfeasibleBound("epsilon must be positive for a finite delay bound")
    slack = mu_out + D_max - epsilon
    if slack <= 0:
        raise InfeasibleBound(
            f"mu_out + D_max = {mu_out + D_max} does not exceed epsilon = {epsilon}"
        )
    return max(((1 + rho) * q_max + rho * qtilde_max) / (rho * epsilon), 2 * qtilde_max / slack)


def optimal_rho(q_max, qtilde_max, mu_out, D_max, epsilon):
    """Smallest rho achieving the minimal worst-case delay, or None.

    The delay bound is non-increasing in rho; when the second term of the
    bound never dominates the first there is no finite minimiser.
    """
    slack = mu_out + D_max - epsilon
    denom = 2 * qtilde_max * epsilon - (q_max + qtilde_max) * slack
    if denom <= 0:
        return None
    rho = q_max * slack / denom
    return rho if rho > 0 else None


def derive_bounds(model):
    p = model.params
    N, F = model.n_nodes, model.n_sessions
    caps = model.caps
    beta, eps = model.beta, model.epsilon
    z = np.empty((N, F))
    qt = np.empty((N, F))
    q = np.empty((N, F))
    w = np.full((N, F), np.inf)
    for n in range(N):
        for f in range(F):
            z[n, f], qt[n, f], q[n, f] = queue_bounds(
                p.V, p.omega1, beta[f], p.R_max, eps[f], caps.mu_in_max[n]
            )
            try:
                w[n, f] = worst_case_delay_bound(
                    q[n, f], qt[n, f], p.rho, eps[f], caps.mu_out_max[n], p.D_max
                )
            except InfeasibleBound:
                pass
    # a node holds every session, so its battery must cover the largest beta/eps
    beta_n = beta.max() if F else 0.0
    eps_n = eps.max() if F else 0.0
    theta = battery_level(
        p.V, p.omega1, beta_n, p.delta, caps.p_total_max, caps.mu_in_max, p.R_max, eps_n
    )
    return TheoremBounds(_frozen(z), _frozen(qt), _frozen(q), _frozen(theta), _frozen(w))


def compute_bounds(model, node, session):
    """Queue and delay bounds for one (node, session) pair; ids or indices accepted."""
    n = node if isinstance(node, (int, np.integer)) else model.node_index(node)
    f = session if isinstance(session, (int, np.integer)) else model.session_index(session)
    b = model.bounds
    return BoundsEntry(
        float(b.z_max[n, f]),
        float(b.qtilde_max[n, f]),
        float(b.q_max[n, f]),
        float(b.theta_E[n]),
        float(b.w_max[n, f]),
    )


# ---------------------------------------------------------------- validation


def _num(errors, where, value, *, positive=False, nonneg=True):
    try:
        x = float(value)
    except (TypeError, ValueError):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    if math.isnan(x):
        errors.append(f"{where}: NaN")
        return None
    if positive and not x > 0:
        errors.append(f"{where}: must be > 0 (got {x})")
    elif nonneg and x < 0:
        errors.append(f"{where}: negative parameter {x}")
    return x


def validate_config(raw):
    """Build a :class:`NetworkModel` from a raw config mapping.

    Raises :class:`ConfigError` carrying every problem found.  Nodes for which
    the queue-bound precondition ``max(eps, mu_in + R_max) <= D_max`` fails
    only produce warnings (kept on ``model.warnings``).
    """
    if isinstance(raw, NetworkModel):
        raw = raw.to_config()
    errors = []
    for key in ("nodes", "links", "sessions", "params"):
        if key not in raw:
            errors.append(f"missing top-level section '{key}'")
    if errors:
        raise ConfigError(errors)

    # params
    praw = raw["params"]
    unknown = set(praw) - set(PARAM_DEFAULTS)
    for k in sorted(unknown):
        errors.append(f"params.{k}: unknown parameter")
    pvals = {}
    for k, default in PARAM_DEFAULTS.items():
        v = _num(errors, f"params.{k}", praw.get(k, default), positive=k in ("V", "rho", "delta"))
        pvals[k] = v
    if not errors:
        if not 0 <= pvals["omega1"] <= 1:
            errors.append(f"params.omega1: must lie in [0, 1] (got {pvals['omega1']})")
        if pvals["S_C_min"] > pvals["S_C_max"]:
            errors.append("params: S_C_min exceeds S_C_max")
        if pvals["S_G_min"] > pvals["S_G_max"]:
            errors.append("params: S_G_min exceeds S_G_max")
        if pvals["T"] < 1 or pvals["T"] != int(pvals["T"]):
            errors.append("params.T: must be a positive integer")
        pvals["T"] = int(pvals["T"])
        pvals["seed"] = int(pvals["seed"])

    # nodes
    nodes = []
    seen = set()
    positions = {}
    for i, nr in enumerate(raw["nodes"]):
        where = f"nodes[{i}]"
        nid = nr.get("id")
        if nid is None:
            errors.append(f"{where}: missing id")
            continue
        nid = str(nid)
        if nid in seen:
            errors.append(f"{where}: duplicate node id '{nid}'")
            continue
        seen.add(nid)
        pc = nr.get("power_class")
        if pc not in POWER_CLASSES:
            errors.append(f"{where}: power_class must be one of {POWER_CLASSES}, got {pc!r}")
        pos = nr.get("position", (0.0, 0.0))
        if len(pos) != 2:
            errors.append(f"{where}.position: expected two coordinates")
            pos = (0.0, 0.0)
        pos = tuple(float(x) for x in pos)
        if pos in positions:
            errors.append(f"{where}: position {pos} already used by node '{positions[pos]}'")
        positions[pos] = nid
        p_max = _num(errors, f"{where}.p_max", nr.get("p_max", 2.0), positive=True)
        p_recv = _num(errors, f"{where}.p_recv_unit", nr.get("p_recv_unit", 0.05))
        g_max = _num(errors, f"{where}.g_max", nr.get("g_max", 0.0))
        if pc == "EH" and g_max:
            errors.append(f"{where}: EH node '{nid}' cannot draw from the grid (g_max={g_max})")
        nodes.append(NodeSpec(nid, pc, pos, p_max, p_recv, g_max))

    # links
    links = []
    seen_links = set()
    for i, lr in enumerate(raw["links"]):
        where = f"links[{i}]"
        a, b = str(lr.get("src")), str(lr.get("dst"))
        for end, val in (("src", a), ("dst", b)):
            if val not in seen:
                errors.append(f"{where}.{end}: unknown node '{val}'")
        if a == b:
            errors.append(f"{where}: self-loop at '{a}'")
        if (a, b) in seen_links:
            errors.append(f"{where}: duplicate link {a}->{b}")
        seen_links.add((a, b))
        ch = lr.get("channel", 0)
        if not isinstance(ch, int) or ch < 0:
            errors.append(f"{where}.channel: must be a non-negative integer")
        links.append(LinkSpec(a, b, ch))

    # sessions
    sessions = []
    seen_s = set()
    for i, sr in enumerate(raw["sessions"]):
        where = f"sessions[{i}]"
        sid = str(sr.get("id"))
        if sid in seen_s:
            errors.append(f"{where}: duplicate session id '{sid}'")
        seen_s.add(sid)
        src, snk = str(sr.get("source")), str(sr.get("sink"))
        for end, val in (("source", src), ("sink", snk)):
            if val not in seen:
                errors.append(f"{where}.{end}: unknown node '{val}'")
        if src == snk:
            errors.append(f"{where}: source and sink coincide")
        beta = _num(errors, f"{where}.beta", sr.get("beta", 1.0), positive=True)
        if beta is not None and math.isinf(beta):
            errors.append(f"{where}.beta: must be finite")
        eps = _num(errors, f"{where}.epsilon", sr.get("epsilon", 6.0), positive=True)
        if eps is not None and pvals.get("D_max") is not None and eps > pvals["D_max"]:
            errors.append(f"{where}.epsilon: {eps} exceeds D_max = {pvals['D_max']}")
        ps = _num(errors, f"{where}.p_sense_unit", sr.get("p_sense_unit", 0.1))
        sessions.append(SessionSpec(sid, src, snk, beta, eps, ps))

    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        try:
            sweep = SweepPlan(
                tuple(float(v) for v in sw.get("v_grid", ())),
                tuple(int(s) for s in sw.get("seeds", ())),
                tuple(sw.get("algos", ("clca",))),
                int(sw.get("slots", pvals.get("T") or 1)),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"sweep: {exc}")

    if errors:
        raise ConfigError(errors)

    # attach source flags to nodes
    by_src = {}
    for s in sessions:
        by_src.setdefault(s.source, []).append(s.id)
    nodes = [
        replace(n, is_source=n.id in by_src, sessions=tuple(by_src.get(n.id, ())))
        for n in nodes
    ]
    params = GlobalParams(**pvals)
    model = NetworkModel(tuple(nodes), tuple(links), tuple(sessions), params, sweep)

    warns = []
    eps_max = max((s.epsilon for s in sessions), default=0.0)
    for n, node in enumerate(model.nodes):
        need = max(eps_max, model.caps.mu_in_max[n] + params.R_max)
        if need > params.D_max:
            warns.append(
                f"node '{node.id}': max(eps, mu_in + R_max) = {need:g} > D_max = "
                f"{params.D_max:g}; queue bounds are not guaranteed here"
            )
    for w in warns:
        log.warning(w)
    return replace(model, warnings=tuple(warns))


def load_config(path):
    """Parse and validate a JSON config file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    return validate_config(raw)


def default_config():
    """The shipped 13-node default scenario as a raw dict (fresh copy)."""
    text = resources.files("clca").joinpath("data/default_config.json").read_text()
    return copy.deepcopy(json.loads(text))


def default_model(**param_changes):
    model = validate_config(default_config())
    return model.with_params(**param_changes) if param_changes else model
