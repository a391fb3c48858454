"""Time-varying symmetric edge conductances on a finite graph.

A schedule assigns every edge (and loop) of its graph a positive weight
pi_t(x, y) = pi_t(y, x) at each time t.  The vertex conductance is the row sum

    pi_t(x) = sum_y pi_t(x, y),

which is also the reversing measure of the one-step walk.  Discrete schedules
live on integer times 0..horizon; continuous ones on [0, horizon] and declare
the breakpoints where t -> pi_t may be non-smooth.  A discrete schedule queried
at real time sigma acts as the piecewise-constant extension pi_{floor(sigma)}.
"""

import json
import math

import numpy as np

from . import graphs as _graphs
from ._util import fmt_real
from .errors import (
    NotMonotone,
    ParameterOutOfRange,
    TimeOutOfRange,
    UnboundedPerturbation,
)

KINDS = (
    "Static",
    "MonotoneIncreasing",
    "Perturbative",
    "OscillatingZ",
    "OscillatingHalfLine",
    "Tabulated",
)

_MATRIX_CACHE_LIMIT = 700


class ConductanceSchedule:
    """Edge conductances pi_t(x, y) on ``graph`` over a finite horizon."""

    def __init__(self, graph, kind, time_mode, horizon, edge_fn,
                 breakpoints=(), meta=None, tridiag_fn=None):
        if time_mode not in ("discrete", "continuous"):
            raise ParameterOutOfRange("time_mode must be discrete or continuous")
        if kind not in KINDS:
            raise ParameterOutOfRange("unknown schedule kind %r" % (kind,))
        self.graph = graph
        self.kind = kind
        self.time_mode = time_mode
        self.horizon = float(horizon)
        self._edge_fn = edge_fn
        self._tridiag_fn = tridiag_fn
        self.breakpoints = tuple(sorted(set(float(b) for b in breakpoints)))
        self.meta = dict(meta or {})
        self._matrices = {}

    # -- time handling --------------------------------------------------------

    def effective_time(self, t):
        """Schedule-native time for a query at real time ``t``.

        Discrete schedules extend to real time as right-continuous step
        functions: the kernel in force on [n, n+1) is K_n.
        """
        t = float(t)
        if self.time_mode == "discrete":
            t = math.floor(t + 1e-12)
        return min(max(t, 0.0), self.horizon)

    def check_time(self, t):
        if not (-1e-12 <= float(t) <= self.horizon + 1e-12):
            raise TimeOutOfRange(
                "time %s outside [0, %s]" % (fmt_real(t), fmt_real(self.horizon)))

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, t, x, y):
        """Conductance pi_t(x, y); 0 off the edge support."""
        a, b = (x, y) if x <= y else (y, x)
        if (a, b) not in self._support():
            return 0.0
        return float(self._edge_fn(self.effective_time(t), a, b))

    def _support(self):
        if not hasattr(self, "_support_set"):
            self._support_set = frozenset(self.graph.edges)
        return self._support_set

    def matrix(self, t):
        """Dense symmetric conductance matrix at time ``t`` (cached)."""
        key = round(self.effective_time(t), 12)
        got = self._matrices.get(key)
        if got is not None:
            return got
        n = self.graph.vertex_count
        mat = np.zeros((n, n))
        te = self.effective_time(t)
        for a, b in self.graph.edges:
            w = float(self._edge_fn(te, a, b))
            mat[a, b] = w
            mat[b, a] = w
        mat.flags.writeable = False
        if len(self._matrices) >= _MATRIX_CACHE_LIMIT:
            self._matrices.pop(next(iter(self._matrices)))
        self._matrices[key] = mat
        return mat

    def vertex_conductance(self, t):
        """pi_t(x) = sum_y pi_t(x, y) for all x."""
        return self.matrix(t).sum(axis=1)

    def tridiag(self, t):
        """For path/segment graphs: (edge weights pi(i, i+1), loop weights pi(i, i)).

        Lets long one-dimensional schedules be evolved without dense matrices.
        """
        if self.graph.kind not in ("path", "segment"):
            raise ParameterOutOfRange("tridiag only for path/segment graphs")
        te = self.effective_time(t)
        if self._tridiag_fn is not None:
            return self._tridiag_fn(te)
        n = self.graph.vertex_count
        sub = np.array([self._edge_fn(te, i, i + 1) for i in range(n - 1)])
        loops = np.array([self.evaluate(te, i, i) for i in range(n)])
        return sub, loops

    def grid(self):
        """Default verification grid of times."""
        if self.time_mode == "discrete":
            return np.arange(0, int(self.horizon) + 1)
        pts = set(np.linspace(0.0, self.horizon, 33))
        pts.update(b for b in self.breakpoints if 0 <= b <= self.horizon)
        return np.array(sorted(pts))

    def describe(self):
        d = {"kind": self.kind, "time_mode": self.time_mode,
             "horizon": self.horizon,
             "graph": {"kind": self.graph.kind,
                       "params": list(self.graph.params),
                       "vertex_count": self.graph.vertex_count}}
        d.update({k: v for k, v in self.meta.items() if _jsonable(v)})
        return d


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except (TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# catalog constructors
# ---------------------------------------------------------------------------

def static_schedule(graph, weights=None, horizon=32, time_mode="discrete"):
    """Time-independent conductances.

    ``weights``: None (all edges weight 1), a scalar, a dict keyed by sorted
    edge pairs, or a callable (x, y) -> weight.
    """
    table = _build_weight_table(graph, weights)

    def fn(t, a, b):
        return table[(a, b)]

    return ConductanceSchedule(graph, "Static", time_mode, horizon, fn,
                               meta={"weights": "static"})


def _build_weight_table(graph, weights):
    table = {}
    for a, b in graph.edges:
        if weights is None:
            w = 1.0
        elif callable(weights):
            w = float(weights(a, b))
        elif isinstance(weights, dict):
            w = float(weights[(a, b)])
        else:
            w = float(weights)
        if w <= 0:
            raise ParameterOutOfRange("conductance must be positive on edges")
        table[(a, b)] = w
    return table


def schedule_monotone(graph, base=None, growth=None, horizon=32,
                      time_mode="discrete", verify=True):
    """Schedule with nondecreasing vertex conductances.

    ``base``: as in :func:`static_schedule`.  ``growth``: callable
    (t, x, y) -> multiplicative factor, nondecreasing in t (``None`` means
    constant 1).  Monotonicity of every vertex conductance is verified on the
    schedule grid at construction.
    """
    table = _build_weight_table(graph, base)
    if growth is None:
        growth = lambda t, a, b: 1.0
    elif isinstance(growth, dict):
        growth = _growth_form(growth)

    def fn(t, a, b):
        return table[(a, b)] * float(growth(t, a, b))

    sched = ConductanceSchedule(graph, "MonotoneIncreasing", time_mode, horizon,
                                fn, meta={"growth": getattr(growth, "__name__", "growth")})
    if verify:
        ts = sched.grid()
        prev = None
        for t in ts:
            cur = sched.vertex_conductance(t)
            if (cur <= 0).any():
                raise ParameterOutOfRange("conductance must stay positive")
            if prev is not None and (cur < prev - 1e-12).any():
                raise NotMonotone(
                    "vertex conductance decreases between grid times "
                    "%s and %s" % (fmt_real(prev_t), fmt_real(t)))
            prev, prev_t = cur, t
    return sched


def schedule_perturbative(graph, pi0=None, h=None, horizon=32.0,
                          time_mode="continuous", budget=10.0):
    """Conductances pi_t(x, y) = pi_0(x, y) * exp(h_t(x, y)).

    ``h``: callable (t, x, y) -> exponent.  Both sup_t |h_t| and the damped
    rate (t+1)*|d/dt h_t| are required to stay within ``budget`` on a dense
    grid; otherwise the schedule is rejected.
    """
    table = _build_weight_table(graph, pi0)
    if h is None:
        h = lambda t, a, b: 0.0

    ts = np.unique(np.concatenate([
        np.linspace(0.0, float(horizon), 257),
        np.arange(0.0, float(horizon) + 1.0)]))
    probe_edges = list(graph.edges)[:64]
    dt = 1e-5
    worst_h = 0.0
    worst_rate = 0.0
    for a, b in probe_edges:
        vals = np.array([h(t, a, b) for t in ts])
        worst_h = max(worst_h, float(np.max(np.abs(vals))))
        hi = np.array([h(min(t + dt, float(horizon)), a, b) for t in ts])
        lo = np.array([h(max(t - dt, 0.0), a, b) for t in ts])
        steps = np.array([min(t + dt, float(horizon)) - max(t - dt, 0.0) for t in ts])
        rate = np.abs(hi - lo) / steps
        worst_rate = max(worst_rate, float(np.max((ts + 1.0) * rate)))
    if worst_h > budget or worst_rate > budget:
        raise UnboundedPerturbation(
            "perturbation exceeds budget: sup|h|=%s, sup (t+1)|dh/dt|=%s"
            % (fmt_real(worst_h), fmt_real(worst_rate)))

    def fn(t, a, b):
        return table[(a, b)] * math.exp(h(t, a, b))

    return ConductanceSchedule(graph, "Perturbative", time_mode, horizon, fn,
                               meta={"budget": budget})


def schedule_counterexample_Z(n_max, eta, delta):
    """Alternating conductances on a window of the integer line.

    With integer coordinate x (vertex index minus the window center) and
    integer time n:

        pi_n(x, x+1) = 1 + (-1)^(n+x) * eta
        pi_n(x, x)   = 1 - (-1)^(n+x) * delta_n

    so pi_n(x) = 3 - (-1)^(n+x) * delta_n.  ``delta`` is a sequence or a
    callable n -> delta_n with delta_n in (0, 1/2) for n >= 1; delta_0 may
    also be 0, which is the reference construction's choice.
    The window has length 2*n_max + 1, wide enough that a walk started at the
    center cannot reach the truncation boundary by time n_max.
    """
    n_max = int(n_max)
    if n_max < 1:
        raise ParameterOutOfRange("n_max must be >= 1")
    if not (0.0 < eta < 0.5):
        raise ParameterOutOfRange("eta must lie in (0, 1/2)")
    deltas = _delta_table(delta, n_max)
    if not (0.0 <= deltas[0] < 0.5):
        raise ParameterOutOfRange("delta_0 must lie in [0, 1/2)")
    if any(not (0.0 < d < 0.5) for d in deltas[1:]):
        raise ParameterOutOfRange("delta_n must lie in (0, 1/2) for n >= 1")

    center = n_max
    size = 2 * n_max + 1
    g = _graphs.build_graph("segment", size, boundary=(0, size - 1))
    g = _with_loops(g)

    def fn(n, a, b):
        n = int(n)
        x = a - center
        sign = -1.0 if (n + x) % 2 else 1.0
        if a == b:
            return 1.0 - sign * deltas[n]
        return 1.0 + sign * eta  # edge (x, x+1)

    coords = np.arange(size) - center

    def tri(n):
        n = int(n)
        sign = np.where((n + coords) % 2 == 0, 1.0, -1.0)
        return 1.0 + sign[:-1] * eta, 1.0 - sign * deltas[n]

    sched = ConductanceSchedule(
        g, "OscillatingZ", "discrete", n_max, fn, tridiag_fn=tri,
        meta={"eta": eta, "center": center, "delta": list(deltas)})
    sched.deltas = deltas
    sched.eta = eta
    sched.center = center
    return sched


def _delta_table(delta, n_max):
    if callable(delta):
        return [float(delta(n)) for n in range(n_max + 1)]
    vals = [float(v) for v in delta]
    if len(vals) < n_max + 1:
        raise ParameterOutOfRange("delta sequence shorter than horizon")
    return vals[:n_max + 1]


def default_delta(iota):
    """delta_n = min(0.49, n^(iota - 1/2)), delta_0 = 0."""
    if not (0.0 < iota < 0.5):
        raise ParameterOutOfRange("iota must lie in (0, 1/2)")

    def delta(n):
        if n == 0:
            return 0.0
        return min(0.49, float(n) ** (iota - 0.5))

    return delta


def schedule_drift_halfline(n_max, eta, eps):
    """Alternating edge conductances on the half line with extra loop weight.

        pi_n(x, x+1) = 1 + (-1)^(n+x) * eta          (x >= 0)
        pi_n(x, x)   = 1 + eps * 1{n + x odd}        (x > 0)
        pi_n(0, 0)   = pi_n(2, 2) * pi_n(0, 1) / 2

    The origin loop is normalized so the holding probability at 0 matches the
    one at every even interior site.  The window 0..2*n_max keeps a walk
    started near the origin away from the right truncation boundary.
    """
    n_max = int(n_max)
    if n_max < 1:
        raise ParameterOutOfRange("n_max must be >= 1")
    if not (0.0 < eta < 1.0):
        raise ParameterOutOfRange("eta must lie in (0, 1)")
    if eps <= 0.0:
        raise ParameterOutOfRange("eps must be positive")

    size = 2 * n_max + 1
    g = _graphs.build_graph("segment", size, boundary=(size - 1,))
    g = _with_loops(g)

    def edge_weight(n, x):
        return 1.0 + (1.0 if (n + x) % 2 == 0 else -1.0) * eta

    def loop_weight(n, x):
        if x > 0:
            return 1.0 + (eps if (n + x) % 2 else 0.0)
        return loop_weight(n, 2) * edge_weight(n, 0) / 2.0

    def fn(n, a, b):
        n = int(n)
        if a == b:
            return loop_weight(n, a)
        return edge_weight(n, a)

    xs = np.arange(size)

    def tri(n):
        n = int(n)
        sign = np.where((n + xs) % 2 == 0, 1.0, -1.0)
        sub = 1.0 + sign[:-1] * eta
        loops = np.where((n + xs) % 2 == 1, 1.0 + eps, 1.0)
        loops[0] = loops[2] * sub[0] / 2.0
        return sub, loops

    sched = ConductanceSchedule(
        g, "OscillatingHalfLine", "discrete", n_max, fn, tridiag_fn=tri,
        meta={"eta": eta, "eps": eps})
    sched.eta = eta
    sched.eps = eps
    return sched


def _with_loops(g):
    edges = tuple(sorted(set(g.edges) | {(v, v) for v in range(g.vertex_count)}))
    return _graphs.Graph(g.vertex_count, edges, kind=g.kind, params=g.params,
                         boundary=g.boundary)


def tabulated_schedule(graph, times, edges, values, time_mode="discrete",
                       horizon=None):
    """Schedule given by explicit per-time edge values.

    ``values[i][j]`` is the conductance of ``edges[j]`` at ``times[i]``;
    between listed times the schedule is the right-continuous step function.
    """
    times = [float(t) for t in times]
    if times != sorted(times):
        raise ParameterOutOfRange("times must be sorted")
    pairs = [tuple(sorted((int(a), int(b)))) for a, b in edges]
    support = set(graph.edges)
    for p in pairs:
        if p not in support:
            raise ParameterOutOfRange("edge %r not in graph" % (p,))
    if set(pairs) != support:
        raise ParameterOutOfRange("tabulated values must cover every edge")
    vals = [[float(v) for v in row] for row in values]
    if len(vals) != len(times) or any(len(r) != len(pairs) for r in vals):
        raise ParameterOutOfRange("values shape must be (times, edges)")
    if any(v <= 0 for row in vals for v in row):
        raise ParameterOutOfRange("conductances must be positive")
    if horizon is None:
        horizon = times[-1]
    index = {p: j for j, p in enumerate(pairs)}
    tarr = np.array(times)

    def fn(t, a, b):
        i = int(np.searchsorted(tarr, t + 1e-12) - 1)
        i = min(max(i, 0), len(times) - 1)
        return vals[i][index[(a, b)]]

    return ConductanceSchedule(
        graph, "Tabulated", time_mode, horizon, fn, breakpoints=times,
        meta={"times": times, "edges": [list(p) for p in pairs], "values": vals})


# ---------------------------------------------------------------------------
# randomized schedules (test fodder)
# ---------------------------------------------------------------------------

def random_schedule(seed, max_vertices=64, horizon=8, time_mode="discrete"):
    """A random positive symmetric schedule on a random small graph."""
    rng = np.random.default_rng(np.random.Philox(key=int(seed)))
    pick = rng.integers(0, 4)
    n = int(rng.integers(3, max_vertices + 1))
    if pick == 0:
        g = _graphs.build_graph("path", n)
    elif pick == 1:
        g = _graphs.build_graph("cycle", n)
    elif pick == 2:
        m = int(rng.integers(2, max(3, int(math.isqrt(max_vertices)) + 1)))
        k = int(rng.integers(2, max(3, max_vertices // m + 1)))
        g = _graphs.build_graph("torus2d", m, k)
    else:
        g = _graphs.build_graph("tree", 2, int(rng.integers(1, 5)))
    if rng.random() < 0.7:
        g = _with_loops(g)
    times = list(range(int(horizon) + 1))
    pairs = list(g.edges)
    vals = rng.uniform(0.2, 3.0, size=(len(times), len(pairs)))
    return tabulated_schedule(g, times, pairs, vals.tolist(),
                              time_mode=time_mode, horizon=horizon)


def random_monotone_schedule(seed, max_vertices=24, horizon=24,
                             time_mode="discrete", lazy=True):
    """A random schedule whose vertex conductances never decrease in time."""
    rng = np.random.default_rng(np.random.Philox(key=int(seed)))
    pick = rng.integers(0, 3)
    n = int(rng.integers(4, max_vertices + 1))
    if pick == 0:
        g = _graphs.build_graph("cycle", n)
    elif pick == 1:
        g = _graphs.build_graph("path", n)
    else:
        side = int(rng.integers(2, max(3, int(math.isqrt(max_vertices)) + 1)))
        g = _graphs.build_graph("torus2d", side, side)
    if lazy:
        g = _with_loops(g)
    times = list(range(int(horizon) + 1))
    pairs = list(g.edges)
    base = rng.uniform(0.5, 2.0, size=len(pairs))
    increments = rng.uniform(0.0, 0.2, size=(len(times) - 1, len(pairs)))
    grid = np.vstack([base, base + np.cumsum(increments, axis=0)])
    cap = rng.uniform(2.0, 4.0)
    grid = np.minimum(grid, cap * grid[0])  # capped growth keeps C0 bounded
    return tabulated_schedule(g, times, pairs, grid.tolist(),
                              time_mode=time_mode, horizon=horizon)


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def schedule_to_json(schedule):
    d = {"graph": {"kind": schedule.graph.kind,
                   "params": list(schedule.graph.params)},
         "schedule": {"kind": schedule.kind,
                      "horizon": schedule.horizon,
                      "time_mode": schedule.time_mode,
                      "params": {k: v for k, v in schedule.meta.items()
                                 if _jsonable(v)}}}
    if schedule.graph.kind == "custom":
        d["graph"]["edges"] = [list(e) for e in schedule.graph.edges]
        d["graph"]["vertex_count"] = schedule.graph.vertex_count
    return d


def schedule_from_json(doc):
    """Rebuild a schedule from its JSON description.

    Supported kinds: Static, Tabulated, OscillatingZ, OscillatingHalfLine,
    MonotoneIncreasing / Perturbative with parametric growth forms.
    """
    gdoc = doc["graph"]
    sdoc = doc["schedule"]
    kind = sdoc["kind"]
    params = sdoc.get("params", {})
    horizon = sdoc.get("horizon", 32)
    time_mode = sdoc.get("time_mode", "discrete")

    if kind == "OscillatingZ":
        delta = params.get("delta")
        if delta is None:
            delta = default_delta(params["iota"])
        return schedule_counterexample_Z(int(horizon), params["eta"], delta)
    if kind == "OscillatingHalfLine":
        return schedule_drift_halfline(int(horizon), params["eta"], params["eps"])

    g = _build_graph_from_json(gdoc)
    if kind == "Static":
        weights = params.get("weight")
        if params.get("loops"):
            g = _with_loops(g)
        return static_schedule(g, weights, horizon=horizon, time_mode=time_mode)
    if kind == "Tabulated":
        return tabulated_schedule(g, params["times"], params["edges"],
                                  params["values"], time_mode=time_mode,
                                  horizon=horizon)
    if kind == "MonotoneIncreasing":
        if params.get("loops", True):
            g = _with_loops(g)
        growth = _growth_form(params.get("growth", {"form": "constant"}))
        return schedule_monotone(g, params.get("base"), growth,
                                 horizon=horizon, time_mode=time_mode)
    if kind == "Perturbative":
        if params.get("loops", True):
            g = _with_loops(g)
        h = _h_form(params.get("h", {"form": "zero"}))
        return schedule_perturbative(g, params.get("pi0"), h, horizon=horizon,
                                     time_mode=time_mode,
                                     budget=params.get("budget", 10.0))
    raise ParameterOutOfRange("unknown schedule kind %r" % (kind,))


def _build_graph_from_json(gdoc):
    kind = gdoc["kind"]
    if kind == "custom":
        return _graphs.build_graph("custom", gdoc["edges"],
                                   vertex_count=gdoc.get("vertex_count"))
    return _graphs.build_graph(kind, *gdoc.get("params", ()))


def _growth_form(doc):
    form = doc.get("form", "constant")
    if form == "constant":
        return lambda t, a, b: 1.0
    if form == "linear_cap":
        rate, cap = float(doc.get("rate", 0.1)), float(doc.get("cap", 5.0))
        return lambda t, a, b: 1.0 + rate * min(float(t), cap)
    if form == "step":
        jump, at = float(doc.get("jump", 1.0)), float(doc.get("at", 3.0))
        return lambda t, a, b: 1.0 + (jump if float(t) >= at else 0.0)
    if form == "exp_sat":
        amp, tau = float(doc.get("amp", 1.0)), float(doc.get("tau", 4.0))
        return lambda t, a, b: 1.0 + amp * (1.0 - math.exp(-float(t) / tau))
    raise ParameterOutOfRange("unknown growth form %r" % (form,))


def _h_form(doc):
    form = doc.get("form", "zero")
    if form == "zero":
        return lambda t, a, b: 0.0
    if form == "sin_log":
        amp = float(doc.get("amp", 0.1))
        return lambda t, a, b: amp * math.sin(math.log(1.0 + float(t)))
    raise ParameterOutOfRange("unknown h form %r" % (form,))
