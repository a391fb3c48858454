"""Backward heat equation on time-space cylinders, and the estimates measured
through its solutions.

A solution on the cylinder [t1, t2] x B(z, R) satisfies

    u(s - 1, x) = sum_y K_s(x, y) u(s, y)        (discrete time)
    -du/ds      = (K_s - I) u                    (continuous time)

at interior points x in B(z, R - 1), with declared data on the radius-R shell
and at the terminal time t2.  On top of the solver this module provides the
parabolic Harnack quotient scan, Holder exponents with dyadic oscillation
decay, the two growth lemmas, the L2 mean-value inequality, tilted-kernel
(Gaffney) norm bounds, a weighted maximum principle, D-doubling, and fitting
of two-sided Gaussian envelopes to measured kernels.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from ._util import fmt_real, parallel_map
from .errors import (
    CylinderExceedsGraph,
    InfeasibleLowerEnvelope,
    NegativeBoundaryData,
    NotASubsolution,
    OdeNotConverged,
    ParameterOutOfRange,
    TimeOutOfRange,
    TruncationGuard,
)
from .graphs import ball
from .kernels import (
    ODE_TOL,
    _generator_times,
    _is_constant_piece,
    _PieceView,
    evolving_measure,
    kernel_between,
    one_step_kernel,
    perturbed_kernel,
    weight_field,
    weighted_norm,
)

#: Default Harnack window parameters (theta1..theta4) / phi with phi = 2.
PHI_THETA = (1.0 / math.sqrt(2.0) / 2.0, 1.0 / math.sqrt(2.0) / 2.0,
             math.sqrt(3.0) / 2.0 / 2.0, 1.0 / 2.0)

_REG = 1e-300            # strictly-positive regularizer for Harnack quotients
_GRID_STEP = 0.025       # dense recording step for continuous solutions


# ---------------------------------------------------------------------------
# cylinders and solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    """Time-space cylinder [t1, t2] x B(z, R)."""
    t1: float
    t2: float
    z: int
    R: float

    def __post_init__(self):
        if self.t2 < self.t1:
            raise ParameterOutOfRange("cylinder needs t1 <= t2")
        if self.R < 1:
            raise ParameterOutOfRange("cylinder needs R >= 1")


@dataclass(frozen=True)
class CylinderSolution:
    """Values u(s, x) on a cylinder, together with how they were produced.

    ``values[i, j]`` is u at time ``times[i]`` and vertex ``members[j]``;
    ``interior`` lists the members where the heat equation itself holds (the
    rest form the lateral shell carrying declared data).
    """
    cylinder: Cylinder
    mode: str
    members: tuple
    interior: tuple
    times: np.ndarray
    values: np.ndarray
    nonneg: bool
    meta: dict = field(default_factory=dict)

    def at_time(self, s):
        idx = int(np.argmin(np.abs(self.times - s)))
        if abs(float(self.times[idx]) - s) > 1e-6:
            raise TimeOutOfRange("time %s not on the solution grid" % fmt_real(s))
        return self.values[idx]

    def member_index(self, x):
        try:
            return self.members.index(x)
        except ValueError:
            raise ParameterOutOfRange("vertex %d outside the cylinder" % x)


def _ball_members(graph, z, R):
    """Members of B(z, R), the interior mask for B(z, R-1), local positions."""
    members = tuple(sorted(ball(graph, z, R).members))
    inner = frozenset(ball(graph, z, max(R - 1, 0)).members)
    interior = np.array([m in inner for m in members])
    return members, interior


def _guard_interior(graph, members, interior, label):
    hit = [m for m, keep in zip(members, interior) if keep and m in graph.boundary]
    if hit:
        raise CylinderExceedsGraph(
            "%s: interior vertex %d sits on the truncation boundary; "
            "enlarge the graph window" % (label, hit[0]))


def _as_lateral(lateral, n_shell):
    """Normalize lateral data to a callable s -> values on the shell."""
    if callable(lateral):
        return lambda s: np.asarray(lateral(s), dtype=float).reshape(n_shell)
    arr = np.asarray(lateral, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_shell, float(arr))
    if arr.shape != (n_shell,):
        raise ParameterOutOfRange("lateral data must cover the shell")
    return lambda s: arr


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _discrete_backward(schedule, t1, t2, members, interior, terminal, lateral_fn):
    """Exact backward recursion; returns (times ascending, values)."""
    mem = np.array(members)
    int_local = np.flatnonzero(interior)
    shell_local = np.flatnonzero(~interior)
    rows = [np.array(terminal, dtype=float)]
    u = rows[0]
    for s in range(int(t2), int(t1), -1):
        k_rows = one_step_kernel(schedule, s).matrix[np.ix_(mem[int_local], mem)]
        nxt = np.zeros_like(u)
        nxt[int_local] = k_rows @ u
        if shell_local.size:
            nxt[shell_local] = lateral_fn(s - 1)
        rows.append(nxt)
        u = nxt
    rows.reverse()
    return np.arange(int(t1), int(t2) + 1, dtype=float), np.array(rows)


def _dense_grid(schedule, t1, t2):
    """Per-piece uniform grids with an even interval count (for Simpson)."""
    knots = _generator_times(schedule, t1, t2)
    times, segments = [], []
    for a, b in zip(knots[:-1], knots[1:]):
        m = 2 * max(1, int(math.ceil((b - a) / (2.0 * _GRID_STEP) - 1e-12)))
        seg = np.linspace(a, b, m + 1)
        lo = 0 if not times else len(times) - 1
        times.extend(seg if not times else seg[1:])
        segments.append((lo, len(times) - 1))
    return np.array(times), segments


def _rk4_span(schedule, a, b, state, rhs, nsteps):
    h = (b - a) / nsteps
    s = b
    for _ in range(nsteps):
        k1 = rhs(s, state)
        k2 = rhs(s - h / 2.0, state + (h / 2.0) * k1)
        k3 = rhs(s - h / 2.0, state + (h / 2.0) * k2)
        k4 = rhs(s - h, state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s -= h
    return state


def _continuous_backward(schedule, t1, t2, members, interior, terminal,
                         lateral_fn, record_times, ode_step=0.05):
    """Backward ODE -du/ds = (K_s - I) u with pinned shell values.

    The interior components are integrated by classical fourth-order steps,
    halved per piece until two refinements agree within the same tolerance
    used for propagators; values are recorded exactly at ``record_times``.
    """
    mem = np.array(members)
    int_local = np.flatnonzero(interior)
    shell_local = np.flatnonzero(~interior)
    record_times = np.asarray(sorted(set(float(t) for t in record_times)))
    if record_times.size and (record_times[0] < t1 - 1e-9
                              or record_times[-1] > t2 + 1e-9):
        raise TimeOutOfRange("record times outside the cylinder span")

    def full(s, y):
        vec = np.zeros(len(members))
        vec[int_local] = y
        if shell_local.size:
            vec[shell_local] = lateral_fn(s)
        return vec

    terminal = np.asarray(terminal, dtype=float)
    knots = sorted(set(_generator_times(schedule, t1, t2))
                   | set(record_times.tolist()))
    out = {}

    def sweep(step):
        recorded = {}
        y = terminal[int_local].copy()
        if abs(knots[-1] - t2) < 1e-12:
            recorded[knots[-1]] = terminal.copy()
        for a, b in zip(reversed(knots[:-1]), reversed(knots[1:])):
            piece = _PieceView(schedule, a, b)

            def rhs(s, state):
                k_rows = one_step_kernel(piece, s).matrix[np.ix_(mem[int_local], mem)]
                return k_rows @ full(s, state) - state

            nsteps = max(1, int(math.ceil((b - a) / step - 1e-12)))
            y = _rk4_span(schedule, a, b, y, rhs, nsteps)
            recorded[a] = full(a, y)
        return recorded

    prev = sweep(ode_step)
    step = ode_step
    for _ in range(14):
        step /= 2.0
        cur = sweep(step)
        gap = max(float(np.abs(cur[t] - prev[t]).max()) for t in cur)
        if gap < ODE_TOL:
            out = cur
            break
        prev = cur
    else:
        raise OdeNotConverged("cylinder sweep did not reach %s" % fmt_real(ODE_TOL))

    times = record_times if record_times.size else np.array([t1, t2])
    values = np.array([out[min(out, key=lambda t, s=s: abs(t - s))] for s in times])
    return times, values


def solve_cylinder(schedule, cylinder, terminal, lateral=0.0, mode="discrete",
                   ode_step=0.05):
    """Solve the backward heat equation on ``cylinder``.

    ``terminal`` gives u(t2, .) on B(z, R) (scalar or per-member array in the
    sorted-member order); ``lateral`` gives the shell data for s < t2 as a
    scalar, a per-shell-vertex array, or a callable s -> array.  All data must
    be nonnegative.
    """
    g = schedule.graph
    members, interior = _ball_members(g, cylinder.z, cylinder.R)
    _guard_interior(g, members, interior, "solve_cylinder")
    n_shell = int((~interior).sum())

    term = np.asarray(terminal, dtype=float)
    if term.ndim == 0:
        term = np.full(len(members), float(term))
    if term.shape != (len(members),):
        raise ParameterOutOfRange("terminal data must cover the ball")
    if (term < 0).any():
        raise NegativeBoundaryData("terminal data must be nonnegative")
    lat = _as_lateral(lateral, n_shell)
    for probe in (cylinder.t1, (cylinder.t1 + cylinder.t2) / 2.0):
        if n_shell and (lat(probe) < 0).any():
            raise NegativeBoundaryData("lateral data must be nonnegative")

    if mode == "discrete":
        if abs(cylinder.t1 - round(cylinder.t1)) > 1e-9 \
                or abs(cylinder.t2 - round(cylinder.t2)) > 1e-9:
            raise ParameterOutOfRange("discrete cylinders need integer times")
        times, values = _discrete_backward(
            schedule, round(cylinder.t1), round(cylinder.t2),
            members, interior, term, lat)
        meta = {}
    elif mode == "continuous":
        grid, segments = _dense_grid(schedule, cylinder.t1, cylinder.t2)
        times, values = _continuous_backward(
            schedule, cylinder.t1, cylinder.t2, members, interior, term, lat,
            grid, ode_step)
        meta = {"segments": segments}
    else:
        raise ParameterOutOfRange("mode must be discrete or continuous")

    return CylinderSolution(cylinder, mode, members, tuple(
        m for m, keep in zip(members, interior) if keep),
        times, values, bool((values > -1e-12).all()), meta)


def residual_check(schedule, solution):
    """Independent residual of the heat equation at interior grid points.

    Discrete solutions are re-checked against freshly built one-step kernels;
    continuous ones against the integral form of the equation via composite
    Simpson on consecutive recorded triples (never across a schedule
    breakpoint).  Returns max |residual| / max(1, sup|u|).
    """
    mem = np.array(solution.members)
    int_local = np.array([m in set(solution.interior) for m in solution.members])
    scale = max(1.0, float(np.abs(solution.values).max()))
    worst = 0.0
    if solution.mode == "discrete":
        for i in range(len(solution.times) - 1):
            s = float(solution.times[i + 1])
            k_rows = one_step_kernel(schedule, s).matrix[np.ix_(mem[int_local], mem)]
            lhs = solution.values[i][int_local]
            worst = max(worst, float(np.abs(lhs - k_rows @ solution.values[i + 1]).max()))
        return worst / scale

    segments = solution.meta.get("segments")
    if segments is None:
        raise ParameterOutOfRange("solution carries no dense grid to check")
    for lo, hi in segments:
        ts = solution.times[lo:hi + 1]
        if len(ts) < 3:
            continue
        h = float(ts[1] - ts[0])
        flows = []
        for i in range(lo, hi + 1):
            k_rows = one_step_kernel(schedule, float(solution.times[i])).matrix[
                np.ix_(mem[int_local], mem)]
            flows.append(k_rows @ solution.values[i] - solution.values[i][int_local])
        for i in range(0, hi - lo - 1, 2):
            simpson = (h / 3.0) * (flows[i] + 4.0 * flows[i + 1] + flows[i + 2])
            r = solution.values[lo + i + 2][int_local] \
                - solution.values[lo + i][int_local] + simpson
            worst = max(worst, float(np.abs(r).max()))
    return worst / scale


# ---------------------------------------------------------------------------
# killed-kernel families (zero lateral data, delta + random terminal data)
# ---------------------------------------------------------------------------

def _killed_matrices(schedule, t1, t2, members, interior, record_times, mode,
                     ode_step=0.05):
    """M_s(x, y) = u(s, x) for terminal data delta_y, zero shell data.

    Returns {s: matrix over members}.  Constant-in-time pieces use the matrix
    exponential of the killed generator; varying pieces fall back to the same
    step-halved integration as the propagator machinery.
    """
    mem = np.array(members)
    int_local = np.flatnonzero(interior)
    sub = np.ix_(mem[int_local], mem[int_local])
    record = sorted(set(float(t) for t in record_times) | {float(t2)})
    out = {}

    if mode == "discrete":
        m_cur = np.eye(len(members))
        if record and abs(record[-1] - t2) < 1e-9:
            out[record[-1]] = m_cur.copy()
        for s in range(int(t2), int(t1), -1):
            k_rows = one_step_kernel(schedule, s).matrix[np.ix_(mem[int_local], mem)]
            nxt = np.zeros_like(m_cur)
            nxt[int_local] = k_rows @ m_cur
            m_cur = nxt
            for t in record:
                if abs(t - (s - 1)) < 1e-9:
                    out[t] = m_cur.copy()
        return out

    knots = sorted(set(_generator_times(schedule, t1, t2)) | set(record))
    prop = np.eye(len(int_local))
    cache = {}
    for t in record:
        if abs(t - knots[-1]) < 1e-12:
            out[t] = np.eye(len(members))
    for a, b in zip(reversed(knots[:-1]), reversed(knots[1:])):
        if _is_constant_piece(schedule, a, b):
            gen = one_step_kernel(schedule, a).matrix[sub] - np.eye(len(int_local))
            key = (round(b - a, 12), gen.tobytes())
            piece_prop = cache.get(key)
            if piece_prop is None:
                piece_prop = expm((b - a) * gen)
                cache[key] = piece_prop
        else:
            piece = _PieceView(schedule, a, b)

            def rhs(s, m):
                gen = one_step_kernel(piece, s).matrix[sub] - np.eye(len(int_local))
                return gen @ m

            prev = _rk4_span(schedule, a, b, np.eye(len(int_local)), rhs,
                             max(1, int(math.ceil((b - a) / ode_step - 1e-12))))
            step = ode_step
            for _ in range(14):
                step /= 2.0
                cur = _rk4_span(schedule, a, b, np.eye(len(int_local)), rhs,
                                max(1, int(math.ceil((b - a) / step - 1e-12))))
                if float(np.abs(cur - prev).max()) < ODE_TOL:
                    piece_prop = cur
                    break
                prev = cur
            else:
                raise OdeNotConverged("killed piece [%s, %s] did not converge"
                                      % (fmt_real(a), fmt_real(b)))
        prop = piece_prop @ prop
        for t in record:
            if abs(t - a) < 1e-12:
                full = np.zeros((len(members), len(members)))
                full[np.ix_(int_local, int_local)] = prop
                out[t] = full
    return out


def _random_data(n_members, n_random, seed):
    rng = np.random.default_rng(seed)
    return rng.random((n_members, max(n_random, 0)))


# ---------------------------------------------------------------------------
# parabolic Harnack quotient
# ---------------------------------------------------------------------------

def _tau_window(lo, hi, mode, samples=5):
    """Admissible tau values in (lo, hi]; a singleton when the window closes."""
    if mode == "discrete":
        taus = [k for k in range(int(math.floor(lo)) + 1,
                                 int(math.floor(hi + 1e-9)) + 1) if k > lo]
        return taus if taus else [max(1, int(round(hi)))]
    if hi - lo < 1e-12:
        return [hi]
    return [lo + (hi - lo) * k / samples for k in range(1, samples + 1)]


def phi_estimate(schedule, z, R, T, theta=None, family=None, mode=None,
                 n_random=50, seed=0, ode_step=0.05):
    """Worst Harnack quotient u(T - tau2, x2) / u(T - tau1, x1).

    The scan runs over the window grids (theta_{2i-1} R)^2 < tau_i <=
    (theta_{2i} R)^2, points x1, x2 in B(z, R), and a solution family on the
    enclosing cylinder [T - (theta4 R)^2, T] x B(z, 8R): every delta terminal
    datum plus ``n_random`` seeded nonnegative ones, all with zero shell data
    (or an explicit list of CylinderSolution objects).  Quotients are
    regularized by +1e-300 so that identically-zero pairs score one.
    """
    mode = mode or schedule.time_mode
    th = tuple(float(v) for v in (theta if theta is not None else PHI_THETA))
    if not (0 < th[0] <= th[1] < th[2] <= th[3]):
        raise ParameterOutOfRange("need 0 < theta1 <= theta2 < theta3 <= theta4")
    if T < (th[3] * R) ** 2 - 1e-9:
        raise ParameterOutOfRange("need T >= (theta4 R)^2")
    g = schedule.graph

    tau1 = _tau_window((th[0] * R) ** 2, (th[1] * R) ** 2, mode)
    tau2 = _tau_window((th[2] * R) ** 2, (th[3] * R) ** 2, mode)
    record = sorted({float(T - t) for t in tau1 + tau2})

    small = set(ball(g, z, R).members)
    dist = g.distance_matrix() if mode == "discrete" else None

    if family is None:
        members, interior = _ball_members(g, z, 8 * R)
        _guard_interior(g, members, interior, "phi_estimate")
        mats = _killed_matrices(schedule, min(record), T, members, interior,
                                record, mode, ode_step)
        gmat = _random_data(len(members), n_random, seed)
        small_local = np.array([i for i, m in enumerate(members) if m in small])

        def slice_at(t):
            base = mats[min(mats, key=lambda u, s=t: abs(u - s))]
            cols = np.hstack([base, base @ gmat]) if gmat.size else base
            return cols[small_local]
    else:
        sols = list(family)
        small_sorted = sorted(small)

        def slice_at(t):
            cols = []
            for sol in sols:
                row = sol.at_time(t)
                idx = [sol.member_index(x) for x in small_sorted]
                cols.append(row[idx])
            return np.array(cols).T

    small_list = sorted(small)
    gamma_hat, witness = math.inf, None
    for t1v in tau1:
        u1 = slice_at(T - t1v) + _REG
        for t2v in tau2:
            if t2v <= t1v:
                continue
            u2 = slice_at(T - t2v) + _REG
            if mode == "discrete":
                allowed = dist[np.ix_(small_list, small_list)] <= (t2v - t1v) + 1e-9
                den = np.where(allowed[:, :, None], u1[None, :, :], -np.inf).max(axis=1)
                ratio = np.where(np.isfinite(den), u2 / den, np.inf)
            else:
                ratio = u2 / u1.max(axis=0)[None, :]
            i, j = np.unravel_index(np.argmin(ratio), ratio.shape)
            if ratio[i, j] < gamma_hat:
                gamma_hat = float(ratio[i, j])
                if mode == "discrete":
                    den_row = np.where(allowed[i][:, None], u1, -np.inf)
                    k = int(np.argmax(den_row[:, j]))
                else:
                    k = int(np.argmax(u1[:, j]))
                witness = {"tau1": float(t1v), "x1": int(small_list[k]),
                           "tau2": float(t2v), "x2": int(small_list[i]),
                           "member": int(j)}
    return {"gamma_hat": gamma_hat, "witness": witness, "theta": th,
            "tau1_grid": [float(t) for t in tau1],
            "tau2_grid": [float(t) for t in tau2],
            "family_size": int(slice_at(float(T - tau1[0])).shape[1]),
            "mode": mode, "z": int(z), "R": float(R), "T": float(T),
            "exploratory": mode == "discrete"}


# ---------------------------------------------------------------------------
# Holder regularity
# ---------------------------------------------------------------------------

def holder_check(schedule, z, R, T, solution, gamma_hat=None, max_h=8.0):
    """Largest h with |u(s2,y2) - u(s1,y1)| <= (4/R)^h (|ds|^(1/2) v d)^h sup u.

    Scans pairs with y_j in B(z, R) and (T - s_j) in [R^2, 4 R^2] on the
    solution's recorded grid.  Also reports the oscillation decay over the
    dyadic cylinders [s1, s1 + 4^i] x B(z, 2^i) and, when ``gamma_hat`` is
    given, the exponent log2(1/(1 - gamma_hat)) predicted by that decay.
    """
    g = schedule.graph
    small = sorted(set(ball(g, z, R).members))
    idx = [solution.member_index(x) for x in small]
    keep = (solution.times >= T - 4 * R * R - 1e-9) \
        & (solution.times <= T - R * R + 1e-9)
    ts = solution.times[keep]
    if ts.size > 25:
        ts = ts[np.linspace(0, ts.size - 1, 25).round().astype(int)]
    vals = np.array([solution.at_time(t)[idx] for t in ts])
    sup_u = float(np.abs(solution.values).max())
    dist = g.distance_matrix()[np.ix_(small, small)]

    n_t, n_x = vals.shape
    flat = vals.reshape(-1)
    dt = np.abs(ts[:, None] - ts[None, :])
    size = np.maximum(np.sqrt(dt)[:, :, None, None],
                      dist[None, None, :, :]).transpose(0, 2, 1, 3).reshape(
                          n_t * n_x, n_t * n_x)
    du = np.abs(flat[:, None] - flat[None, :])
    q = 4.0 * size / R
    mask = (q < 1.0) & (du > 1e-300 * max(sup_u, 1.0)) & (q > 0)
    h_est = max_h
    if sup_u > 0 and mask.any():
        bound = np.log(du[mask] / sup_u) / np.log(q[mask])
        h_est = float(min(max_h, bound.min()))

    report = {"h_est": h_est, "pairs": int(mask.sum()), "sup_u": sup_u}
    if gamma_hat is not None:
        h_phi = math.log2(1.0 / (1.0 - gamma_hat)) if gamma_hat < 1 else max_h
        viol = 0
        if sup_u > 0 and mask.any():
            viol = int((du[mask] > (q[mask] ** h_phi) * sup_u * (1 + 1e-9)).sum())
        report.update({"h_phi": h_phi, "violations": viol,
                       "consistent": h_est + 1e-9 >= h_phi or viol == 0})

    s1 = T - 4 * R * R
    osc = []
    i = 0
    while 2 ** i <= 2 * R and s1 + 4.0 ** i <= T + 1e-9:
        r_i = 2 ** i
        members_i = sorted(set(ball(g, z, r_i).members) & set(solution.members))
        loc = [solution.member_index(x) for x in members_i]
        sel = (solution.times >= s1 - 1e-9) & (solution.times <= s1 + r_i * r_i + 1e-9)
        block = solution.values[sel][:, loc]
        osc.append({"i": i, "radius": r_i,
                    "osc": float(block.max() - block.min()) if block.size else 0.0})
        i += 1
    decay_ok = None
    if gamma_hat is not None and len(osc) > 1:
        decay_ok = all(osc[k - 1]["osc"] <= (1 - gamma_hat) * osc[k]["osc"] + 1e-12
                       for k in range(1, len(osc)))
    report.update({"oscillations": osc, "decay_ok": decay_ok})
    return report


# ---------------------------------------------------------------------------
# growth lemmas
# ---------------------------------------------------------------------------

def _cyl_quadrature(times, t_lo, t_hi, mode):
    """(indices, weights) for integrating over [t_lo, t_hi] on a time grid."""
    sel = np.flatnonzero((times >= t_lo - 1e-9) & (times <= t_hi + 1e-9))
    if sel.size == 0:
        return sel, np.zeros(0)
    if mode == "discrete" or sel.size == 1:
        return sel, np.ones(sel.size)
    ts = times[sel]
    w = np.zeros(sel.size)
    w[:-1] += np.diff(ts) / 2.0
    w[1:] += np.diff(ts) / 2.0
    return sel, w


def growth_lemma_estimate(schedule, z, R, T, delta, mode=None, n_random=50,
                          seed=0, ode_step=0.05):
    """First growth lemma scan: epsilon_hat(delta).

    Members of a killed solution family on [T - 4R^2, T] x B(z, 2R) are
    rescaled by their pi-weighted upper delta-quantile over the hypothesis
    cylinder [T - R^2, T] x B(z, R), so each candidate's level set {u >= 1}
    holds mass fraction >= delta there; epsilon_hat is the smallest resulting
    infimum over [T - 3R^2, T - 2R^2] x B(z, R).  The second-lemma form is
    fitted as value >= c * (mass ratio)^theta over shrunken sub-cylinders.
    """
    mode = mode or schedule.time_mode
    if T < 6 * R * R - 1e-9:
        raise ParameterOutOfRange("need T >= 6 R^2")
    if not (0 < delta <= 1):
        raise ParameterOutOfRange("delta must lie in (0, 1]")
    g = schedule.graph
    members, interior = _ball_members(g, z, 2 * R)
    _guard_interior(g, members, interior, "growth_lemma_estimate")
    small = sorted(set(ball(g, z, R).members))
    small_local = np.array([members.index(x) for x in small])

    if mode == "discrete":
        record = sorted(set(range(int(T - 4 * R * R), int(T) + 1)))
    else:
        record = sorted(set(np.linspace(T - R * R, T, 17).tolist())
                        | set(np.linspace(T - 3 * R * R, T - 2 * R * R, 9).tolist())
                        | {T - 4 * R * R, T})
    mats = _killed_matrices(schedule, T - 4 * R * R, T, members, interior,
                            record, mode, ode_step)
    times = np.array(sorted(mats))
    stack = np.array([mats[t] for t in times])          # (n_t, n_mem, n_mem)
    gmat = _random_data(len(members), n_random, seed)
    cols = np.concatenate([stack, stack @ gmat], axis=2) if gmat.size else stack

    hyp_sel, hyp_w = _cyl_quadrature(times, T - R * R, T, mode)
    con_sel, _ = _cyl_quadrature(times, T - 3 * R * R, T - 2 * R * R, mode)
    pi_rows = np.array([schedule.vertex_conductance(t)[list(members)]
                        for t in times])
    hyp_weight = (hyp_w[:, None] * pi_rows[hyp_sel][:, small_local]).reshape(-1)
    hyp_total = float(hyp_weight.sum())

    rows, eps_hat = [], math.inf
    second_pts = []
    base_idx = int(np.argmin(np.abs(times - (T - 4 * R * R))))
    z_local = members.index(z)

    radii = [r for r in (1, 2, 4, 8) if r <= R // 2 and r >= 1]
    for c in range(cols.shape[2]):
        u = cols[:, :, c]
        hyp_vals = u[hyp_sel][:, small_local].reshape(-1)
        if hyp_vals.max() <= 0:
            continue
        order = np.argsort(hyp_vals)[::-1]
        cum = np.cumsum(hyp_weight[order])
        pos = np.searchsorted(cum, delta * hyp_total)
        if pos >= order.size:
            continue
        q = float(hyp_vals[order[pos]])
        if q <= 0:
            continue
        dens = float(hyp_weight[hyp_vals >= q - 1e-15].sum() / hyp_total)
        inf_u = float(u[con_sel][:, small_local].min())
        rows.append({"member": c, "quantile": q, "density": dens,
                     "inf": inf_u / q})
        eps_hat = min(eps_hat, inf_u / q)

        for r in radii:
            for tp in np.linspace(T - (R / 2.0) ** 2 + r * r, T, 3):
                s_sel, s_w = _cyl_quadrature(times, tp - r * r, tp, mode)
                if s_sel.size == 0:
                    continue
                sm = sorted(set(ball(g, z, r).members))
                sl = np.array([members.index(x) for x in sm])
                wts = (s_w[:, None] * pi_rows[s_sel][:, sl]).reshape(-1)
                vals = u[s_sel][:, sl].reshape(-1) / q
                tot = float(wts.sum())
                if tot <= 0:
                    continue
                if float(wts[vals >= 1.0].sum()) / tot >= delta:
                    ratio = tot / hyp_total
                    second_pts.append((ratio, float(u[base_idx, z_local] / q)))

    report = {"delta": float(delta), "epsilon_hat":
              None if not rows else float(eps_hat),
              "empty_family": not rows, "members": rows, "mode": mode}
    vals = [(r, v) for r, v in second_pts if v > 0 and r > 0]
    if len({round(math.log(r), 9) for r, _ in vals}) >= 2:
        lx = np.log([r for r, _ in vals])
        ly = np.log([v for _, v in vals])
        theta_fit = float(np.polyfit(lx, ly, 1)[0])
        c_fit = float(min(v / r ** theta_fit for r, v in vals))
        report["second_lemma"] = {"theta": theta_fit, "c": c_fit,
                                  "points": len(vals)}
    else:
        report["second_lemma"] = {"theta": None, "c": None, "points": len(vals)}
    return report


# ---------------------------------------------------------------------------
# L2 mean-value inequality
# ---------------------------------------------------------------------------

def subsolution_violation(schedule, solution):
    """Largest violation of the sub-solution inequality, with its witness.

    Sub-solutions satisfy u(s-1, x) <= (K_s u_s)(x) at interior points
    (discrete), or the integral form of -du/ds <= (K_s - I) u (continuous);
    a solution scores ~0 and a strict sub-solution scores negative residuals
    only.
    """
    mem = np.array(solution.members)
    int_local = np.array([m in set(solution.interior) for m in solution.members])
    worst, witness = -math.inf, None
    if solution.mode == "discrete":
        for i in range(len(solution.times) - 1):
            s = float(solution.times[i + 1])
            k_rows = one_step_kernel(schedule, s).matrix[np.ix_(mem[int_local], mem)]
            resid = solution.values[i][int_local] - k_rows @ solution.values[i + 1]
            j = int(np.argmax(resid))
            if float(resid[j]) > worst:
                worst = float(resid[j])
                witness = {"s": float(solution.times[i]),
                           "x": int(mem[int_local][j])}
        return worst, witness

    segments = solution.meta.get("segments")
    if segments is None:
        raise ParameterOutOfRange("solution carries no dense grid to check")
    for lo, hi in segments:
        ts = solution.times[lo:hi + 1]
        if len(ts) < 3:
            continue
        h = float(ts[1] - ts[0])
        flows = []
        for i in range(lo, hi + 1):
            k_rows = one_step_kernel(schedule, float(solution.times[i])).matrix[
                np.ix_(mem[int_local], mem)]
            flows.append(k_rows @ solution.values[i] - solution.values[i][int_local])
        for i in range(0, hi - lo - 1, 2):
            simpson = (h / 3.0) * (flows[i] + 4.0 * flows[i + 1] + flows[i + 2])
            r = -(solution.values[lo + i + 2][int_local]
                  - solution.values[lo + i][int_local] + simpson)
            j = int(np.argmax(r))
            if float(r[j]) > worst:
                worst = float(r[j])
                witness = {"s": float(solution.times[lo + i]),
                           "x": int(mem[int_local][j])}
    return worst, witness


def ml2_check(schedule, z, R, T, t, subsolution, nu=1.0, mode=None):
    """L2 mean-value inequality u^2(T-t, z) <= C theta(t/R^2)/pi(Q) int u^2.

    ``subsolution`` must cover Q(T-2t, T; z, R); its sub-solution property is
    verified by the residual sign check first.  Returns both sides with the
    fitted C and theta(tau) = max(tau, tau^(-1/nu)).
    """
    mode = mode or subsolution.mode
    if not (T >= 2 * t >= 4):
        raise ParameterOutOfRange("need T >= 2t >= 4")
    if R <= 1:
        raise ParameterOutOfRange("need R > 1")
    viol, witness = subsolution_violation(schedule, subsolution)
    tol = 1e-10 if mode == "discrete" else 1e-7
    scale = max(1.0, float(np.abs(subsolution.values).max()))
    if viol > tol * scale:
        raise NotASubsolution("residual %s at %r" % (fmt_real(viol), witness))

    sel, w = _cyl_quadrature(subsolution.times, T - 2 * t, T, mode)
    pi_rows = np.array([schedule.vertex_conductance(float(subsolution.times[i]))
                        [list(subsolution.members)] for i in sel])
    mass = float((w[:, None] * pi_rows).sum())
    integral = float((w[:, None] * pi_rows * subsolution.values[sel] ** 2).sum())
    lhs = float(subsolution.at_time(T - t)[subsolution.member_index(z)]) ** 2
    tau = t / (R * R)
    theta_factor = max(tau, tau ** (-1.0 / nu))
    rhs_shape = theta_factor * integral / mass if mass > 0 else 0.0
    return {"lhs": lhs, "rhs_shape": rhs_shape, "theta_factor": theta_factor,
            "pi_Q": mass, "integral": integral,
            "C_fit": lhs / rhs_shape if rhs_shape > 0 else 0.0,
            "subsolution_residual": viol, "mode": mode, "nu": float(nu)}


# ---------------------------------------------------------------------------
# Gaffney tilted-norm bounds
# ---------------------------------------------------------------------------

def _zeta(theta, alpha, lip):
    return (math.exp(2.0 * lip * abs(theta)) - 1.0) ** 2 / (8.0 * alpha)


def _dtrw_c1(alpha, lip, tol=1e-8):
    """c1 = (1/2) sup_theta theta^-2 log(1 + 2 zeta(theta)), to ``tol``.

    The objective tends to (lip^2 / alpha) at zero and decays at infinity;
    a coarse geometric scan brackets the maximum, then golden-section
    refinement narrows the bracket below ``tol``.
    """
    def obj(th):
        return math.log1p(2.0 * _zeta(th, alpha, lip)) / (th * th)

    grid = np.geomspace(1e-6, min(64.0, 140.0 / max(lip, 1e-9)), 400)
    vals = [obj(t) for t in grid]
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = obj(d)
    best = max(max(vals), fc, fd, lip * lip / alpha)
    return 0.5 * best


def gaffney_check(schedule, s, t, thetas=(0.0, 0.1, -0.1, 0.5, -0.5, 1.0, -1.0),
                  rho=None, x0=0, mode=None, ode_step=0.05):
    """Tilted-kernel norm bound ||K^theta_{s,t}||_{L2(pi_t) -> L2(pi_s)}.

    The measured weighted 2->2 norm of w_{-theta} K_{s,t} w_theta is compared
    with exp(chi(theta) (t-s)), where chi = zeta for continuous time (with
    delta_star = 1, alpha = 1) and chi = c1 theta^2 for discrete time (with
    delta_star = inf and the laziness alpha measured over the span).  The
    quadratic envelope c1^-1 theta^2 <= chi <= c1 theta^2 is checked on the
    grid points with |theta| <= delta_star.
    """
    mode = mode or schedule.time_mode
    g = schedule.graph
    if rho is None:
        rho = g.distance_matrix()[int(x0)].astype(float)
    rho = np.asarray(rho, dtype=float)

    K = kernel_between(schedule, s, t, mode=mode, ode_step=ode_step)
    pi_s = schedule.vertex_conductance(s)
    pi_t = schedule.vertex_conductance(t)

    if mode == "discrete":
        alpha = min(float(one_step_kernel(schedule, k).matrix.diagonal().min())
                    for k in range(int(s) + 1, int(t) + 1)) if t > s else 1.0
        if alpha <= 0:
            raise ParameterOutOfRange(
                "discrete Gaffney bound needs a lazy kernel (K_t(x,x) > 0)")
        lip = weight_field(g, 1.0, rho).lipschitz
        c1 = _dtrw_c1(alpha, lip)
        chi = lambda th: c1 * th * th
        delta_star = math.inf
    else:
        alpha = 1.0
        lip = weight_field(g, 1.0, rho).lipschitz
        c1 = _dtrw_c1(alpha, lip)
        chi = lambda th: _zeta(th, alpha, lip)
        delta_star = 1.0

    rows = []
    for th in thetas:
        tilted = perturbed_kernel(K, weight_field(g, float(th), rho))
        measured = weighted_norm(tilted.matrix, 2, 2, pi_t, pi_s)
        bound = math.exp(chi(float(th)) * (t - s))
        rows.append({"theta": float(th), "measured": measured, "bound": bound,
                     "ratio": measured / bound})

    env = [r for r in rows if 0 < abs(r["theta"]) <= delta_star]
    c1_env = max((max(chi(r["theta"]) / r["theta"] ** 2,
                      r["theta"] ** 2 / chi(r["theta"]))
                  for r in env), default=1.0)
    return {"mode": mode, "alpha": alpha, "lipschitz": lip, "c1": c1,
            "delta_star": delta_star, "rows": rows,
            "envelope_c1": float(c1_env),
            "passed": all(r["ratio"] <= 1 + 1e-9 for r in rows)}


# ---------------------------------------------------------------------------
# weighted maximum principle
# ---------------------------------------------------------------------------

def _decay_rate(r, mode):
    """I(r): r^2 for discrete time; r^2 then r (log r + 1) for continuous."""
    r = np.asarray(r, dtype=float)
    if mode == "discrete":
        return r * r
    return np.where(r <= 1.0, r * r, r * (np.log(np.maximum(r, 1.0)) + 1.0))


def _solution_on_graph(schedule, t, terminal, mode, record, ode_step=0.05):
    """Backward solution on the whole (finite) graph, recorded on a grid."""
    g = schedule.graph
    members = tuple(range(g.vertex_count))
    interior = np.ones(g.vertex_count, dtype=bool)
    mats = _killed_matrices(schedule, min(record), t, members, interior,
                            record, mode, ode_step)
    return {s: m @ np.asarray(terminal, dtype=float) for s, m in mats.items()}


def max_principle_monotone_E(schedule, t, rho=None, eta=None, x0=0,
                             terminal=None, mode=None, eta_max=8.0,
                             ode_step=0.05):
    """Trace of E_s(u) = sum_x f_s(x) u_s(x)^2 pi_s(x) and its largest eta.

    The weight is f_s(x) = exp(-eta (s+1) I(rho(x)/(s+1))) with rho >= 1;
    eta = 0 recovers the plain weighted energy, nondecreasing in s for
    monotone schedules.  A bisection finds the largest eta in [0, eta_max]
    keeping the recorded trace nondecreasing.
    """
    mode = mode or schedule.time_mode
    g = schedule.graph
    if rho is None:
        rho = np.maximum(g.distance_matrix()[int(x0)].astype(float), 1.0)
    rho = np.asarray(rho, dtype=float)
    if (rho < 1 - 1e-12).any():
        raise ParameterOutOfRange("the weight needs inf rho >= 1")
    if terminal is None:
        terminal = np.zeros(g.vertex_count)
        terminal[int(x0)] = 1.0

    if mode == "discrete":
        grid = np.arange(0, int(t) + 1, dtype=float)
    else:
        grid = np.linspace(0.0, float(t), 33)
    sols = _solution_on_graph(schedule, t, terminal, mode, grid.tolist(),
                              ode_step)
    u_rows = np.array([sols[min(sols, key=lambda v, s=s: abs(v - s))]
                       for s in grid])
    pi_rows = np.array([schedule.vertex_conductance(s) for s in grid])

    def trace(eta_val):
        f = np.exp(-eta_val * (grid[:, None] + 1.0)
                   * _decay_rate(rho[None, :] / (grid[:, None] + 1.0), mode))
        return (f * u_rows ** 2 * pi_rows).sum(axis=1)

    def monotone(eta_val):
        tr = trace(eta_val)
        return bool((np.diff(tr) >= -1e-12 * max(1.0, tr.max())).all()), tr

    ok0, tr0 = monotone(0.0)
    hi_ok, tr_hi = monotone(eta_max)
    if hi_ok:
        eta_star = eta_max
    else:
        lo, hi = 0.0, eta_max
        for _ in range(60):
            mid = (lo + hi) / 2.0
            if monotone(mid)[0]:
                lo = mid
            else:
                hi = mid
        eta_star = lo
    report = {"eta_star": float(eta_star), "monotone_at_zero": ok0,
              "bracket_open": bool(hi_ok), "grid": grid.tolist(),
              "trace_at_zero": tr0.tolist(), "mode": mode}
    if eta is not None:
        ok, tr = monotone(float(eta))
        report.update({"eta": float(eta), "trace": tr.tolist(),
                       "monotone": ok})
    return report


# ---------------------------------------------------------------------------
# D-doubling
# ---------------------------------------------------------------------------

def d_doubling_check(schedule, y, t, s_grid=None, mode=None, theta0=0.5,
                     ode_step=0.05):
    """D_{s,t}(y) = sum_x pi_s(x) K_{s,t}(x,y)^2: monotonicity and doubling.

    Doubling compares the dyadic pairs C1 D_{t-2s,t} >= D_{t-s,t}; the moment
    bound reweighs K_{tau,2tau}(.,y)^2 by exp(theta0 rho_tau) for
    rho_tau(z,y) = d(z,y) (d(z,y)/tau ^ 1) and fits C2 at tau = t/2.
    """
    mode = mode or schedule.time_mode
    g = schedule.graph
    if s_grid is None:
        ss = [t]
        while ss[-1] / 2.0 >= (1.0 if mode == "continuous" else 1):
            nxt = ss[-1] / 2.0 if mode == "continuous" else ss[-1] // 2
            ss.append(nxt)
        s_grid = sorted({t - v for v in ss} | {0.0, float(t)})
    s_grid = sorted(float(v) for v in s_grid)

    terminal = np.zeros(g.vertex_count)
    terminal[int(y)] = 1.0
    sols = _solution_on_graph(schedule, t, terminal, mode, s_grid, ode_step)
    d_vals = {}
    for s in s_grid:
        u = sols[min(sols, key=lambda v, q=s: abs(v - q))]
        d_vals[s] = float((schedule.vertex_conductance(s) * u * u).sum())

    svals = [d_vals[s] for s in s_grid]
    monotone = bool((np.diff(svals) >= -1e-12 * max(svals)).all())
    c1, pairs = 1.0, []
    for s in s_grid:
        lag = t - s
        if lag <= 0:
            continue
        lo = t - 2 * lag
        if lo in d_vals and d_vals[lo] > 0:
            ratio = d_vals[s] / d_vals[lo]
            pairs.append({"s": lag, "ratio": ratio})
            c1 = max(c1, ratio)

    tau = t / 2.0 if mode == "continuous" else t // 2
    rows = []
    headline = None
    if tau >= 1:
        K = kernel_between(schedule, tau, 2 * tau, mode=mode, ode_step=ode_step)
        col = K.matrix[:, int(y)]
        pi_tau = schedule.vertex_conductance(tau)
        d_yy = g.distance_matrix()[:, int(y)].astype(float)
        rho_t = d_yy * np.minimum(d_yy / tau, 1.0)
        base = float((pi_tau * col * col).sum())
        for th in sorted({0.25, 0.5, 1.0, float(theta0)}):
            wmom = float((pi_tau * col * col * np.exp(th * rho_t)).sum())
            rows.append({"theta0": th, "C2": wmom / base if base > 0 else math.inf})
        headline = next(r for r in rows if abs(r["theta0"] - theta0) < 1e-12)
    return {"t": float(t), "y": int(y), "D": {fmt_real(s): d_vals[s] for s in s_grid},
            "monotone": monotone, "C1": float(c1), "doubling_pairs": pairs,
            "moment": rows, "moment_headline": headline, "mode": mode}


# ---------------------------------------------------------------------------
# Gaussian envelope fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianFit:
    """Per-pair kernel data with the smallest two-sided envelope constant."""
    records: tuple
    c_star: float
    c_upper: float
    c_lower: float
    c_ghku: float
    meta: dict = field(default_factory=dict)

    def to_csv(self):
        lines = ["s,t,x,y,K,v_sqrt,mu,d,upper_ratio,lower_ratio"]
        for r in self.records:
            lines.append(",".join(fmt_real(r[k]) if isinstance(r[k], float)
                                  else str(r[k])
                                  for k in ("s", "t", "x", "y", "K", "v_sqrt",
                                            "mu", "d", "upper_ratio",
                                            "lower_ratio")))
        return "\n".join(lines) + "\n"


def _smallest_c(predicate, cap):
    """Smallest C >= 1 with predicate(C) true, for monotone predicates."""
    if predicate(1.0):
        return 1.0
    hi = 2.0
    while not predicate(hi):
        hi *= 2.0
        if hi > cap:
            return None
    lo = hi / 2.0
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return hi


def ghke_fit(schedule, catalog, v_profile=None, mode=None, c_cap=1e6,
             ode_step=0.05, records=None):
    """Fit the smallest C making both Gaussian envelopes hold on the catalog:

        C^-1 mu/v(sqrt(t-s)) e^{-C d^2/(t-s)} <= K_{s,t}(x,y)
                                      <= C mu/v(sqrt(t-s)) e^{-d^2/(C (t-s))}

    Catalog entries are (s, t, x, y) with d(x, y) <= t - s.  A kernel value
    whose lower envelope would need C beyond ``c_cap`` raises
    InfeasibleLowerEnvelope -- the Gaussian-lower-bound failure signal.  The
    measure-free upper envelope C/v e^{-(t-s) I(d/(t-s))/C} is fitted
    alongside.

    ``records`` bypasses the dense kernel stage: a sequence of dicts with
    keys s, t, x, y, d, K, mu, v_sqrt (as produced by a caller that can
    evolve the kernel rows more cheaply than a dense composition, e.g. on a
    long one-dimensional window).  The caller is then responsible for the
    d <= t - s restriction and the truncation guard.
    """
    if records is not None:
        mode = mode or (schedule.time_mode if schedule is not None
                        else "discrete")
        records = [dict(r) for r in records]
    else:
        mode = mode or schedule.time_mode
        g = schedule.graph
        if v_profile is None:
            from .geometry import growth_profile
            v_profile = growth_profile(schedule)
        dist = g.distance_matrix()

        groups = {}
        for (s, t, x, y) in catalog:
            d = float(dist[int(x), int(y)])
            if d > t - s + 1e-9:
                raise ParameterOutOfRange(
                    "catalog pair (%s, %s, %d, %d) has d > t - s"
                    % (s, t, x, y))
            if g.boundary:
                span = t - s
                if min(dist[int(x), b] for b in g.boundary) <= span \
                        or min(dist[int(y), b] for b in g.boundary) <= span:
                    raise TruncationGuard(
                        "pair (%d, %d) lies within t - s of the truncation "
                        "edge" % (x, y))
            groups.setdefault((float(s), float(t)),
                              []).append((int(x), int(y), d))

        def one_group(item):
            (s, t), pairs = item
            K = kernel_between(schedule, s, t, mode=mode, ode_step=ode_step)
            mu = evolving_measure(schedule, s, t, mode=mode, kernel=K).values
            out = []
            for (x, y, d) in pairs:
                out.append({"s": s, "t": t, "x": x, "y": y, "d": d,
                            "K": float(K.matrix[x, y]), "mu": float(mu[y]),
                            "v_sqrt": float(v_profile(math.sqrt(t - s)))})
            return out

        records = [r for chunk in
                   parallel_map(one_group, sorted(groups.items()))
                   for r in chunk]

    c_up, c_lo, c_gh = 1.0, 1.0, 1.0
    for r in records:
        span = r["t"] - r["s"]
        a = r["mu"] / r["v_sqrt"]
        b = r["d"] ** 2 / span if span > 0 else 0.0
        k = r["K"]
        if a > 0 and k > 0:
            c = _smallest_c(lambda C: C * a * math.exp(-b / C) >= k, c_cap)
            c_up = max(c_up, c if c is not None else c_cap)
        if a > 0:
            if k <= 0.0:
                raise InfeasibleLowerEnvelope(
                    "K_{%s,%s}(%d, %d) = 0 with d <= t - s"
                    % (fmt_real(r["s"]), fmt_real(r["t"]), r["x"], r["y"]))
            c = _smallest_c(lambda C: a * math.exp(-C * b) / C <= k, c_cap)
            if c is None:
                raise InfeasibleLowerEnvelope(
                    "pair (%d, %d) at t-s=%s needs C > %s for the lower "
                    "envelope" % (r["x"], r["y"], fmt_real(span), fmt_real(c_cap)))
            c_lo = max(c_lo, c)
        if k > 0 and span > 0:
            w = span * _decay_rate(np.array(r["d"] / span), mode).item()
            c = _smallest_c(
                lambda C: (C / r["v_sqrt"]) * math.exp(-w / C) >= k, c_cap)
            c_gh = max(c_gh, c if c is not None else c_cap)

    c_star = max(c_up, c_lo)
    for r in records:
        span = r["t"] - r["s"]
        a = r["mu"] / r["v_sqrt"]
        b = r["d"] ** 2 / span if span > 0 else 0.0
        upper = c_star * a * math.exp(-b / c_star)
        lower = a * math.exp(-c_star * b) / c_star
        r["upper_ratio"] = r["K"] / upper if upper > 0 else 0.0
        r["lower_ratio"] = lower / r["K"] if r["K"] > 0 else math.inf
        r["rho_t"] = r["d"] * min(r["d"] / span, 1.0) if span > 0 else 0.0
    return GaussianFit(tuple(records), float(c_star), float(c_up),
                       float(c_lo), float(c_gh),
                       {"mode": mode, "c_cap": float(c_cap),
                        "n_pairs": len(records)})
