"""Volume growth, doubling, Poincaré constants, laziness/ellipticity extraction."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import graphs as _graphs
from .errors import (ParameterOutOfRange, RadiusExceedsGuard,
                     SingularEnergyForm)
from .kernels import one_step_kernel
from ._util import parallel_map

_DENSE_EIG_LIMIT = 400


def default_time_grid(schedule, max_points=9):
    """Schedule grid thinned to at most ``max_points`` times."""
    g = schedule.grid()
    if len(g) <= max_points:
        return np.asarray(g, dtype=float)
    idx = np.unique(np.linspace(0, len(g) - 1, max_points).round().astype(int))
    return np.asarray(g, dtype=float)[idx]


def _default_centers(graph, cap=64, clearance=0):
    """Up to ``cap`` evenly spread vertices, at distance > ``clearance`` from
    any declared truncation boundary."""
    n = graph.vertex_count
    pool = np.arange(n)
    if graph.boundary and clearance > 0:
        D = graph.distance_matrix()
        bd = sorted(graph.boundary)
        pool = pool[D[:, bd].min(axis=1) > clearance]
        if pool.size == 0:
            raise RadiusExceedsGuard(
                "no vertex is further than %d from the truncation boundary"
                % clearance)
    if pool.size <= cap:
        return [int(v) for v in pool]
    idx = np.unique(np.linspace(0, pool.size - 1, cap).round().astype(int))
    return [int(v) for v in pool[idx]]


def _guard_ball(graph, x0, radius):
    """Raise if B(x0, radius) would touch the truncation boundary."""
    if not graph.boundary:
        return
    D = graph.distance_matrix()
    if min(D[x0, b] for b in graph.boundary) <= radius:
        raise RadiusExceedsGuard(
            "ball of radius %s around %d reaches the truncation boundary"
            % (radius, x0))


def _ball_mass_table(graph, pi_vec, radii, centers):
    """masses[i, j] = pi(B(centers[i], radii[j]))."""
    D = graph.distance_matrix()[centers]
    out = np.empty((len(centers), len(radii)))
    for j, r in enumerate(radii):
        out[:, j] = (D <= r + 1e-12) @ pi_vec
    return out


def volume_doubling_constant(schedule, times=None, radii=(1, 2, 4),
                             centers=None):
    """sup over (t, x, r) of pi_t(B(x, 2r)) / pi_t(B(x, r)).

    Radii must be >= 1.  On truncated windows (graphs with a declared
    boundary) the double balls must stay clear of the boundary; centers are
    chosen accordingly by default, and explicit centers that violate this
    raise RadiusExceedsGuard.
    """
    g = schedule.graph
    radii = sorted(set(int(r) for r in radii))
    if radii and radii[0] < 1:
        raise ParameterOutOfRange("radii must be >= 1")
    if times is None:
        times = default_time_grid(schedule)
    if centers is None:
        centers = _default_centers(g, clearance=2 * max(radii))
    else:
        for x in centers:
            _guard_ball(g, x, 2 * max(radii))
    both = sorted(set(radii) | set(2 * r for r in radii))
    col = {r: j for j, r in enumerate(both)}
    best = 1.0
    witness = None
    for t in times:
        masses = _ball_mass_table(g, schedule.vertex_conductance(t), both,
                                  centers)
        for r in radii:
            ratio = masses[:, col[2 * r]] / masses[:, col[r]]
            i = int(np.argmax(ratio))
            if ratio[i] > best:
                best = float(ratio[i])
                witness = {"t": float(t), "x": int(centers[i]), "r": int(r)}
    volume_doubling_constant.last_witness = witness
    return best


@dataclass
class GrowthProfile:
    """Radial volume profile v with v(0) = v(1) = 1 and its constants.

    ``values[j]`` is v at integer radius ``radii[j]``; between sample radii v
    is interpolated linearly and held flat beyond the largest one.  C_v is the
    smallest sampled constant with both v(2r) <= C_v v(r) and
    C_v^{-1} <= pi_t(B(x,r)) / v(r) <= C_v; C_D is the measured ball-doubling
    supremum on the same catalog.
    """

    radii: tuple
    values: tuple
    C_v: float
    C_D: float
    catalog: dict = field(default_factory=dict)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.radii, self.values)
        return out if out.ndim else float(out)


def growth_profile(schedule, times=None, radii=None, centers=None):
    """Fit a GrowthProfile to ball masses over a (time, center, radius) catalog.

    v(r) is the geometric mean of pi_t(B(x, r)) over the catalog, normalized
    by its value at r = 1 and monotonized by running maximum.
    """
    g = schedule.graph
    if times is None:
        times = default_time_grid(schedule)
    if radii is None:
        rmax = max(1, g.diameter)
        radii = sorted(set(
            int(r) for r in np.unique(np.geomspace(1, rmax, 24).round())))
    radii = sorted(set(int(r) for r in radii) | {1})
    if radii[0] < 1:
        raise ParameterOutOfRange("radii must be >= 1")
    if centers is None:
        centers = _default_centers(
            g, clearance=max(radii) if g.boundary else 0)

    tables = [_ball_mass_table(g, schedule.vertex_conductance(t), radii,
                               centers) for t in times]
    stack = np.stack(tables)            # (time, center, radius)
    log_mean = np.log(stack).mean(axis=(0, 1))
    scale = log_mean[radii.index(1)]
    vals = np.exp(np.maximum.accumulate(log_mean - scale))
    full_r = (0,) + tuple(radii)
    full_v = (1.0,) + tuple(float(v) for v in np.maximum(vals, 1.0))

    prof = GrowthProfile(full_r, full_v, 1.0, 1.0,
                         catalog={"times": [float(t) for t in times],
                                  "centers": [int(c) for c in centers],
                                  "radii": [int(r) for r in radii]})
    # comparability: pi_t(B(x,r)) / v(r) within [1/C_v, C_v] on the catalog
    ratios = stack / prof(np.array(radii))[None, None, :]
    c_comp = max(ratios.max(), 1.0 / ratios.min())
    # doubling of v itself at sampled radii with 2r sampled
    c_dbl = 1.0
    for r in full_r:
        if 2 * r in full_r and r >= 1:
            c_dbl = max(c_dbl, prof(2 * r) / prof(r))
    prof.C_v = float(max(c_comp, c_dbl))
    inner = [r for r in radii if 2 * r <= max(g.diameter, 1)]
    if inner and g.vertex_count > 1:
        prof.C_D = volume_doubling_constant(
            schedule, times, inner, None if g.boundary else centers)
    return prof


def _energy_matrix(schedule, t, members):
    """Matrix of the form sum_{x,y in members} (f(x)-f(y))^2 pi_t(x,y)."""
    idx = np.asarray(members, dtype=int)
    W = schedule.matrix(t)[np.ix_(idx, idx)].copy()
    np.fill_diagonal(W, 0.0)
    L = np.diag(W.sum(axis=1)) - W
    return 2.0 * L, W


def _connected(W):
    m = W.shape[0]
    seen = np.zeros(m, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        x = stack.pop()
        for y in np.flatnonzero(W[x] > 0):
            if not seen[y]:
                seen[y] = True
                stack.append(int(y))
    return bool(seen.all())


def _pencil_top_eigenvalue(M, A):
    """Largest lam with M f = lam A f over f orthogonal to constants.

    A is PSD with nullspace spanned by the constant vector; a rank-one shift
    in that direction makes it definite without moving the rest of the
    spectrum.  Dense solve up to _DENSE_EIG_LIMIT, else power iteration on
    the shifted pencil to 1e-10 relative residual.
    """
    m = M.shape[0]
    sigma = np.trace(A) / m if np.trace(A) > 0 else 1.0
    B = A + sigma * np.ones((m, m)) / m
    if m <= _DENSE_EIG_LIMIT:
        vals = scipy.linalg.eigh(M, B, eigvals_only=True)
        return float(vals[-1])
    cho = scipy.linalg.cho_factor(B)
    rng = np.random.default_rng(0)
    y = rng.standard_normal(m)
    y -= y.mean()
    lam = 0.0
    for _ in range(100000):
        z = M @ y
        y_new = scipy.linalg.cho_solve(cho, z)
        y_new -= y_new.mean()
        nrm = np.linalg.norm(y_new)
        if nrm == 0:
            return 0.0
        y_new /= nrm
        lam = float(y_new @ M @ y_new) / float(y_new @ A @ y_new)
        if np.linalg.norm(M @ y_new - lam * (A @ y_new)) <= \
                1e-10 * max(np.linalg.norm(M @ y_new), 1e-300):
            return lam
        y = y_new
    return lam


def poincare_constant(schedule, t, the_ball):
    """Smallest C so that for every f on the double ball B(x0, 2r),

        inf_c sum_{x in B(x0,r)} |f(x)-c|^2 pi_t(x)
            <= C r^2 sum_{x,y in B(x0,2r)} (f(x)-f(y))^2 K_t(x,y) pi_t(x).

    Computed as the top generalized eigenvalue of the centered inner-ball
    mass form against the scaled energy form on the double ball.
    """
    g = schedule.graph
    x0, r = the_ball.center, the_ball.radius
    _guard_ball(g, x0, 2 * r)
    b2 = _graphs.ball(g, x0, 2 * r)
    members = list(b2.members)
    pos = {v: i for i, v in enumerate(members)}
    inner = [pos[v] for v in the_ball.members]

    A, W = _energy_matrix(schedule, t, members)
    if not _connected(W):
        raise SingularEnergyForm(
            "double ball around %d is disconnected under the support of K_t"
            % x0)
    A = (r * r) * A

    pi_vec = schedule.vertex_conductance(t)[members]
    p = np.zeros(len(members))
    p[inner] = pi_vec[inner]
    M = np.diag(p) - np.outer(p, p) / p.sum()
    return max(_pencil_top_eigenvalue(M, A), 0.0)


def weighted_poincare_check(schedule, t, double_ball, f, c_p_prime=None):
    """Check the weighted inequality for one nonnegative f:

        C'_P r^2 sum_{x,y} min(eta(x),eta(y)) (f(x)-f(y))^2 pi_t(x,y)
            >= (pi(H_f)/pi(B)) sum_x eta(x) f(x)^2 pi_t(x)

    with eta = [1 - d(., z)/(2r)]_+^2 where ``double_ball`` is B(z, 2r), and
    H_f the zero set of f inside the inner ball B(z, r).  When ``c_p_prime``
    is None, the smallest constant making the inequality hold for this f is
    fitted and reported.
    """
    g = schedule.graph
    z = double_ball.center
    r = double_ball.radius / 2.0
    f = np.asarray(f, dtype=float)
    if f.shape != (g.vertex_count,):
        raise ParameterOutOfRange("f must be a vector over all vertices")
    if (f < 0).any():
        raise ParameterOutOfRange("f must be nonnegative")
    d = g.distance_matrix()[z].astype(float)
    eta = np.maximum(1.0 - d / (2.0 * r), 0.0) ** 2
    pi_vec = schedule.vertex_conductance(t)
    W = schedule.matrix(t)

    pair_eta = np.minimum(eta[:, None], eta[None, :])
    diff2 = (f[:, None] - f[None, :]) ** 2
    energy = float((pair_eta * diff2 * W).sum())

    ball2 = d <= 2 * r + 1e-12
    inner = d <= r + 1e-12
    zero_set = inner & (f == 0.0)
    ratio = pi_vec[zero_set].sum() / pi_vec[ball2].sum()
    rhs = ratio * float((eta * f * f * pi_vec).sum())
    lhs_core = (r * r) * energy

    fitted = None
    if c_p_prime is None:
        fitted = rhs / lhs_core if lhs_core > 0 else 0.0
        c_p_prime = fitted if fitted else 1.0
    lhs = c_p_prime * lhs_core
    return {
        "lhs": lhs,
        "rhs": rhs,
        "passed": bool(lhs >= rhs * (1.0 - 1e-12) - 1e-300),
        "c_p_prime": float(c_p_prime),
        "fitted": None if fitted is None else float(fitted),
        "zero_set_mass": float(pi_vec[zero_set].sum()),
    }


@dataclass
class ConstantsReport:
    """Laziness, ellipticity, Poincaré, and mass-growth constants on a grid."""

    C_P: float
    C_P_prime: float
    alpha_l: float
    alpha_e: float
    alpha_bar: float
    C0: float
    witnesses: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "C_P": self.C_P, "C_P_prime": self.C_P_prime,
            "alpha_l": self.alpha_l, "alpha_e": self.alpha_e,
            "alpha_bar": self.alpha_bar, "C0": self.C0,
            "witnesses": self.witnesses,
        }


def extract_constants(schedule, times=None, ball_catalog=None):
    """Exact minima/maxima over the time grid, plus fitted Poincaré constants.

    alpha_l = min K_t(x, x), alpha_e = min over graph edges of K_t(x, y),
    C0 = max pi_t(x) / pi_0(x); each with its attaining witness.  C_P is the
    largest Poincaré constant over the ball catalog (default: radii 1 and 2
    around up to eight centers), C'_P the largest fitted weighted constant
    for half-ball indicator probes on the same catalog.
    """
    g = schedule.graph
    if times is None:
        times = default_time_grid(schedule)
    times = list(times)
    if not times:
        raise ParameterOutOfRange("time grid must be nonempty")
    if ball_catalog is None:
        centers = _default_centers(g, cap=8, clearance=4 if g.boundary else 0)
        rmax = max(1, g.diameter // 2)
        ball_catalog = [(x, r) for x in centers for r in (1, 2) if r <= rmax]

    pi0 = schedule.vertex_conductance(times[0])
    al, ae, c0 = np.inf, np.inf, 1.0
    wit = {}
    edges = [(x, y) for (x, y) in g.edges if x != y]
    for t in times:
        K = one_step_kernel(schedule, t).matrix
        pi_t = schedule.vertex_conductance(t)
        x = int(np.argmin(np.diag(K)))
        if K[x, x] < al:
            al = float(K[x, x])
            wit["alpha_l"] = {"t": float(t), "x": x}
        for (x, y) in edges:
            v = min(K[x, y], K[y, x])
            if v < ae:
                ae = float(v)
                wit["alpha_e"] = {"t": float(t), "edge": [x, y]}
        ratios = pi_t / pi0
        x = int(np.argmax(ratios))
        if ratios[x] > c0:
            c0 = float(ratios[x])
            wit["C0"] = {"t": float(t), "x": x}
    if not edges:
        ae = 1.0

    def one_ball(args):
        x0, r = args
        vals = []
        for t in times:
            vals.append(poincare_constant(schedule, t, g.ball(x0, r)))
        return max(vals) if vals else 0.0

    cp = 0.0
    if ball_catalog:
        per_ball = parallel_map(one_ball, ball_catalog)
        i = int(np.argmax(per_ball))
        cp = float(per_ball[i])
        wit["C_P"] = {"x": ball_catalog[i][0], "r": ball_catalog[i][1]}

    cpp = 0.0
    for (x0, r) in ball_catalog:
        inner = _graphs.ball(g, x0, r).members
        half = np.zeros(g.vertex_count)
        half[list(inner[:max(1, len(inner) // 2)])] = 1.0
        for t in times:
            res = weighted_poincare_check(schedule, t, g.ball(x0, 2 * r), half)
            if res["fitted"] and res["fitted"] > cpp:
                cpp = res["fitted"]
                wit["C_P_prime"] = {"t": float(t), "x": x0, "r": r}

    return ConstantsReport(C_P=cp, C_P_prime=cpp, alpha_l=al, alpha_e=ae,
                           alpha_bar=min(al, ae), C0=c0, witnesses=wit)
