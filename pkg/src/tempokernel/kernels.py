"""Transition kernels of the walk, their composition, and weighted norms.

One-step kernel at time t:

    K_t(x, y) = pi_t(x, y) / pi_t(x),

a row-stochastic matrix reversed by the vertex conductance pi_t.  Over a
discrete window the walk moves through the product

    K_{m,n} = K_{m+1} K_{m+2} ... K_n,          K_{n,n} = I,

while the continuous-time walk (jumps at unit-rate Poisson times, using the
kernel in force at the jump instant) has propagator M(s) = K_{s,t} solving the
backward equation

    dM/ds = -(K_s - I) M,        M(t) = I,

integrated here by classical Runge-Kutta with Richardson step-halving.

The evolving measure mu_{s,t} = pi_s K_{s,t} plays the role of the invariant
measure in all two-sided bounds; it propagates by mu_{s,t} = mu_{s,v} K_{v,t}.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._util import fmt_real
from .errors import (
    DegenerateMeasure,
    OdeNotConverged,
    StochasticityDrift,
    TimeOutOfRange,
    UnsupportedExponentPair,
    WeightOverflow,
)

ODE_TOL = 1e-9
ROW_SUM_GUARD = 1e-8


@dataclass(frozen=True)
class Kernel:
    """A transition matrix between two time slices, with its reference measures."""
    matrix: np.ndarray          # rows: source vertex, columns: target
    s_time: float
    t_time: float
    source_measure: np.ndarray  # measure at s_time
    target_measure: np.ndarray  # measure at t_time

    @property
    def n(self):
        return self.matrix.shape[0]

    def row_sum_defect(self):
        return float(np.abs(self.matrix.sum(axis=1) - 1.0).max())


@dataclass(frozen=True)
class EvolvingMeasure:
    """mu_{s,t} = pi_s K_{s,t}; same total mass as pi_s."""
    values: np.ndarray
    s_time: float
    t_time: float


@dataclass(frozen=True)
class WeightField:
    """Exponential tilt weights w_theta(x) = exp(theta * rho(x))."""
    theta: float
    rho: np.ndarray
    lipschitz: float

    def weights(self):
        return np.exp(self.theta * self.rho)


def weight_field(graph, theta, rho, lipschitz=None):
    """Build a tilt field, verifying |rho(x)-rho(y)| <= L * d(x,y) on edges."""
    rho = np.asarray(rho, dtype=float)
    worst = 0.0
    for x, y in graph.edges:
        if x != y:
            worst = max(worst, abs(rho[x] - rho[y]))
    if lipschitz is None:
        lipschitz = worst if worst > 0 else 1.0
    elif worst > lipschitz + 1e-12:
        raise WeightOverflow(
            "rho violates declared Lipschitz constant: %s > %s"
            % (fmt_real(worst), fmt_real(lipschitz)))
    return WeightField(float(theta), rho, float(lipschitz))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def one_step_kernel(schedule, t):
    """K_t(x, y) = pi_t(x, y) / pi_t(x)."""
    schedule.check_time(t)
    pi_edge = schedule.matrix(t)
    pi_vertex = pi_edge.sum(axis=1)
    if (pi_vertex <= 0).any():
        raise DegenerateMeasure("zero vertex conductance")
    mat = pi_edge / pi_vertex[:, None]
    return Kernel(mat, float(t), float(t), pi_vertex, pi_vertex)


def compose_discrete(schedule, m, n):
    """K_{m,n} = K_{m+1} K_{m+2} ... K_n (identity when m = n)."""
    m, n = int(m), int(n)
    if not (0 <= m <= n <= schedule.horizon + 1e-9):
        raise TimeOutOfRange("need 0 <= m <= n <= horizon")
    size = schedule.graph.vertex_count
    mat = np.eye(size)
    for k in range(m + 1, n + 1):
        mat = mat @ one_step_kernel(schedule, k).matrix
    return Kernel(mat, float(m), float(n),
                  schedule.vertex_conductance(m),
                  schedule.vertex_conductance(n))


def _generator_times(schedule, s, t):
    """Subdivision of [s, t] at declared breakpoints (integers for discrete)."""
    s, t = float(s), float(t)
    pts = {s, t}
    if schedule.time_mode == "discrete":
        pts.update(float(k) for k in range(int(math.floor(s)) + 1,
                                           int(math.ceil(t)) + 1)
                   if s < k < t)
    else:
        pts.update(b for b in schedule.breakpoints if s < b < t)
    return sorted(pts)


def _rk4_piece(schedule, a, b, mat, step):
    """Integrate dM/dsigma = -(K_sigma - I) M from sigma=b down to sigma=a.

    The schedule is smooth on (a, b); classical fourth-order steps.
    """
    span = b - a
    nsteps = max(1, int(math.ceil(span / step - 1e-12)))
    h = span / nsteps

    def rhs(sigma, m):
        k = one_step_kernel(schedule, min(max(sigma, a), b)).matrix
        return (k - np.eye(k.shape[0])) @ m

    sigma = b
    for _ in range(nsteps):
        # integrating backwards: M(sigma - h) = M(sigma) + h * L(sigma) M + ...
        k1 = rhs(sigma, mat)
        k2 = rhs(sigma - h / 2.0, mat + (h / 2.0) * k1)
        k3 = rhs(sigma - h / 2.0, mat + (h / 2.0) * k2)
        k4 = rhs(sigma - h, mat + h * k3)
        mat = mat + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sigma -= h
    return mat


def _piece_propagator(schedule, a, b, ode_step):
    """Propagator of one smooth piece, Richardson-halved to ODE_TOL.

    Identical pieces (same in-force conductances, same span) are cached, so a
    schedule that is eventually static costs one integration per distinct
    one-step kernel rather than one per unit of time.
    """
    piece = _PieceView(schedule, a, b)
    key = None
    cache = getattr(schedule, "_propagator_cache", None)
    if cache is None:
        cache = {}
        try:
            schedule._propagator_cache = cache
        except AttributeError:
            pass
    if schedule.time_mode == "discrete" or _is_constant_piece(schedule, a, b):
        ref = schedule.matrix(a)
        key = (round(b - a, 12), ref.tobytes())
        got = cache.get(key)
        if got is not None:
            return got

    prev = _rk4_piece(piece, a, b, np.eye(schedule.graph.vertex_count), ode_step)
    step = ode_step
    for _ in range(14):
        step /= 2.0
        cur = _rk4_piece(piece, a, b, np.eye(schedule.graph.vertex_count), step)
        if float(np.abs(cur - prev).max()) < ODE_TOL:
            if key is not None:
                if len(cache) > 64:
                    cache.clear()
                cache[key] = cur
            return cur
        prev = cur
    raise OdeNotConverged(
        "step-halving on piece [%s, %s] did not reach %s"
        % (fmt_real(a), fmt_real(b), fmt_real(ODE_TOL)))


def _is_constant_piece(schedule, a, b):
    """True when the conductances do not change inside (a, b)."""
    eps = 1e-9 * max(1.0, abs(b))
    first = schedule.matrix(a)
    return (np.array_equal(first, schedule.matrix((a + b) / 2.0))
            and np.array_equal(first, schedule.matrix(max(a, b - eps))))


def _csrw_matrix(schedule, s, t, ode_step):
    times = _generator_times(schedule, s, t)
    mat = np.eye(schedule.graph.vertex_count)
    for a, b in zip(times[:-1], times[1:]):
        mat = mat @ _piece_propagator(schedule, a, b, ode_step)
    return mat


class _PieceView:
    """Schedule restricted to one smooth piece [a, b).

    Queries at the right endpoint are pulled into the piece so that a
    breakpoint at b never leaks the next piece's values into this one.
    """

    def __init__(self, schedule, a, b):
        self._schedule = schedule
        self._a = a
        self._b = b
        self.graph = schedule.graph
        self.time_mode = schedule.time_mode
        self.horizon = schedule.horizon

    def _clamp(self, t):
        eps = 1e-9 * max(1.0, abs(self._b))
        return min(max(t, self._a), max(self._a, self._b - eps))

    def check_time(self, t):
        pass

    def matrix(self, t):
        return self._schedule.matrix(self._clamp(t))

    def vertex_conductance(self, t):
        return self._schedule.vertex_conductance(self._clamp(t))


def csrw_kernel(schedule, s, t, ode_step=0.05):
    """Continuous-time propagator K_{s,t} by RK4 with Richardson step-halving.

    The span is split at the schedule's breakpoints (integers, for a
    piecewise-constant schedule); each smooth piece is integrated with
    classical fourth-order steps, halved until successive results agree
    within 1e-9 in max norm, and the piece propagators are composed in time
    order.  Row sums of the result may drift from 1 by at most 1e-8, else
    the kernel is rejected; within that guard they are renormalized.
    """
    s, t = float(s), float(t)
    if not (0.0 <= s <= t <= schedule.horizon + 1e-9):
        raise TimeOutOfRange("need 0 <= s <= t <= horizon")
    if ode_step > 0.05:
        ode_step = 0.05
    size = schedule.graph.vertex_count
    if t - s < 1e-14:
        pi = schedule.vertex_conductance(s)
        return Kernel(np.eye(size), s, t, pi, pi)

    mat = _csrw_matrix(schedule, s, t, ode_step)

    rows = mat.sum(axis=1)
    defect = float(np.abs(rows - 1.0).max())
    if defect >= ROW_SUM_GUARD:
        raise StochasticityDrift(
            "row sums drifted by %s (allowed %s)"
            % (fmt_real(defect), fmt_real(ROW_SUM_GUARD)))
    mat = np.clip(mat, 0.0, None)
    mat = mat / mat.sum(axis=1)[:, None]
    return Kernel(mat, s, t,
                  schedule.vertex_conductance(s),
                  schedule.vertex_conductance(t))


def static_csrw_oracle(schedule, s, t):
    """exp((t-s)(K - I)) for static schedules; cross-check for the integrator."""
    from scipy.linalg import expm
    k = one_step_kernel(schedule, s).matrix
    return expm((t - s) * (k - np.eye(k.shape[0])))


def kernel_between(schedule, s, t, mode="discrete", ode_step=0.05):
    if mode == "discrete":
        return compose_discrete(schedule, int(round(s)), int(round(t)))
    if mode == "continuous":
        return csrw_kernel(schedule, s, t, ode_step)
    raise TimeOutOfRange("mode must be discrete or continuous")


# ---------------------------------------------------------------------------
# evolving measures
# ---------------------------------------------------------------------------

def evolving_measure(schedule, s, t, mode="discrete", kernel=None):
    """mu_{s,t} = pi_s K_{s,t}."""
    if kernel is None:
        kernel = kernel_between(schedule, s, t, mode)
    pi_s = schedule.vertex_conductance(s)
    return EvolvingMeasure(pi_s @ kernel.matrix, float(s), float(t))


def c_stability_probe(schedule, reference, times, mode="discrete"):
    """Extremes of mu_{s,t}(y) / reference(y) over a grid of (s, t) pairs.

    Purely descriptive: reports the observed range and where it is attained.
    """
    reference = np.asarray(reference, dtype=float)
    if (reference <= 0).any():
        raise DegenerateMeasure("reference measure must be positive")
    lo, hi = math.inf, -math.inf
    lo_at = hi_at = None
    for s in times:
        for t in times:
            if t < s:
                continue
            mu = evolving_measure(schedule, s, t, mode).values
            ratios = mu / reference
            i, j = int(np.argmin(ratios)), int(np.argmax(ratios))
            if ratios[i] < lo:
                lo, lo_at = float(ratios[i]), (float(s), float(t), i)
            if ratios[j] > hi:
                hi, hi_at = float(ratios[j]), (float(s), float(t), j)
    return {"min_ratio": lo, "max_ratio": hi,
            "min_at": lo_at, "max_at": hi_at}


# ---------------------------------------------------------------------------
# tilted kernels and weighted norms
# ---------------------------------------------------------------------------

def perturbed_kernel(kernel, weight):
    """K^theta(x, y) = exp(theta (rho(y) - rho(x))) K(x, y).

    Rows are no longer stochastic; the |theta| * max|rho| <= 300 guard keeps
    the entries inside double-precision range.
    """
    if abs(weight.theta) * float(np.abs(weight.rho).max()) > 300.0:
        raise WeightOverflow("|theta| * max|rho| exceeds the overflow guard 300")
    w = weight.weights()
    mat = kernel.matrix * np.outer(1.0 / w, w)
    return Kernel(mat, kernel.s_time, kernel.t_time,
                  kernel.source_measure, kernel.target_measure)


def weighted_norm(matrix, p_in, q_out, in_measure, out_measure=None):
    """Operator norm of A: L^p(in_measure) -> L^q(out_measure).

    The operator acts as (A f)(x) = sum_y A(x, y) f(y); the input norm weighs
    by ``in_measure``, the output by ``out_measure``.  Exact formulas:

      1 -> infinity :  max_{x,y} |A(x,y)| / nu_in(y)
      1 -> 2        :  max_y  ( sum_x nu_out(x) A(x,y)^2 )^(1/2) / nu_in(y)
      2 -> infinity :  max_x  ( sum_y A(x,y)^2 / nu_in(y) )^(1/2)
      2 -> 2        :  largest singular value of D_out^(1/2) A D_in^(-1/2)
      1 -> 1        :  max_y  sum_x nu_out(x)|A(x,y)| / nu_in(y)
      inf -> inf    :  max_x  sum_y |A(x,y)|
    """
    a = np.asarray(matrix, dtype=float)
    nu_in = np.asarray(in_measure, dtype=float)
    if (nu_in <= 0).any():
        raise DegenerateMeasure("norm measures must be strictly positive")

    def _exp(p):
        return math.inf if p in ("inf", np.inf) else p

    pair = (_exp(p_in), _exp(q_out))
    if out_measure is None:
        if pair in ((1, 2), (2, 2), (1, 1)):
            raise DegenerateMeasure("this exponent pair needs out_measure")
        nu_out = np.ones(a.shape[0])
    else:
        nu_out = np.asarray(out_measure, dtype=float)
        if (nu_out <= 0).any():
            raise DegenerateMeasure("norm measures must be strictly positive")
    if pair == (1, math.inf):
        return float((np.abs(a) / nu_in[None, :]).max())
    if pair == (1, 2):
        col = np.sqrt(np.einsum("x,xy->y", nu_out, a * a))
        return float((col / nu_in).max())
    if pair == (2, math.inf):
        row = np.sqrt((a * a / nu_in[None, :]).sum(axis=1))
        return float(row.max())
    if pair == (2, 2):
        conj = np.sqrt(nu_out)[:, None] * a / np.sqrt(nu_in)[None, :]
        return float(np.linalg.svd(conj, compute_uv=False)[0])
    if pair == (1, 1):
        col = np.einsum("x,xy->y", nu_out, np.abs(a))
        return float((col / nu_in).max())
    if pair == (math.inf, math.inf):
        return float(np.abs(a).sum(axis=1).max())
    raise UnsupportedExponentPair("unsupported pair %r" % (pair,))


def adjoint_matrix(matrix, in_measure, out_measure):
    """Adjoint of A: L^2(in) -> L^2(out), i.e. A*(y, x) = out(x) A(x, y)/in(y)."""
    a = np.asarray(matrix, dtype=float)
    nu_in = np.asarray(in_measure, dtype=float)
    nu_out = np.asarray(out_measure, dtype=float)
    return (a * nu_out[:, None] / nu_in[None, :]).T


def dual_kernel(kernel_matrix, nu):
    """Q(x, y) = (1/mu(x)) sum_z nu(z) K(z, x) K(z, y), with mu = nu K.

    Q is a Markov kernel reversed by mu, and its Dirichlet form satisfies
    E_{Q,mu}(f, f) = ||f||^2_{L2(mu)} - ||K f||^2_{L2(nu)}.
    """
    k = np.asarray(kernel_matrix, dtype=float)
    nu = np.asarray(nu, dtype=float)
    mu = nu @ k
    if (mu <= 0).any():
        raise DegenerateMeasure("mu = nu K has a zero entry")
    q = (k.T * nu[None, :]) @ k / mu[:, None]
    return q, mu


def dirichlet_form_matrix(q, pi):
    """Symmetric PSD matrix E with f.E.f = E_{Q,pi}(f,f) = <(I-Q)f, f>_pi."""
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    a = pi[:, None] * (np.eye(q.shape[0]) - q)
    return 0.5 * (a + a.T)


def dirichlet_energy(q, pi, f):
    f = np.asarray(f, dtype=float)
    return float(f @ (dirichlet_form_matrix(q, pi) @ f))


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------

def kernel_to_csv(kernel):
    """Header `s,t`, then `x,y,value` rows for nonzero entries, 17 digits."""
    lines = ["%s,%s" % (fmt_real(kernel.s_time), fmt_real(kernel.t_time))]
    mat = kernel.matrix
    for x in range(mat.shape[0]):
        for y in range(mat.shape[1]):
            v = mat[x, y]
            if v != 0.0:
                lines.append("%d,%d,%s" % (x, y, fmt_real(v)))
    return "\n".join(lines) + "\n"


def measure_to_csv(values):
    """`x,value` rows, 17 significant digits."""
    return "\n".join("%d,%s" % (x, fmt_real(v))
                     for x, v in enumerate(values)) + "\n"
