"""Isoperimetric profiles by enumeration and the Nash-profile sandwich.

Two profiles of a kernel Q reversible for pi are computed over subsets
Omega with pi(Omega) <= u:

    Lambda(u) = inf lambda_Q(Omega)          (spectral / L2 profile)
    Phi(u)    = inf flux(Omega) / pi(Omega)  (conductance / L1 profile)

Exact mode enumerates connected subsets (connectivity loses nothing: the
Dirichlet eigenvalue of a disconnected set is attained on one component, and
components have smaller mass).  Larger graphs fall back to candidate families
that certify upper bounds only, and every result is flagged accordingly.
"""

import sys
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ExactModeTooLarge, ParameterOutOfRange
from ._util import fmt_real, parallel_map

EXACT_VERTEX_LIMIT = 18

NashBounds = namedtuple("NashBounds", "lower upper refined")


def _as_matrix(Q):
    return np.asarray(getattr(Q, "matrix", Q), dtype=float)


def _form_matrix(Q, pi):
    """Symmetrized matrix S of the form E(f, f) = <(I-Q)f, f>_pi."""
    Q = _as_matrix(Q)
    pi = np.asarray(pi, dtype=float)
    B = pi[:, None] * (np.eye(Q.shape[0]) - Q)
    return 0.5 * (B + B.T)


def dirichlet_eigenvalue(Q, pi, omega, return_vector=False):
    """Smallest eigenvalue of I - Q on Omega with Dirichlet (kill) boundary.

    Equals min E_{Q,pi}(f, f) over f supported in Omega with ||f||_{L2(pi)}=1.
    """
    omega = sorted(set(int(v) for v in omega))
    if not omega:
        raise ParameterOutOfRange("Omega must be nonempty")
    pi = np.asarray(pi, dtype=float)
    S = _form_matrix(Q, pi)[np.ix_(omega, omega)]
    D = np.diag(pi[omega])
    if len(omega) == 1:
        lam = float(S[0, 0] / D[0, 0])
        return (lam, np.ones(1)) if return_vector else lam
    if return_vector:
        vals, vecs = scipy.linalg.eigh(S, D)
        return float(vals[0]), vecs[:, 0]
    vals = scipy.linalg.eigh(S, D, eigvals_only=True, subset_by_index=(0, 0))
    return float(vals[0])


def _subset_flux(Q, pi, members):
    Q = _as_matrix(Q)
    mask = np.zeros(Q.shape[0], dtype=bool)
    mask[list(members)] = True
    flux = float((pi[mask, None] * Q[mask][:, ~mask]).sum())
    return flux / float(pi[mask].sum())


def _connected_subsets(adj, pi, u, anchor):
    """Connected vertex sets S with min(S) = anchor and pi(S) <= u."""
    if pi[anchor] > u:
        return
    sys.setrecursionlimit(10000)

    def rec(S, mass, ext, forb):
        yield S
        ext = list(ext)
        forb = set(forb)
        while ext:
            w = ext.pop()
            new_mass = mass + pi[w]
            if new_mass <= u:
                grown = [z for z in adj[w]
                         if z > anchor and z not in S and z not in forb
                         and z not in ext]
                yield from rec(S + (w,), new_mass, ext + grown, forb)
            forb.add(w)

    first = [z for z in adj[anchor] if z > anchor]
    yield from rec((anchor,), pi[anchor], first, set())


def _adjacency_lists(Q):
    Q = _as_matrix(Q)
    n = Q.shape[0]
    sym = np.maximum(Q, Q.T)
    return [sorted(np.flatnonzero((sym[x] > 0) &
                                  (np.arange(n) != x)).tolist())
            for x in range(n)]


def _enumerate_min(Q, pi, u, objective):
    """(best value, best subset) of ``objective`` over connected subsets."""
    adj = _adjacency_lists(Q)
    n = len(adj)

    def per_anchor(v0):
        best, best_set = np.inf, None
        for S in _connected_subsets(adj, pi, u, v0):
            val = objective(S)
            if val < best:
                best, best_set = val, S
        return best, best_set

    results = parallel_map(per_anchor, range(n))
    best, best_set = np.inf, None
    for val, S in results:
        if val < best:
            best, best_set = val, S
    return best, best_set


def _heuristic_candidates(Q, pi, u, graph=None):
    """Nested balls and spectral sweep prefixes with mass <= u."""
    Q = _as_matrix(Q)
    n = Q.shape[0]
    out = []
    if graph is not None:
        D = graph.distance_matrix()
        centers = range(n) if n <= 128 else \
            np.linspace(0, n - 1, 128).round().astype(int)
        for x in centers:
            order = np.argsort(D[x], kind="stable")
            mass = np.cumsum(pi[order])
            k = int(np.searchsorted(mass, u + 1e-12, side="right"))
            for j in range(1, k + 1):
                out.append(tuple(order[:j]))
    S = _form_matrix(Q, pi)
    vals, vecs = scipy.linalg.eigh(S, np.diag(pi))
    fiedler = vecs[:, 1] if n > 1 else vecs[:, 0]
    for order in (np.argsort(fiedler, kind="stable"),
                  np.argsort(-fiedler, kind="stable")):
        mass = np.cumsum(pi[order])
        k = int(np.searchsorted(mass, u + 1e-12, side="right"))
        for j in range(1, k + 1):
            out.append(tuple(order[:j]))
    return list(dict.fromkeys(tuple(sorted(s)) for s in out))


def _profile(Q, pi, u, objective, mode, graph):
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    if u < pi.min():
        return None, True, None
    if u >= pi.sum():
        return 0.0, True, tuple(range(n))
    if mode == "exact" and n > EXACT_VERTEX_LIMIT:
        raise ExactModeTooLarge(
            "%d vertices exceed the %d-vertex exact enumeration limit"
            % (n, EXACT_VERTEX_LIMIT))
    if mode not in ("auto", "exact", "heuristic"):
        raise ParameterOutOfRange("mode must be auto, exact, or heuristic")
    exact = mode != "heuristic" and n <= EXACT_VERTEX_LIMIT
    if exact:
        val, best = _enumerate_min(Q, pi, u, objective)
    else:
        val, best = np.inf, None
        for S in _heuristic_candidates(Q, pi, u, graph):
            v = objective(S)
            if v < val:
                val, best = v, S
    if best is None:
        return None, exact, None
    return float(val), exact, tuple(sorted(best))


def spectral_profile(Q, pi, u, mode="auto", graph=None, detail=False):
    """Lambda(u): smallest Dirichlet eigenvalue over subsets of mass <= u.

    Returns None when no subset is feasible (u below the lightest vertex).
    With ``detail=True`` returns a dict carrying the minimizing subset and
    whether the value is exact or only a candidate-family upper bound.
    """
    val, exact, best = _profile(
        Q, pi, u, lambda S: dirichlet_eigenvalue(Q, pi, S), mode, graph)
    if detail:
        return {"value": val, "exact": exact, "argmin": best}
    return val


def conductance_profile(Q, pi, u, mode="auto", graph=None, detail=False):
    """Phi(u): smallest normalized boundary flux over subsets of mass <= u."""
    pi = np.asarray(pi, dtype=float)
    val, exact, best = _profile(
        Q, pi, u, lambda S: _subset_flux(Q, pi, S), mode, graph)
    if detail:
        return {"value": val, "exact": exact, "argmin": best}
    return val


def brute_spectral_profile(Q, pi, u):
    """Lambda(u) by full subset enumeration; cross-check for <= 10 vertices."""
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    if n > 10:
        raise ExactModeTooLarge("brute force limited to 10 vertices")
    if u < pi.min():
        return None
    if u >= pi.sum():
        return 0.0
    best = np.inf
    for bits in range(1, 1 << n):
        S = [i for i in range(n) if bits >> i & 1]
        if pi[S].sum() <= u:
            best = min(best, dirichlet_eigenvalue(Q, pi, S))
    return float(best)


def nash_profile_bounds(Q, pi, s, n_samples=10000, seed=0, mode="auto",
                        graph=None):
    """The sandwich 1/Lambda(s) <= N_{Q,pi}(s) <= 2/Lambda(4s), plus sampling.

    The refined value is the best Rayleigh quotient ||f||_2^2 / E(f, f) over
    ``n_samples`` random functions satisfying ||f||_1^2 <= s ||f||_2^2,
    seeded with the Dirichlet ground states of the minimizing subsets; it
    must land inside [lower, upper].
    """
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    lam_s = spectral_profile(Q, pi, s, mode=mode, graph=graph, detail=True)
    lam_4s = spectral_profile(Q, pi, 4 * s, mode=mode, graph=graph,
                              detail=True)

    def inv(v):
        if v is None:
            return 0.0
        if v == 0.0:
            return np.inf
        return 1.0 / v

    lower = inv(lam_s["value"])
    upper = 2.0 * inv(lam_4s["value"])

    S_form = _form_matrix(Q, pi)
    rng = np.random.default_rng(seed)

    cands = []
    for d in (lam_s, lam_4s):
        if d["argmin"]:
            idx = list(d["argmin"])
            if pi[idx].sum() <= s:
                _, vec = dirichlet_eigenvalue(Q, pi, idx, return_vector=True)
                f = np.zeros(n)
                f[idx] = vec
                cands.append(f)
    made = len(cands)
    while made < n_samples:
        block = min(2048, n_samples - made)
        F = rng.standard_normal((block, n))
        # thin supports keep ||f||_1^2 <= pi(supp) ||f||_2^2 <= s ||f||_2^2
        keep = rng.random((block, n)) < min(1.0, max(0.2, s / pi.sum()))
        F = np.where(keep, F, 0.0)
        cands.extend(F)
        made += block
    best = 0.0
    for f in cands:
        l1 = float((np.abs(f) * pi).sum())
        l2 = float((f * f * pi).sum())
        if l2 <= 0 or l1 * l1 > s * l2 * (1 + 1e-12):
            continue
        e = float(f @ S_form @ f)
        if e > 0:
            best = max(best, l2 / e)
    return NashBounds(lower, upper, best)


@dataclass
class ProfileCurve:
    """Sampled profile curve with monotone-envelope bookkeeping."""

    args: tuple
    values: tuple
    kind: str
    exact_flags: tuple
    meta: dict = field(default_factory=dict)

    KINDS = ("Lambda", "Phi", "NashLower", "NashUpper", "NashTarget")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterOutOfRange("unknown curve kind %r" % (self.kind,))

    def monotone_ok(self):
        vals = [v for v in self.values if v is not None and np.isfinite(v)]
        pairs = zip(vals, vals[1:])
        if self.kind in ("Lambda", "Phi"):
            return all(b <= a + 1e-12 for a, b in pairs)
        return all(b >= a - 1e-12 for a, b in pairs)

    def __call__(self, x):
        xs = [a for a, v in zip(self.args, self.values) if v is not None]
        vs = [v for v in self.values if v is not None]
        return float(np.interp(x, xs, vs))

    def to_csv(self, path):
        lines = ["arg,value,kind,exact_flag"]
        for a, v, e in zip(self.args, self.values, self.exact_flags):
            sv = "" if v is None else fmt_real(v)
            lines.append("%s,%s,%s,%d" % (fmt_real(a), sv, self.kind, int(e)))
        from ._util import atomic_write_text
        atomic_write_text(path, "\n".join(lines) + "\n")


def profile_curve(Q, pi, us, kind, mode="auto", graph=None):
    """Lambda or Phi sampled on a grid of mass levels ``us``."""
    fn = {"Lambda": spectral_profile, "Phi": conductance_profile}[kind]
    args, vals, flags = [], [], []
    for u in us:
        d = fn(Q, pi, u, mode=mode, graph=graph, detail=True)
        args.append(float(u))
        vals.append(d["value"])
        flags.append(d["exact"])
    return ProfileCurve(tuple(args), tuple(vals), kind, tuple(flags))


def nash_from_volume(v_profile, C, alpha_l, s_grid=None, s0=None, c_n=None):
    """The Nash target N(s) = C (v^{-1}(C s))^2 / alpha_l as a ProfileCurve.

    v^{-1}(y) = inf{r >= 1 : v(r) >= y}; beyond the saturation level of v the
    infimum is empty and N jumps to +inf (the finite-graph floor).  The
    doubling-regularity condition N(c_n * s) >= 2 N(s) for s >= s0 is checked
    on the grid with c_n = C_v by default; failure is recorded in
    ``meta["regularity"]``, not raised.
    """
    if C <= 0 or alpha_l <= 0:
        raise ParameterOutOfRange("C and alpha_l must be positive")
    radii = np.asarray(v_profile.radii, dtype=float)
    vals = np.asarray(v_profile.values, dtype=float)
    v_max = vals[-1]

    def v_inv(y):
        if y > v_max:
            return np.inf
        # v is piecewise linear and nondecreasing; invert on the first
        # segment whose right endpoint reaches y
        for (r0, v0), (r1, v1) in zip(zip(radii, vals), zip(radii[1:],
                                                            vals[1:])):
            if v1 >= y:
                if v1 == v0:
                    return max(r0, 1.0)
                return max(r0 + (y - v0) / (v1 - v0) * (r1 - r0), 1.0)
        return np.inf

    def N(s):
        r = v_inv(C * s)
        return np.inf if np.isinf(r) else C * r * r / alpha_l

    if s_grid is None:
        hi = v_max / C
        lo = min(1.0 / C, hi / 4)
        s_grid = np.geomspace(max(lo, 1e-6), max(hi, 2e-6), 33)
    values = tuple(N(s) for s in s_grid)

    c_n = v_profile.C_v if c_n is None else c_n
    if s0 is None:
        s0 = s_grid[0]
    ratios = []
    for s in s_grid:
        if s < s0:
            continue
        a, b = N(s), N(c_n * s)
        if np.isfinite(a) and a > 0 and np.isfinite(b):
            ratios.append(b / a)
    reg_ok = bool(ratios and min(ratios) >= 2.0 - 1e-12)
    curve = ProfileCurve(tuple(float(s) for s in s_grid), values,
                         "NashTarget", tuple(True for _ in s_grid),
                         meta={"C": float(C), "alpha_l": float(alpha_l),
                               "c_n": float(c_n),
                               "regularity": {
                                   "passed": reg_ok,
                                   "min_ratio": float(min(ratios)) if ratios
                                   else None,
                                   "s0": float(s0)}})
    curve.v_inverse = v_inv
    curve.evaluate = N
    return curve
