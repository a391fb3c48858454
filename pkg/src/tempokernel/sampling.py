"""Path sampling for discrete- and continuous-time walks on a schedule.

Randomness is counter-based: path ``i`` of a run with seed ``s`` draws from a
Philox stream keyed by ``(s, i)``, so results do not depend on execution order
and a fixed ``(seed, n_paths)`` pair is bitwise reproducible.
"""

import numpy as np

from .errors import BoundaryTouched, ParameterOutOfRange
from ._util import parallel_map

_CHUNK = 512  # time steps drawn per RNG block in the vectorized sampler


def _path_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=(int(seed) << 32) + int(index)))


def _check_boundary(graph, x, t):
    if x in graph.boundary:
        raise BoundaryTouched(
            "path reached truncation boundary vertex %d at time %s" % (x, t))


def _sample_dtrw_path(schedule, x0, t_end, rng):
    """One discrete-time trajectory x_0, ..., x_{t_end}; returns the array."""
    g = schedule.graph
    xs = np.empty(t_end + 1, dtype=np.int64)
    xs[0] = x0
    x = x0
    line = g.kind in ("path", "segment")
    for n in range(1, t_end + 1):
        if line:
            sub, loops = schedule.tridiag(n)
            left = sub[x - 1] if x > 0 else 0.0
            right = sub[x] if x + 1 < g.vertex_count else 0.0
            stay = loops[x] if len(loops) else 0.0
            tot = left + right + stay
            u = rng.random() * tot
            if u < left:
                x = x - 1
            elif u < left + right:
                x = x + 1
        else:
            row = schedule.matrix(n)[x]
            x = int(rng.choice(g.vertex_count, p=row / row.sum()))
        _check_boundary(g, x, n)
        xs[n] = x
    return xs

def _sample_csrw_path(schedule, x0, t_end, rng):
    """Event times and states of one continuous-time trajectory.

    The walk attempts a move at unit-rate Poisson times; at an attempt at
    time t it moves to y != x with probability pi_t(x, y) / pi_t(x).
    """
    g = schedule.graph
    times = [0.0]
    states = [x0]
    x = x0
    t = rng.exponential(1.0)
    while t <= t_end:
        row = schedule.matrix(t)[x]
        tot = row.sum()
        off = tot - row[x]
        if rng.random() * tot < off:
            probs = row.copy()
            probs[x] = 0.0
            x = int(rng.choice(g.vertex_count, p=probs / off))
            _check_boundary(g, x, t)
            times.append(t)
            states.append(x)
        t += rng.exponential(1.0)
    return np.array(times), np.array(states, dtype=np.int64)


def _vector_line_dtrw(schedule, x0, t_end, n_paths, seed):
    """All paths at once on a path/segment graph, stepping time outermost.

    Per-path Philox streams are kept, but their uniforms are drawn in blocks
    of _CHUNK steps so the inner update is pure array work.
    """
    g = schedule.graph
    size = g.vertex_count
    pos = np.full(n_paths, x0, dtype=np.int64)
    rngs = [_path_rng(seed, i) for i in range(n_paths)]
    boundary = frozenset(g.boundary)
    endpoints_only = boundary <= {0, size - 1}
    bdry_arr = np.array(sorted(boundary), dtype=np.int64)
    chunk = max(1, min(_CHUNK, (1 << 25) // n_paths))
    disp_max = np.zeros(n_paths, dtype=np.int64)
    n = 0
    while n < t_end:
        block = min(chunk, t_end - n)
        u = np.stack([r.random(block) for r in rngs], axis=1)
        for j in range(block):
            n += 1
            sub, loops = schedule.tridiag(n)
            left = np.where(pos > 0, sub[np.maximum(pos - 1, 0)], 0.0)
            right = np.where(pos + 1 < size, sub[np.minimum(pos, size - 2)], 0.0)
            stay = loops[pos]
            draw = u[j] * (left + right + stay)
            pos = pos - (draw < left) + ((draw >= left) & (draw < left + right))
            if endpoints_only:
                hit = (0 in boundary and pos.min() == 0) or (
                    size - 1 in boundary and pos.max() == size - 1)
            else:
                hit = np.isin(pos, bdry_arr).any()
            if hit:
                raise BoundaryTouched(
                    "a path reached the truncation boundary at time %d" % n)
            disp_max = np.maximum(disp_max, np.abs(pos - x0))
    return pos, disp_max


def sample_paths(schedule, mode, x0, t_end, n_paths, seed=0):
    """Terminal-state statistics over ``n_paths`` independent trajectories.

    Returns a dict with the terminal histogram over vertices, the mean and
    max displacement from ``x0``, and the terminal states themselves.
    ``mode`` is "dtrw" or "csrw"; for "dtrw" ``t_end`` must be an integer.
    """
    g = schedule.graph
    if not (0 <= x0 < g.vertex_count):
        raise ParameterOutOfRange("x0 outside vertex range")
    if n_paths < 1:
        raise ParameterOutOfRange("n_paths must be >= 1")
    if mode == "dtrw":
        t_end = int(t_end)
        schedule.check_time(t_end)
        if g.kind in ("path", "segment") and n_paths >= 64:
            terminal, disp_max = _vector_line_dtrw(
                schedule, x0, t_end, n_paths, seed)
        else:
            rows = parallel_map(
                lambda i: _sample_dtrw_path(schedule, x0, t_end,
                                            _path_rng(seed, i)),
                range(n_paths))
            terminal = np.array([r[-1] for r in rows], dtype=np.int64)
            disp_max = np.array([np.abs(r - x0).max() for r in rows],
                                dtype=np.int64)
    elif mode == "csrw":
        schedule.check_time(t_end)

        def one(i):
            _, states = _sample_csrw_path(schedule, x0, float(t_end),
                                          _path_rng(seed, i))
            return states[-1], np.abs(states - x0).max()

        out = parallel_map(one, range(n_paths))
        terminal = np.array([o[0] for o in out], dtype=np.int64)
        disp_max = np.array([o[1] for o in out], dtype=np.int64)
    else:
        raise ParameterOutOfRange("mode must be dtrw or csrw")

    hist = np.bincount(terminal, minlength=g.vertex_count)
    return {
        "histogram": hist,
        "terminal": terminal,
        "mean_displacement": float(np.mean(terminal - x0)),
        "max_displacement": int(disp_max.max()),
        "n_paths": int(n_paths),
    }
