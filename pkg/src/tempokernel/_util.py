"""Small shared helpers: thread pool, deterministic serialization, atomic IO."""

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

_THREAD_ENV = "TEMPO_KERNEL_THREADS"
_thread_cap = None


def set_thread_cap(n):
    """Cap module-level parallelism (``None`` restores the default)."""
    global _thread_cap
    _thread_cap = None if n is None else max(1, int(n))


def thread_count():
    if _thread_cap is not None:
        return _thread_cap
    env = os.environ.get(_THREAD_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Map ``fn`` over ``items`` preserving order.

    Results are returned in input order regardless of completion order, so
    reductions over the result are deterministic.  Falls back to a plain loop
    when a single thread is requested.
    """
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def fmt_real(x):
    """Serialize a real with 17 significant digits (round-trip exact)."""
    return "%.17g" % float(x)


def _canonical(obj):
    """Make an object JSON-serializable with deterministic float text."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if hasattr(obj, "item"):  # numpy scalar
        return _canonical(obj.item())
    if hasattr(obj, "tolist"):  # numpy array
        return _canonical(obj.tolist())
    return str(obj)


def dump_json(obj):
    """Deterministic JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=1)


def atomic_write_text(path, text):
    """Write atomically: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    atomic_write_text(path, dump_json(obj) + "\n")
