"""Numeric hot loops: radial sweep power flow and SPD triangular solves.

Two interchangeable backends:

* ``numba`` - ``@njit``-compiled sequential kernels (default when numba
  imports cleanly),
* ``numpy`` - vectorized matrix forms backed by numpy/scipy.

Selection: environment variable ``ADAPTIVE_DSSE_NUMBA`` = ``auto`` (default),
``0``/``off``/``numpy`` to force the fallback, ``1``/``require`` to fail hard
if numba is unavailable.  Both paths implement the same iteration map, so
results agree to rounding; ``benchmarks/bench_kernels.py`` compares speed.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.linalg

__all__ = [
    "active_backend",
    "sweep_power_flow",
    "solve_spd",
]


def _resolve_backend() -> str:
    raw = os.environ.get("ADAPTIVE_DSSE_NUMBA", "auto").strip().lower()
    if raw in ("0", "off", "no", "false", "numpy"):
        return "numpy"
    if raw in ("1", "on", "yes", "true", "require", "numba"):
        import numba  # noqa: F401  (hard requirement requested)

        return "numba"
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


_BACKEND = _resolve_backend()


def active_backend() -> str:
    """Backend chosen at import time ("numba" or "numpy")."""
    return _BACKEND


# Compile the njit kernels whenever numba is importable, independent of the
# default backend, so tests/benchmarks can force either path per call.
try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# Backward/forward sweep for radial networks.
#
# Branches must be in topological order (parent closer to the slack than the
# child, slack never appears as a child).  Constant-power loads; `s_load` is
# per-bus complex consumption (negative = injection).


def _sweep_loop_py(parent, child, zbr, s_load, v_slack, tol, max_iter, v0):
    nb = zbr.shape[0]
    n = s_load.shape[0]
    v = v0.copy()
    ibr = np.zeros(nb, np.complex128)
    acc = np.zeros(n, np.complex128)
    for it in range(max_iter):
        for k in range(n):
            acc[k] = 0.0 + 0.0j
        for b in range(nb - 1, -1, -1):
            c = child[b]
            cur = np.conj(s_load[c] / v[c]) + acc[c]
            ibr[b] = cur
            acc[parent[b]] += cur
        max_delta = 0.0
        for b in range(nb):
            nv = v[parent[b]] - zbr[b] * ibr[b]
            d = abs(nv - v[child[b]])
            if d > max_delta:
                max_delta = d
            v[child[b]] = nv
        if max_delta < tol:
            return v, ibr, it + 1, True
    return v, ibr, max_iter, False


if _HAVE_NUMBA:
    _sweep_loop_njit = njit(cache=True)(_sweep_loop_py)
else:
    _sweep_loop_njit = None


def _sweep_matrix(subtree, pathz, s_load, v_slack, tol, max_iter, v0):
    # subtree[b, k] = 1 if bus k hangs at/below branch b's child;
    # pathz[k, b] = z_b if branch b lies on the slack->k path.
    v = v0.copy()
    ibr = np.zeros(pathz.shape[1], np.complex128)
    for it in range(max_iter):
        iload = np.conj(s_load / v)
        ibr = subtree @ iload
        vn = v_slack - pathz @ ibr
        delta = float(np.max(np.abs(vn - v))) if v.size else 0.0
        v = vn
        if delta < tol:
            return v, ibr, it + 1, True
    return v, ibr, max_iter, False


def sweep_power_flow(
    parent,
    child,
    zbr,
    s_load,
    v_slack,
    tol,
    max_iter,
    v0,
    *,
    subtree=None,
    pathz=None,
    backend=None,
):
    """One converged sweep solve.  Returns (v, branch_currents, iters, ok).

    The matrix-form operands (`subtree`, `pathz`) are only touched on the
    numpy path; callers that may hit it should pass them precomputed.
    """
    use = backend or _BACKEND
    if use == "numba":
        if _sweep_loop_njit is None:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _sweep_loop_njit(parent, child, zbr, s_load, v_slack, tol, max_iter, v0)
    if subtree is None or pathz is None:
        raise ValueError("numpy backend needs precomputed subtree/pathz matrices")
    return _sweep_matrix(subtree, pathz, s_load, v_slack, tol, max_iter, v0)


# ---------------------------------------------------------------------------
# SPD solve via a precomputed lower Cholesky factor (gain matrix reuse).


def _chol_solve_py(L, b):
    n = L.shape[0]
    y = np.empty(n, np.float64)
    x = np.empty(n, np.float64)
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * y[j]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, n):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]
    return x


if _HAVE_NUMBA:
    _chol_solve_njit = njit(cache=True)(_chol_solve_py)
else:
    _chol_solve_njit = None


def solve_spd(L, b, *, backend=None):
    """Solve (L L^T) x = b for one right-hand side."""
    use = backend or _BACKEND
    if use == "numba":
        if _chol_solve_njit is None:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _chol_solve_njit(L, b)
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)
