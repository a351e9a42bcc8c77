"""Batch kernels for the Monte-Carlo reachability probe.

Two interchangeable backends evaluate the endpoint map on many control
samples and reduce the displacements to per-direction extrema:

* ``numba``: loops compiled with ``@njit`` from source generated out of the
  system's DSL expressions;
* ``numpy``: the same expressions evaluated on whole sample columns.

The backend is picked by the ``backend`` argument, falling back to the
``DTCTRL_NUMBA`` environment variable (``0`` disables numba).  Systems
given as Python callables always use the numpy path.
"""
from __future__ import annotations

import os

import numpy as np

from .exprdsl import to_python

NUMBA = "numba"
NUMPY = "numpy"

try:  # numba is optional at runtime
    import numba
except ImportError:  # pragma: no cover
    numba = None

_COMPILED: dict = {}


def numba_available() -> bool:
    return numba is not None


def default_backend() -> str:
    flag = os.environ.get("DTCTRL_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or numba is None:
        return NUMPY
    return NUMBA


def resolve_backend(backend: str | None, sys=None) -> str:
    b = backend or default_backend()
    if b not in (NUMBA, NUMPY):
        raise ValueError(f"unknown backend {b!r}")
    if b == NUMBA and (numba is None or sys is None or sys.exprs is None):
        return NUMPY
    return b


# --------------------------------------------------------------------------
# code generation


def _rollout_source(exprs, n: int, m: int) -> str:
    lines = ["def rollout(x0, W, N, out):",
             "    for s in range(W.shape[0]):"]
    lines += [f"        x_{i} = x0[{i}]" for i in range(n)]
    lines.append("        for t in range(N):")
    lines += [f"            u_{r} = W[s, t * {m} + {r}]" for r in range(m)]
    for i, e in enumerate(exprs):
        src = to_python(e)
        for k in range(n):
            src = src.replace(f"x[{k}]", f"x_{k}")
        for r in range(m):
            src = src.replace(f"u[{r}]", f"u_{r}")
        lines.append(f"            y_{i} = {src}")
    lines += [f"            x_{i} = y_{i}" for i in range(n)]
    lines += [f"        out[s, {i}] = x_{i}" for i in range(n)]
    return "\n".join(lines) + "\n"


def _numba_rollout(sys):
    key = id(sys)
    hit = _COMPILED.get(key)
    if hit is not None and hit[0] is sys:
        return hit[1]
    src = _rollout_source(sys.exprs, sys.n, sys.m)
    ns: dict = {}
    exec(compile(src, f"<dtctrl:rollout:{sys.name}>", "exec"), ns)
    fn = numba.njit(cache=False, error_model="numpy")(ns["rollout"])
    _COMPILED[key] = (sys, fn)
    return fn


if numba is not None:
    @numba.njit(cache=False)
    def _extrema_numba(disp, D, hi, lo):
        S = disp.shape[0]
        for j in range(D.shape[0]):
            best_hi = -np.inf
            best_lo = np.inf
            for s in range(S):
                v = 0.0
                for k in range(D.shape[1]):
                    v += D[j, k] * disp[s, k]
                if v > best_hi:
                    best_hi = v
                if v < best_lo:
                    best_lo = v
            hi[j] = best_hi
            lo[j] = best_lo

    @numba.njit(cache=False)
    def _level_min_numba(disp, lam, M):
        best = np.inf
        n = disp.shape[1]
        for s in range(disp.shape[0]):
            v = 0.0
            for k in range(n):
                v += lam[k] * disp[s, k]
            q = 0.0
            for k in range(n):
                acc = 0.0
                for l in range(n):
                    acc += M[k, l] * disp[s, l]
                q += disp[s, k] * acc
            v += 0.5 * q
            if v < best:
                best = v
        return best


# --------------------------------------------------------------------------
# public kernels


def batch_endpoint(sys, x0, W, N: int, backend: str | None = None) -> np.ndarray:
    """Endpoints ``F(w)`` for each row of ``W`` (shape ``(S, N*m)``)."""
    W = np.ascontiguousarray(W, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    out = np.empty((W.shape[0], sys.n))
    if resolve_backend(backend, sys) == NUMBA:
        _numba_rollout(sys)(x0, W, N, out)
        return out
    m = sys.m
    x = [np.full(W.shape[0], v) for v in x0]
    with np.errstate(all="ignore"):
        for t in range(N):
            u = [W[:, t * m + r] for r in range(m)]
            y = sys.f(x, u)
            x = [np.broadcast_to(np.asarray(v, float), (W.shape[0],)) for v in y]
    for i in range(sys.n):
        out[:, i] = x[i]
    return out


def directional_extrema(disp, D, backend: str | None = None, chunk: int = 4096):
    """Per direction ``d``: ``(max_s d.disp_s, min_s d.disp_s)``.

    The reduction is an associative max/min so the chunked numpy path and
    the sequential numba loop return identical values.
    """
    disp = np.ascontiguousarray(disp, dtype=float)
    D = np.ascontiguousarray(D, dtype=float)
    b = backend or default_backend()
    if b == NUMBA and numba is not None:
        hi = np.empty(D.shape[0])
        lo = np.empty(D.shape[0])
        _extrema_numba(disp, D, hi, lo)
        return hi, lo
    hi = np.full(D.shape[0], -np.inf)
    lo = np.full(D.shape[0], np.inf)
    for start in range(0, disp.shape[0], chunk):
        # row-wise dot products in the same accumulation order as the loop
        block = disp[start:start + chunk]
        proj = np.zeros((block.shape[0], D.shape[0]))
        for k in range(D.shape[1]):
            proj += block[:, k:k + 1] * D[:, k]
        hi = np.maximum(hi, proj.max(axis=0))
        lo = np.minimum(lo, proj.min(axis=0))
    return hi, lo


def level_set_min(disp, lam, M, backend: str | None = None) -> float:
    """``min_s lam.disp_s + 0.5 disp_s^T M disp_s``."""
    disp = np.ascontiguousarray(disp, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    M = np.ascontiguousarray(M, dtype=float)
    if disp.shape[0] == 0:
        return np.inf
    b = backend or default_backend()
    if b == NUMBA and numba is not None:
        return float(_level_min_numba(disp, lam, M))
    lin = np.zeros(disp.shape[0])
    for k in range(disp.shape[1]):
        lin += lam[k] * disp[:, k]
    q = np.zeros(disp.shape[0])
    for k in range(disp.shape[1]):
        acc = np.zeros(disp.shape[0])
        for l in range(disp.shape[1]):
            acc += M[k, l] * disp[:, l]
        q += disp[:, k] * acc
    return float(np.min(lin + 0.5 * q))
