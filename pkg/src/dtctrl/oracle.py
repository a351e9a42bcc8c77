"""Independent checks: finite differences of the endpoint map and Monte-Carlo probing.

Nothing here feeds back into the analytic verdicts; the tools only confirm
or contradict them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DtctrlError, KernelViolation
from .system import DiscreteSystem, as_controls

FD_STEP = 1e-5
FD_HESS_STEP = 1e-3
FD_KERNEL_TOL = 1e-7
LEVEL_SET_TOL = 1e-6

INTERIOR_LIKELY = "InteriorLikely"
BOUNDARY_LIKELY = "BoundaryLikely"
AMBIGUOUS = "Ambiguous"


@dataclass
class EndpointMap:
    """``F(w) = f_{u_N} ... f_{u_1}(x0)`` on flattened control vectors."""

    sys: DiscreteSystem
    x0: np.ndarray
    N: int

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, float)

    def __call__(self, w) -> np.ndarray:
        return self.sys.rollout(self.x0, as_controls(w, self.sys.m)).final

    def batch(self, W, backend=None) -> np.ndarray:
        return kernels.batch_endpoint(self.sys, self.x0, W, self.N, backend)


def _flat(ubar, m):
    return as_controls(ubar, m).reshape(-1).astype(float)


def fd_jacobian(F: EndpointMap, ubar, h: float = FD_STEP) -> np.ndarray:
    """Central differences with one Richardson step; shape ``(n, N*m)``."""
    w = _flat(ubar, F.sys.m)
    cols = []
    for p in range(len(w)):
        e = np.zeros_like(w)
        e[p] = 1.0

        def central(s):
            return (F(w + s * e) - F(w - s * e)) / (2 * s)

        cols.append((4 * central(h / 2) - central(h)) / 3)
    return np.column_stack(cols) if cols else np.zeros((F.sys.n, 0))


def fd_hessian_on_kernel(F: EndpointMap, ubar, a, h: float = FD_HESS_STEP,
                         tol: float = 1e-9) -> np.ndarray:
    """Second derivative of ``eps -> F(ubar + eps a)`` at 0.

    Raises :class:`KernelViolation` when the first-order change along ``a``
    dominates, which means ``a`` is not a kernel direction of ``dF``.
    """
    w = _flat(ubar, F.sys.m)
    a = np.asarray(a, float).reshape(-1)
    if not np.any(a):
        return np.zeros(F.sys.n)
    f0 = F(w)

    def second(s):
        return (F(w + s * a) - 2 * f0 + F(w - s * a)) / s**2

    first = np.linalg.norm(F(w + h * a) - F(w - h * a)) / 2
    d2 = (4 * second(h / 2) - second(h)) / 3
    quad = 0.5 * h**2 * np.linalg.norm(d2)
    scale = max(1.0, float(np.linalg.norm(a)))
    if first > max(quad, tol * h * scale):
        raise KernelViolation(
            f"direction is not in ker dF: first-order change {first:.3g} "
            f"vs second-order {quad:.3g} at step {h}")
    return d2


def fd_kernel(J, tol: float = FD_KERNEL_TOL) -> np.ndarray:
    """Orthonormal null-space basis of a finite-difference Jacobian.

    The relative cut sits well above the differencing noise (about 1e-10
    of the largest singular value) and below genuine small singular values.
    """
    _, s, Vt = np.linalg.svd(J)
    if s.size == 0 or s[0] == 0:
        return np.eye(J.shape[1])
    rank = int(np.sum(s > tol * s[0]))
    return Vt[rank:].T


# --------------------------------------------------------------------------
# reachability probe


@dataclass
class ReachProbe:
    radius: float = 0.05
    samples: int = 20000
    seed: int = 0
    n_random_directions: int = 50
    coverage_floor: float | None = None  # default 1e-4 * radius^2
    extra_directions: np.ndarray | None = None
    level_set: tuple | None = None  # (lam_tilde, M): test lam.d + 0.5 d^T M d >= 0
    backend: str | None = None

    @property
    def floor(self) -> float:
        return 1e-4 * self.radius**2 if self.coverage_floor is None else self.coverage_floor

    def directions(self, n: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1])
        D = [np.eye(n), -np.eye(n)]
        if self.n_random_directions:
            R = rng.standard_normal((self.n_random_directions, n))
            D.append(R / np.linalg.norm(R, axis=1, keepdims=True))
        if self.extra_directions is not None:
            E = np.atleast_2d(np.asarray(self.extra_directions, float))
            D.append(E / np.linalg.norm(E, axis=1, keepdims=True))
        return np.vstack(D)


@dataclass
class ProbeReport:
    verdict: str
    min_directional_coverage: float
    coverage: np.ndarray  # per direction, max d.(F(v) - F(u))
    opposite: np.ndarray  # per direction, max -d.(F(v) - F(u))
    directions: np.ndarray
    floor: float
    samples_used: int
    samples_dropped: int
    level_set_min: float | None = None
    notes: list = field(default_factory=list)


def _sample_box(w, radius, S, rng, u_box, m):
    lo = w - radius
    hi = w + radius
    if u_box is not None:
        blo = np.tile([b[0] for b in u_box], len(w) // m)
        bhi = np.tile([b[1] for b in u_box], len(w) // m)
        lo = np.maximum(lo, blo)
        hi = np.minimum(hi, bhi)
    return lo + (hi - lo) * rng.random((S, len(w)))


def probe_interior(F: EndpointMap, ubar, probe: ReachProbe | None = None) -> ProbeReport:
    """Estimate whether ``F(ubar)`` is interior to the local reachable set.

    Coverage along ``d`` is the largest displacement ``d.(F(v) - F(ubar))``
    over uniform samples ``v`` in the box ``ubar +- radius``.
    """
    probe = probe or ReachProbe()
    sys = F.sys
    w = _flat(ubar, sys.m)
    rng = np.random.default_rng(probe.seed)
    V = _sample_box(w, probe.radius, probe.samples, rng, sys.u_box, sys.m)
    base = F(w)
    ends = F.batch(V, probe.backend)
    ok = np.all(np.isfinite(ends), axis=1)
    disp = ends[ok] - base
    D = probe.directions(sys.n)
    hi, lo = kernels.directional_extrema(disp, D, kernels.resolve_backend(probe.backend, sys))
    opp = -lo
    floor = probe.floor
    notes = []
    level_min = None
    verdict = None
    if probe.level_set is not None:
        lam, M = probe.level_set
        level_min = kernels.level_set_min(disp, lam, M,
                                          kernels.resolve_backend(probe.backend, sys))
        if level_min >= -LEVEL_SET_TOL:
            verdict = BOUNDARY_LIKELY
            notes.append("all samples lie on one side of the supplied level set")
        else:
            notes.append(f"level set crossed (min {level_min:.3g})")
    if verdict is None:
        if np.all(hi >= floor):
            verdict = INTERIOR_LIKELY
        elif np.any((hi < floor) & (opp >= floor)):
            verdict = BOUNDARY_LIKELY
        else:
            verdict = AMBIGUOUS
    return ProbeReport(verdict, float(np.min(hi)), hi, opp, D, floor, int(ok.sum()),
                       int((~ok).sum()), level_min, notes)


def witness_level_set(sys: DiscreteSystem, x0, ubar, verdict, opts=None):
    """``(lam_t, M)`` for the level-set test of a positive-definite witness.

    ``lam_t`` is the witness transported to ``x_N`` and ``M = Qtilde + I``
    where ``Qtilde`` is the threshold form of the linear cost ``lam_t . x``;
    with this curvature the cost has a strict local minimum at ``ubar``, so
    reachable points stay on one side of the level set.  Returns ``None``
    when the verdict carries no such witness.
    """
    from . import optimal
    from .analysis import Status

    if verdict.status != Status.CERTIFIED_NOT_CONTROLLABLE or verdict.witness is None:
        return None
    lam_t = optimal.transport_covector(verdict.data, verdict.witness.lam)
    lin = optimal.MeyerProblem(sys, np.asarray(x0, float), len(as_controls(ubar, sys.m)),
                               lambda x: sum(float(lam_t[i]) * x[i] for i in range(sys.n)))
    try:
        q = optimal.qform_construct(lin, ubar, opts)
    except DtctrlError:
        return None
    return lam_t, q.Qtilde + np.eye(sys.n)


# --------------------------------------------------------------------------
# gradient-descent oracle


@dataclass
class MinimizeResult:
    u: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    value: float


def minimize_psi(prob, u_init, gtol: float = 1e-10, max_iter: int = 10_000) -> MinimizeResult:
    """Minimise ``psi = phi o F`` by gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein length of the previous iteration;
    backtracking keeps every accepted step a sufficient decrease.
    """
    from .optimal import psi_gradient

    sys = prob.sys
    u = as_controls(u_init, sys.m).reshape(-1).astype(float)
    val, g = psi_gradient(prob, u)
    step = 1.0
    prev = None
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn < gtol:
            return MinimizeResult(u.reshape(-1, sys.m), True, it, gn, float(val))
        if prev is not None:
            s, y = u - prev[0], g - prev[1]
            sy = float(s @ y)
            if sy > 0:
                step = min(float(s @ s) / sy, 1e6)
        t = step
        while True:
            trial = u - t * g
            try:
                tv, tg = psi_gradient(prob, trial)
                good = np.isfinite(tv) and tv <= val - 1e-4 * t * gn**2
            except (DtctrlError, ArithmeticError, ValueError, np.linalg.LinAlgError):
                good = False
            if good:
                break
            t *= 0.5
            if t < 1e-20:
                return MinimizeResult(u.reshape(-1, sys.m), False, it, gn, float(val))
        prev = (u, g)
        u, val, g = trial, tv, tg
    gn = float(np.linalg.norm(g))
    return MinimizeResult(u.reshape(-1, sys.m), gn < gtol, max_iter, gn, float(val))
