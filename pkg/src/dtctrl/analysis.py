"""Span, kernel and annihilator of the first variations, and controllability verdicts."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, LambdaNotInAnnihilator
from .system import DiscreteSystem, as_controls
from .variation import HessianForm, VariationData, variations

RANK_TOL = 1e-8
EIG_TOL = 1e-9
GAP_FACTOR = 1e3


@dataclass
class SpanKernel:
    L_basis: np.ndarray  # (n, rank)
    K_basis: np.ndarray  # (Nm, dim K)
    Lperp_basis: np.ndarray  # (n, k)
    rank: int
    singular_values: np.ndarray
    tol_used: float  # absolute singular-value threshold
    rel_tol: float

    @property
    def n(self):
        return self.L_basis.shape[0]

    @property
    def k(self):
        return self.n - self.rank

    @property
    def dim_K(self):
        return self.K_basis.shape[1]

    @property
    def spectral_gap(self) -> float:
        """Distance of the singular values from the rank threshold, as a factor.

        ``inf`` when no singular value is near the threshold; values below
        ``GAP_FACTOR`` mean the numerical rank is not trustworthy.
        """
        s = self.singular_values
        thr = self.tol_used
        if thr == 0.0:
            return np.inf
        kept = s[: self.rank]
        dropped = s[self.rank:]
        g = np.inf
        if kept.size:
            g = min(g, kept[-1] / thr)
        if dropped.size and dropped[0] > 0:
            g = min(g, thr / dropped[0])
        return float(g)


def _as_matrix(Y):
    Y = np.asarray(Y, float)
    if Y.ndim == 3:
        N, m, n = Y.shape
        return Y.reshape(N * m, n).T
    if Y.ndim == 2:
        return Y
    raise ValueError(f"Y must be (N, m, n) or (n, Nm), got shape {Y.shape}")


def span_kernel(Y, tol: float = RANK_TOL, allow_degenerate=False) -> SpanKernel:
    """SVD of the ``n x Nm`` matrix of first variations.

    ``tol`` is relative to the largest singular value.  With all ``Y``
    vanishing, raises :class:`DegenerateInput` unless ``allow_degenerate``;
    then ``L = {0}``, ``K`` and ``L⊥`` are everything.
    """
    M = _as_matrix(Y)
    n, p = M.shape
    if p == 0:
        raise ValueError("Y is empty")
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        if not allow_degenerate:
            raise DegenerateInput("all first variations vanish (rank 0)")
        return SpanKernel(np.zeros((n, 0)), np.eye(p), np.eye(n), 0, s, 0.0, tol)
    thr = tol * smax
    rank = int(np.sum(s > thr))
    return SpanKernel(U[:, :rank], Vt[rank:].T, U[:, rank:], rank, s, float(thr), tol)


@dataclass
class RestrictedForm:
    lam: np.ndarray
    matrix: np.ndarray  # (d, d) in K_basis coordinates
    eigenvalues: np.ndarray  # ascending

    @property
    def d(self):
        return self.matrix.shape[0]


def annihilation_residual(lam, sk_or_Y) -> float:
    """``max |lam . Y^{ir}|`` relative to ``|lam|``."""
    lam = np.asarray(lam, float)
    if isinstance(sk_or_Y, SpanKernel):
        P = sk_or_Y.L_basis
        return float(np.max(np.abs(lam @ P))) if P.shape[1] else 0.0
    M = _as_matrix(sk_or_Y)
    return float(np.max(np.abs(lam @ M))) if M.size else 0.0


def restrict_form(H: HessianForm, sk: SpanKernel, lam, check=True, tol=1e-7) -> RestrictedForm:
    """Matrix of ``(lam H)|_K`` in the orthonormal kernel basis."""
    lam = np.asarray(lam, float).reshape(-1)
    if check:
        norm = np.linalg.norm(lam)
        if norm > 0:
            resid = np.linalg.norm(lam - sk.Lperp_basis @ (sk.Lperp_basis.T @ lam))
            if resid > tol * norm:
                raise LambdaNotInAnnihilator(
                    f"covector leaves L-perp: residual {resid:.3g} (|lam| = {norm:.3g})")
    G = H.scalar(lam)
    Kb = sk.K_basis
    M = Kb.T @ G @ Kb
    M = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
    return RestrictedForm(lam, M, ev)


def index_pair(rf, eig_tol: float = EIG_TOL):
    """``(n_plus, n_zero, n_minus)`` of a restricted form (or its eigenvalues)."""
    ev = rf.eigenvalues if isinstance(rf, RestrictedForm) else np.asarray(rf, float)
    n_plus = int(np.sum(ev > eig_tol))
    n_minus = int(np.sum(ev < -eig_tol))
    return n_plus, len(ev) - n_plus - n_minus, n_minus


# --------------------------------------------------------------------------
# sampling the unit sphere of L-perp


def sphere_samples(k: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic directions on the unit sphere of R^k, shape ``(M, k)``.

    k=1 gives the two signs, k=2 an even circle grid, k=3 a Fibonacci grid,
    higher k seeded Gaussian directions.
    """
    if k == 0:
        return np.zeros((0, 0))
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    if k == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        r = np.sqrt(1 - z * z)
        phi = np.pi * (3 - np.sqrt(5)) * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = np.random.default_rng(seed).standard_normal((count, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sphere_ascent(fn, c, start_step=0.25, min_step=1e-7, max_evals=4000):
    """Maximise ``fn`` over the unit sphere by coordinate pattern search."""
    c = c / np.linalg.norm(c)
    best = fn(c)
    step = start_step
    evals = 0
    k = len(c)
    while step > min_step and evals < max_evals:
        improved = False
        for j in range(k):
            for sgn in (1.0, -1.0):
                cand = c.copy()
                cand[j] += sgn * step
                cand /= np.linalg.norm(cand)
                val = fn(cand)
                evals += 1
                if val > best:
                    best, c, improved = val, cand, True
        if not improved:
            step *= 0.5
    return c, best


# --------------------------------------------------------------------------
# verdicts


class Status(str, enum.Enum):
    CERTIFIED_CONTROLLABLE = "CertifiedControllable"
    CERTIFIED_NOT_CONTROLLABLE = "CertifiedNotControllable"
    FULL_RANK_CONTROLLABLE = "FullRankControllable"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


@dataclass
class VerdictOptions:
    rank_tol: float = RANK_TOL
    eig_tol: float = EIG_TOL
    circle_samples: int = 72
    sphere_samples: int = 400
    highdim_samples: int = 2000
    seed: int = 0
    refine: bool = True

    def count_for(self, k):
        return {1: 2, 2: self.circle_samples, 3: self.sphere_samples}.get(k, self.highdim_samples)


@dataclass
class Witness:
    lam: np.ndarray  # scaled so that max |lam_i| = 1
    inertia: tuple
    margin: float
    eigenvalues: np.ndarray


@dataclass
class LambdaSample:
    lam: np.ndarray
    eigenvalues: np.ndarray
    inertia: tuple


@dataclass
class ControllabilityVerdict:
    status: Status
    witness: Witness | None
    notes: list
    rank: int
    k: int
    span: SpanKernel | None = None
    hessian: HessianForm | None = None
    data: VariationData | None = None
    samples: list = field(default_factory=list)
    worst_margin: float | None = None
    best_pd_margin: float | None = None


def normalise_covector(lam):
    lam = np.asarray(lam, float)
    s = np.max(np.abs(lam))
    return lam / s if s > 0 else lam


def _witness(H, sk, lam, eig_tol, margin_fn):
    lam = normalise_covector(lam)
    rf = restrict_form(H, sk, lam, check=False)
    return Witness(lam, index_pair(rf, eig_tol), float(margin_fn(rf.eigenvalues)), rf.eigenvalues)


def analyse(data: VariationData, opts: VerdictOptions | None = None) -> ControllabilityVerdict:
    """Verdict from precomputed variation data."""
    opts = opts or VerdictOptions()
    n = data.n
    sk = span_kernel(data.Y, opts.rank_tol, allow_degenerate=True)
    H = data.hessian()
    k = sk.k
    base = dict(rank=sk.rank, k=k, span=sk, hessian=H, data=data)
    notes = [f"rank L = {sk.rank}, codim k = {k}, dim K = {sk.dim_K}"]
    if sk.rank == n:
        notes.append("first variations span the tangent space: the endpoint map is a "
                     "submersion at the control sequence")
        return ControllabilityVerdict(Status.FULL_RANK_CONTROLLABLE, None, notes, **base)
    if sk.spectral_gap < GAP_FACTOR:
        notes.append(f"numerical rank is ambiguous (spectral gap factor {sk.spectral_gap:.3g} "
                     f"< {GAP_FACTOR:g}); certification refused")
        return ControllabilityVerdict(Status.INCONCLUSIVE, None, notes, **base)

    P = sk.Lperp_basis
    d = sk.dim_K
    tol = opts.eig_tol

    def eigs(c):
        return restrict_form(H, sk, P @ c, check=False).eigenvalues

    # the k-th most negative eigenvalue must be strictly negative
    def ctrl_margin(ev):
        return -ev[k - 1] if len(ev) >= k else -np.inf

    def pd_margin(ev):
        return ev[0] if len(ev) else np.inf

    grid = sphere_samples(k, opts.count_for(k), opts.seed)
    samples = []
    for c in grid:
        ev = eigs(c)
        samples.append(LambdaSample(P @ c, ev, index_pair(ev, tol)))
    cm = np.array([ctrl_margin(s.eigenvalues) for s in samples])
    pm = np.array([pd_margin(s.eigenvalues) for s in samples])
    notes.append(f"sampled {len(grid)} covectors on the unit sphere of L-perp")

    if d == 0:
        notes.append("kernel K is trivial: Ind- = 0 < k, the sufficient index condition fails")
        return ControllabilityVerdict(Status.INCONCLUSIVE, None, notes, samples=samples,
                                      **base)

    worst_i = int(np.argmin(cm))
    worst_c, worst = grid[worst_i], float(cm[worst_i])
    if opts.refine and k >= 2 and worst > tol:
        c_ref, neg = _sphere_ascent(lambda c: -ctrl_margin(eigs(c)), worst_c)
        if -neg < worst:
            worst_c, worst = c_ref, -neg
    best_i = int(np.argmax(pm))
    best_c, best = grid[best_i], float(pm[best_i])
    if opts.refine and k >= 2 and best <= tol:
        order = np.argsort(-pm)[: min(5, len(pm))]
        for i0 in order:
            c_ref, val = _sphere_ascent(lambda c: pd_margin(eigs(c)), grid[i0])
            if val > best:
                best_c, best = c_ref, val
    extra = dict(samples=samples, worst_margin=worst, best_pd_margin=best)

    if worst > tol:
        if best > tol:
            raise AssertionError("index condition and positive definiteness both hold "
                                 "for sampled covectors; inconsistent numerics")
        w = _witness(H, sk, P @ worst_c, tol, ctrl_margin)
        notes.append(f"Ind-(lam H)|K >= k at every sampled covector; worst margin {worst:.6g}")
        if k >= 2:
            notes.append("for k >= 2 the quantifier over L-perp is discretised: "
                         "numerically supported, not proved")
        return ControllabilityVerdict(Status.CERTIFIED_CONTROLLABLE, w, notes, **base, **extra)
    if best > tol:
        w = _witness(H, sk, P @ best_c, tol, pd_margin)
        notes.append(f"(lam H)|K is positive definite for the witness covector "
                     f"(smallest eigenvalue {best:.6g})")
        return ControllabilityVerdict(Status.CERTIFIED_NOT_CONTROLLABLE, w, notes, **base,
                                      **extra)
    notes.append("neither the index condition nor a positive-definite witness was "
                 "found among samples; no claim about non-existence is made")
    w = _witness(H, sk, P @ worst_c, tol, ctrl_margin)
    return ControllabilityVerdict(Status.INCONCLUSIVE, w, notes, **base, **extra)


def verdict(sys: DiscreteSystem, x0, ubar, opts: VerdictOptions | None = None
            ) -> ControllabilityVerdict:
    """Strong local controllability verdict at ``(x0, ubar)``."""
    ubar = as_controls(ubar, sys.m)
    sys.check_interior(ubar)
    return analyse(variations(sys, x0, ubar), opts)
