import numpy as np

from .errors import SingularJacobian

COND_LIMIT = 1e12


def check_conditioning(J, what="df_u(x)"):
    c = np.linalg.cond(J)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularJacobian(f"{what} is singular or ill-conditioned (cond={c:.3g})")
    return c


def solve(J, b, what="df_u(x)"):
    """LU solve ``J v = b`` after a conditioning check; never forms J^-1."""
    check_conditioning(J, what)
    return np.linalg.solve(J, b)


def dual_solve(J, Jd, b, bd, what="df_u(x)"):
    """Solve ``(J + e Jd)(v + e vd) = b + e bd`` to first order in ``e``."""
    check_conditioning(J, what)
    v = np.linalg.solve(J, b)
    if Jd is None and bd is None:
        return v, None
    rhs = np.zeros_like(v) if bd is None else np.array(bd, dtype=float)
    if Jd is not None:
        rhs = rhs - Jd @ v
    return v, np.linalg.solve(J, rhs)


def orth_complement(B, dim):
    """Orthonormal basis of the orthogonal complement of span(B) in R^dim."""
    B = np.asarray(B, dtype=float).reshape(dim, -1)
    if B.shape[1] == 0:
        return np.eye(dim)
    q, _ = np.linalg.qr(B, mode="complete")
    return q[:, B.shape[1]:]


def subspace_distance(A, B):
    """Spectral norm of the difference of orthogonal projectors.

    ``A`` and ``B`` hold orthonormal bases as columns.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    if A.shape[1] != B.shape[1]:
        return 1.0
    if A.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(A @ A.T - B @ B.T, 2))


def contains(big, small, tol=1e-8):
    """True when span(small) lies inside span(big) (orthonormal ``big``)."""
    small = np.asarray(small, float)
    if small.size == 0 or small.shape[1] == 0:
        return True
    if big.shape[1] == 0:
        return bool(np.linalg.norm(small) <= tol)
    resid = small - big @ (big.T @ small)
    scale = max(1.0, float(np.linalg.norm(small)))
    return bool(np.linalg.norm(resid) <= tol * scale)
