"""Variation vector fields of an invertible system and the Hessian form H.

Vector fields are callables that can also push a tangent direction through
themselves (``jvp``), which is all a Lie bracket needs::

    [V, W](x) = dW(x) V(x) - dV(x) W(x)

The control-dependent fields follow the forward convention

    X+_{u,r}(x) = (df_u(x))^-1 df/du^r (x, u)
    (Ad_u Y)(x) = (df_u(x))^-1 Y(f_u(x))
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import dual_solve, solve
from .diffnum import HyperDual
from .system import DiscreteSystem, Trajectory, as_controls

FD_STEP = 1e-5


class VectorField:
    """A smooth field ``x -> v`` that also propagates tangents.

    ``fn(x, dx)`` returns ``(v, dv)`` where ``dv`` is the derivative of the
    field along ``dx`` (``None`` when ``dx`` is ``None``).
    """

    def __init__(self, fn, label=""):
        self._fn = fn
        self.label = label

    def __call__(self, x):
        return self._fn(np.asarray(x, float), None)[0]

    def jvp(self, x, dx):
        return self._fn(np.asarray(x, float), np.asarray(dx, float))

    def jacobian(self, x):
        x = np.asarray(x, float)
        cols = [self.jvp(x, e)[1] for e in np.eye(len(x))]
        return np.column_stack(cols)

    def __repr__(self):
        return f"VectorField({self.label or self._fn!r})"

    @classmethod
    def from_scalar_fn(cls, fn, label=""):
        """Wrap ``fn(list_of_scalars) -> list`` written for generic scalars."""

        def wrapped(x, dx):
            if dx is None:
                return np.array(fn(list(x)), float), None
            out = fn([HyperDual(a, b) for a, b in zip(x, dx)])
            v = np.array([o.value if isinstance(o, HyperDual) else o for o in out], float)
            d = np.array([o.d1 if isinstance(o, HyperDual) else 0.0 for o in out], float)
            return v, d

        return cls(wrapped, label)


def lie_bracket(V: VectorField, W: VectorField, x) -> np.ndarray:
    x = np.asarray(x, float)
    return W.jvp(x, V(x))[1] - V.jvp(x, W(x))[1]


# --------------------------------------------------------------------------
# the four u-dependent fields


def x_plus_field(sys: DiscreteSystem, u, r: int) -> VectorField:
    u = np.asarray(u, float).reshape(sys.m)

    def fn(x, dx):
        _, _, J, Jd, Ju, Jud = sys.dual(x, dx, u, None)
        if dx is None:
            return solve(J, Ju[:, r]), None
        return dual_solve(J, Jd, Ju[:, r], Jud[:, r])

    return VectorField(fn, f"X+[u={u.tolist()}, r={r + 1}]")


def ad_field(sys: DiscreteSystem, u, W: VectorField) -> VectorField:
    """The pulled-back field ``Ad_u W``."""
    u = np.asarray(u, float).reshape(sys.m)

    def fn(x, dx):
        y, yd, J, Jd, _, _ = sys.dual(x, dx, u, None)
        if dx is None:
            return solve(J, W(y)), None
        w, wd = W.jvp(y, yd)
        return dual_solve(J, Jd, w, wd)

    return VectorField(fn, f"Ad[u={u.tolist()}]({W.label})")


def x_plus(sys: DiscreteSystem, x, u, r: int = 0) -> np.ndarray:
    """``X+_{u,r}(x)`` by a linear solve against ``df_u(x)``."""
    x = sys._check_x(x)
    u = sys._check_u(u)
    J = sys.jac_x(x, u)
    b = sys.jac_u(x, u)[:, r]
    return solve(J, b)


def ad(sys: DiscreteSystem, u, field, x) -> np.ndarray:
    """``(Ad_u field)(x) = (df_u(x))^-1 field(f_u(x))``."""
    x = sys._check_x(x)
    u = sys._check_u(u)
    J = sys.jac_x(x, u)
    return solve(J, np.asarray(field(sys.step(x, u)), float))


def _richardson(g, h):
    d1 = (g(h) - g(-h)) / (2 * h)
    d2 = (g(h / 2) - g(-h / 2)) / h
    return (4 * d2 - d1) / 3


def _e(sys, r):
    e = np.zeros(sys.m)
    e[r] = 1.0
    return e


def x_plus_fd(sys, x, u, r=0, h=FD_STEP):
    """Reference ``X+`` from its defining curve ``f_u^-1 o f_{u+eps}``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    e = _e(sys, r)
    return _richardson(lambda t: sys.inverse_step(sys.step(x, u + t * e), u, x_hint=x), h)


def y_plus(sys, x, u, r=0, h=FD_STEP):
    """``Y+_{u,r}(x) = d/de f_{u+e}^-1 o f_u(x)`` by central differences."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    e = _e(sys, r)
    y = sys.step(x, u)
    return _richardson(lambda t: sys.inverse_step(y, u + t * e, x_hint=x), h)


def x_minus(sys, x, u, r=0, h=FD_STEP):
    """``X-_{u,r}(x) = d/de f_u o f_{u+e}^-1(x)``; needs the inverse at ``x``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    e = _e(sys, r)
    base = sys.inverse_step(x, u)
    return _richardson(lambda t: sys.step(sys.inverse_step(x, u + t * e, x_hint=base), u), h)


def y_minus(sys, x, u, r=0, h=FD_STEP):
    """``Y-_{u,r}(x) = d/de f_{u+e} o f_u^-1(x)``; needs the inverse at ``x``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    e = _e(sys, r)
    pre = sys.inverse_step(x, u)
    return _richardson(lambda t: sys.step(pre, u + t * e), h)


# --------------------------------------------------------------------------
# first and second variations


def first_variation_field(sys: DiscreteSystem, ubar, i: int, r: int = 0) -> VectorField:
    """``Y^{ir} = Ad_{u_1} ... Ad_{u_{i-1}} X+_{u_i, r}`` as a field (``i`` is 1-based)."""
    ubar = as_controls(ubar, sys.m)
    field = x_plus_field(sys, ubar[i - 1], r)
    for k in range(i - 2, -1, -1):
        field = ad_field(sys, ubar[k], field)
    return field


@dataclass
class VariationData:
    x0: np.ndarray
    ubar: np.ndarray  # (N, m)
    trajectory: Trajectory
    jacobians: np.ndarray  # (N, n, n): df_{u_i}(x_{i-1})
    Y: np.ndarray  # (N, m, n)
    Z: np.ndarray | None  # (N, m, N, m, n), symmetric under (i,r) <-> (j,s)
    df_ubar: np.ndarray  # (n, n): df_{u_N}(x_{N-1}) ... df_{u_1}(x_0)

    @property
    def N(self):
        return self.ubar.shape[0]

    @property
    def m(self):
        return self.ubar.shape[1]

    @property
    def n(self):
        return self.x0.shape[0]

    def Y_matrix(self):
        """``n x (N m)`` matrix whose column ``i*m + r`` is ``Y^{ir}(x0)``."""
        return self.Y.reshape(self.N * self.m, self.n).T

    def prefix(self, t: int) -> "VariationData":
        """Data of the restricted sequence ``(u_1, ..., u_t)``; exact slices."""
        J = self.jacobians[:t]
        df = np.eye(self.n)
        for Jk in J:
            df = Jk @ df
        return VariationData(
            self.x0, self.ubar[:t],
            Trajectory(self.trajectory.states[: t + 1], self.ubar[:t]),
            J, self.Y[:t], None if self.Z is None else self.Z[:t, :, :t, :], df)

    def hessian(self) -> "HessianForm":
        return assemble_hessian(self.Y, self.Z)


def _pull_back(jacobians, i, v):
    """Apply ``Ad_{u_1} ... Ad_{u_{i-1}}`` to a vector sitting at ``x_{i-1}``."""
    for k in range(i - 2, -1, -1):
        v = solve(jacobians[k], v)
    return v


def first_variations(sys: DiscreteSystem, x0, ubar, *, traj=None, jacobians=None):
    """All ``Y^{ir}(x0)``, shape ``(N, m, n)``.

    ``X+`` is evaluated at ``x_{i-1}`` on the rolled-out trajectory and then
    pulled back to ``x0`` through the chain of step Jacobians.
    """
    ubar = as_controls(ubar, sys.m)
    if len(ubar) == 0:
        raise ValueError("control sequence must be non-empty")
    if traj is None:
        traj = sys.rollout(x0, ubar)
    N, n, m = len(ubar), sys.n, sys.m
    if jacobians is None:
        jacobians = np.array([sys.jac_x(traj.states[i], ubar[i]) for i in range(N)])
    Y = np.empty((N, m, n))
    for i in range(1, N + 1):
        Ju = sys.jac_u(traj.states[i - 1], ubar[i - 1])
        for r in range(m):
            v = solve(jacobians[i - 1], Ju[:, r])
            Y[i - 1, r] = _pull_back(jacobians, i, v)
    return Y


def _diag_block(sys, x, u):
    """``d/du^r X+_{u,s}(x)`` symmetrised in ``(r, s)``; shape ``(m, m, n)``."""
    m = sys.m
    W = np.empty((m, m, sys.n))
    for r in range(m):
        ud = np.zeros(m)
        ud[r] = 1.0
        _, _, J, Jd, Ju, Jud = sys.dual(x, None, u, ud)
        for s in range(m):
            W[r, s] = dual_solve(J, Jd, Ju[:, s], Jud[:, s])[1]
    return 0.5 * (W + W.transpose(1, 0, 2))


def second_variations(sys: DiscreteSystem, x0, ubar, *, traj=None, jacobians=None):
    """All ``Z^{ir,js}(x0)``, shape ``(N, m, N, m, n)``.

    Diagonal blocks differentiate ``X+`` in the control (hyper-dual seeding
    of ``u_i``); off-diagonal blocks are half brackets computed at
    ``x_{i-1}`` between ``X+_{u_i,r}`` and the pulled-back later field, then
    transported to ``x0``.
    """
    ubar = as_controls(ubar, sys.m)
    if len(ubar) == 0:
        raise ValueError("control sequence must be non-empty")
    if traj is None:
        traj = sys.rollout(x0, ubar)
    N, n, m = len(ubar), sys.n, sys.m
    if jacobians is None:
        jacobians = np.array([sys.jac_x(traj.states[i], ubar[i]) for i in range(N)])
    Z = np.zeros((N, m, N, m, n))
    for i in range(1, N + 1):
        xi = traj.states[i - 1]
        D = _diag_block(sys, xi, ubar[i - 1])
        for r in range(m):
            for s in range(r, m):
                z = _pull_back(jacobians, i, D[r, s])
                Z[i - 1, r, i - 1, s] = z
                Z[i - 1, s, i - 1, r] = z
        for r in range(m):
            V = x_plus_field(sys, ubar[i - 1], r)
            for j in range(i + 1, N + 1):
                for s in range(m):
                    # Ad_{u_i} ... Ad_{u_{j-1}} X+_{u_j,s}, a field near x_{i-1}
                    W = x_plus_field(sys, ubar[j - 1], s)
                    for k in range(j - 2, i - 2, -1):
                        W = ad_field(sys, ubar[k], W)
                    z = _pull_back(jacobians, i, 0.5 * lie_bracket(V, W, xi))
                    Z[i - 1, r, j - 1, s] = z
                    Z[j - 1, s, i - 1, r] = z
    return Z


def variations(sys: DiscreteSystem, x0, ubar, with_second=True) -> VariationData:
    ubar = as_controls(ubar, sys.m)
    traj = sys.rollout(x0, ubar)
    N = len(ubar)
    jacobians = np.array([sys.jac_x(traj.states[i], ubar[i]) for i in range(N)])
    Y = first_variations(sys, x0, ubar, traj=traj, jacobians=jacobians)
    Z = second_variations(sys, x0, ubar, traj=traj, jacobians=jacobians) if with_second else None
    df = np.eye(sys.n)
    for Jk in jacobians:
        df = Jk @ df
    return VariationData(traj.states[0], ubar, traj, jacobians, Y, Z, df)


# --------------------------------------------------------------------------
# Hessian form


@dataclass
class HessianForm:
    """Vector-valued quadratic form ``H(a) = sum a_p a_q Z^{pq}(x0)``.

    ``tensor`` has shape ``(Nm, Nm, n)`` with flat index ``p = i*m + r``.
    """

    tensor: np.ndarray

    @property
    def dim(self):
        return self.tensor.shape[0]

    def __call__(self, a):
        a = np.asarray(a, float).reshape(-1)
        return np.einsum("p,q,pqk->k", a, a, self.tensor)

    def bilinear(self, a, b):
        return np.einsum("p,q,pqk->k", np.ravel(a), np.ravel(b), self.tensor)

    def scalar(self, lam) -> np.ndarray:
        """The ``(Nm, Nm)`` symmetric matrix of ``lam * H``."""
        return self.tensor @ np.asarray(lam, float)

    def leading(self, size):
        return HessianForm(self.tensor[:size, :size])


def assemble_hessian(Y, Z) -> HessianForm:
    N, m, n = Y.shape
    if Z.shape != (N, m, N, m, n):
        raise ValueError(f"Z has shape {Z.shape}, expected {(N, m, N, m, n)}")
    return HessianForm(Z.reshape(N * m, N * m, n).copy())
