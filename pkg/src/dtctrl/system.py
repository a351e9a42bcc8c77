"""Invertible discrete-time systems ``x_i = f(x_{i-1}, u_i)``."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import exprdsl
from ._linalg import COND_LIMIT, check_conditioning, solve
from .diffnum import HyperDual
from .errors import (DivisionByZero, DtctrlError, NewtonDivergence, NonFiniteResult,
                     NotInterior, SingularJacobian)

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-10

ANALYTIC = "analytic"
NEWTON = "newton"


def as_controls(ubar, m: int) -> np.ndarray:
    """Normalise a control sequence to shape ``(N, m)``.

    A flat list is read step by step, ``m`` numbers per step.
    """
    arr = np.asarray(ubar, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        if arr.size % m:
            raise exprdsl.DimensionMismatch(
                f"{arr.size} control values do not split into steps of m={m}")
        arr = arr.reshape(-1, m)
    if arr.ndim != 2 or arr.shape[1] != m:
        raise exprdsl.DimensionMismatch(f"controls must have shape (N, {m}), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (N+1, n)
    controls: np.ndarray  # (N, m)

    @property
    def N(self):
        return len(self.controls)

    @property
    def final(self):
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """Dynamics ``f`` with optional analytic inverse and a control box.

    ``f`` and ``finv`` are generic callables ``(x, u) -> list`` that must work
    on floats, :class:`HyperDual` numbers and numpy arrays alike.  Systems
    built from DSL text keep their expressions in ``exprs`` so that faster
    backends can generate code for them.
    """

    n: int
    m: int
    f: Callable
    finv: Callable | None = None
    u_box: tuple | None = None
    name: str = ""
    exprs: tuple | None = None
    inv_exprs: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_file(cls, sf: exprdsl.SystemFile, name=""):
        f = exprdsl.compile_exprs(sf.dynamics, "f")
        finv = exprdsl.compile_exprs(sf.inverse, "finv") if sf.inverse else None
        return cls(sf.n, sf.m, f, finv, sf.u_box, name, tuple(sf.dynamics),
                   tuple(sf.inverse) if sf.inverse else None)

    @classmethod
    def from_text(cls, text: str, name=""):
        return cls.from_file(exprdsl.parse(text), name)

    @property
    def inverse_mode(self):
        return ANALYTIC if self.finv is not None else NEWTON

    def to_system_file(self) -> exprdsl.SystemFile:
        if self.exprs is None:
            raise DtctrlError("system is not expression-backed")
        return exprdsl.SystemFile(self.n, self.m, self.exprs, self.inv_exprs, self.u_box)

    # --------------------------------------------------------------- checks

    def _check_x(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n:
            raise exprdsl.DimensionMismatch(f"state has {x.size} entries, expected n={self.n}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteResult(f"non-finite state {x}")
        return x

    def _check_u(self, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.m:
            raise exprdsl.DimensionMismatch(f"control has {u.size} entries, expected m={self.m}")
        if not np.all(np.isfinite(u)):
            raise NonFiniteResult(f"non-finite control {u}")
        return u

    def check_interior(self, ubar):
        """Raise :class:`NotInterior` unless every control is strictly inside the box."""
        ubar = as_controls(ubar, self.m)
        if self.u_box is None:
            return
        lo = np.array([b[0] for b in self.u_box])
        hi = np.array([b[1] for b in self.u_box])
        bad = np.argwhere(~((ubar > lo) & (ubar < hi)))
        if len(bad):
            i, r = bad[0]
            raise NotInterior(f"u{i + 1}[{r + 1}] = {ubar[i, r]} is not inside "
                              f"({lo[r]}, {hi[r]})")

    # ------------------------------------------------------------- evaluation

    def step(self, x, u) -> np.ndarray:
        x = self._check_x(x)
        u = self._check_u(u)
        try:
            y = np.array(self.f(x.tolist(), u.tolist()), dtype=float)
        except ZeroDivisionError as exc:
            raise DivisionByZero(str(exc)) from None
        except OverflowError as exc:
            raise NonFiniteResult(f"overflow evaluating f({x}, {u}): {exc}") from None
        if not np.all(np.isfinite(y)):
            raise NonFiniteResult(f"f({x}, {u}) = {y}")
        return y

    def dual(self, xv, xd=None, uv=None, ud=None):
        """Values, Jacobians and their directional derivatives in one sweep.

        ``xd``/``ud`` give a first-order perturbation direction of the inputs
        (carried in the first hyper-dual slot); the second slot seeds one
        column of the Jacobian at a time.  Returns ``(fv, fd, Jx, Jxd, Ju, Jud)``
        where ``fd``, ``Jxd``, ``Jud`` are derivatives along ``(xd, ud)``.
        """
        n, m = self.n, self.m
        xv = np.asarray(xv, float)
        uv = np.asarray(uv, float)
        xd = np.zeros(n) if xd is None else np.asarray(xd, float)
        ud = np.zeros(m) if ud is None else np.asarray(ud, float)
        fv = np.empty(n)
        fd = np.empty(n)
        J = np.empty((n, n + m))
        Jd = np.empty((n, n + m))
        for q in range(n + m):
            xs = [HyperDual(xv[i], xd[i], 1.0 if i == q else 0.0) for i in range(n)]
            us = [HyperDual(uv[r], ud[r], 1.0 if n + r == q else 0.0) for r in range(m)]
            try:
                out = self.f(xs, us)
            except ZeroDivisionError as exc:
                raise DivisionByZero(str(exc)) from None
            except OverflowError as exc:
                raise NonFiniteResult(f"overflow at x={xv}, u={uv}: {exc}") from None
            for k, o in enumerate(out):
                if not isinstance(o, HyperDual):
                    o = HyperDual(float(o))
                J[k, q] = o.d2
                Jd[k, q] = o.d12
                if q == 0:
                    fv[k] = o.value
                    fd[k] = o.d1
        if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(J))):
            raise NonFiniteResult(f"non-finite derivatives at x={xv}, u={uv}")
        return fv, fd, J[:, :n], Jd[:, :n], J[:, n:], Jd[:, n:]

    def jac_x(self, x, u) -> np.ndarray:
        x = self._check_x(x)
        u = self._check_u(u)
        return self.dual(x, None, u, None)[2]

    def jac_u(self, x, u) -> np.ndarray:
        x = self._check_x(x)
        u = self._check_u(u)
        return self.dual(x, None, u, None)[4]

    def second_derivatives(self, x, u):
        """Exact ``d2f_k/dw_p dw_q`` for ``w = (x, u)``; shape ``(n, n+m, n+m)``."""
        x = self._check_x(x)
        u = self._check_u(u)
        n, m = self.n, self.m
        out = np.empty((n, n + m, n + m))
        for p in range(n + m):
            e = np.zeros(n + m)
            e[p] = 1.0
            _, _, Jx, Jxd, Ju, Jud = self.dual(x, e[:n], u, e[n:])
            out[:, p, :n] = Jxd
            out[:, p, n:] = Jud
        return out

    # ---------------------------------------------------------------- inverse

    def inverse_step(self, y, u, x_hint=None, mode=None) -> np.ndarray:
        """Solve ``f(x, u) = y`` for ``x``.

        Analytic mode evaluates the supplied inverse and polishes it with
        Newton if its residual is too large; Newton mode starts from
        ``x_hint`` (default: ``y`` itself) to stay on the local branch.
        """
        y = self._check_x(y)
        u = self._check_u(u)
        mode = mode or self.inverse_mode
        tol = NEWTON_TOL * max(1.0, float(np.max(np.abs(y))))
        if mode == ANALYTIC:
            if self.finv is None:
                raise DtctrlError("no analytic inverse available")
            try:
                x = np.array(self.finv(y.tolist(), u.tolist()), dtype=float)
            except ZeroDivisionError as exc:
                raise DivisionByZero(str(exc)) from None
            except OverflowError as exc:
                raise NonFiniteResult(f"overflow in the inverse at y={y}: {exc}") from None
            if np.all(np.isfinite(x)) and np.linalg.norm(self.step(x, u) - y) <= tol:
                return x
            x_hint = x if np.all(np.isfinite(x)) else x_hint
        x = y.copy() if x_hint is None else self._check_x(x_hint).copy()
        r = self.step(x, u) - y
        rn = np.linalg.norm(r)
        for _ in range(NEWTON_MAX_ITER):
            if rn <= tol:
                return x
            J = self.jac_x(x, u)
            dx = solve(J, r)
            t = 1.0
            while True:
                try:
                    cand = x - t * dx
                    rc = self.step(cand, u) - y
                    rcn = np.linalg.norm(rc)
                except (NonFiniteResult, DivisionByZero):
                    rcn = np.inf
                if rcn < rn or t < 1e-6:
                    break
                t *= 0.5
            if not np.isfinite(rcn):
                break
            x, r, rn = cand, rc, rcn
        if rn <= tol:
            return x
        raise NewtonDivergence(f"Newton inverse did not converge (residual {rn:.3g})")

    # ---------------------------------------------------------------- rollout

    def rollout(self, x0, ubar) -> Trajectory:
        ubar = as_controls(ubar, self.m)
        x = self._check_x(x0)
        states = [x]
        for u in ubar:
            x = self.step(x, u)
            states.append(x)
        return Trajectory(np.array(states), ubar)

    def check_invertibility(self, points, controls, tol=1e-9):
        """Sampled necessary check of invertibility; returns the worst round-trip error.

        Also verifies ``df_u(x)`` is well conditioned at every sample.
        """
        worst = 0.0
        for x, u in zip(points, controls):
            y = self.step(x, u)
            check_conditioning(self.jac_x(x, u))
            back = self.inverse_step(y, u, x_hint=x)
            worst = max(worst, float(np.max(np.abs(back - np.asarray(x)))))
        if worst > tol:
            raise SingularJacobian(f"round-trip error {worst:.3g} exceeds {tol}")
        return worst


# --------------------------------------------------------------------------
# built-in systems

BUILTIN_SYSTEMS = {
    "example-r3": """\
dims 3 1
f1 = -x1 + x3 + u1^2/2
f2 = x1*x3 - x2
f3 = x3 + u1^2/2
finv1 = -x1 + x3
finv2 = (-x1 + x3)*(x3 - u1^2/2) - x2
finv3 = x3 - u1^2/2
""",
    "linear-generic": """\
dims 2 1
f1 = 2*x1 + x2
f2 = x2 + u1
finv1 = (x1 - x2 + u1)/2
finv2 = x2 - u1
""",
}

BUILTIN_DESCRIPTIONS = {
    "example-r3": "polynomial system on R^3 with scalar control (golden example)",
    "linear-generic": "controllable linear system f = A x + B u on R^2",
}


def builtin(name: str) -> DiscreteSystem:
    try:
        text = BUILTIN_SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown built-in system {name!r}; "
                       f"choose from {sorted(BUILTIN_SYSTEMS)}") from None
    return DiscreteSystem.from_text(text, name)


def load_system(source: str) -> DiscreteSystem:
    """Built-in name or path to a system file."""
    if source in BUILTIN_SYSTEMS:
        return builtin(source)
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    return DiscreteSystem.from_text(text, os.path.basename(source))


def linear_system(A, B, name="linear") -> DiscreteSystem:
    """Expression-backed ``f = A x + B u`` with analytic inverse."""
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    n, m = B.shape
    Ainv = np.linalg.inv(A)

    def lin(coeffs, names):
        terms = [f"({float(c)!r})*{v}" for c, v in zip(coeffs, names) if c != 0.0]
        return " + ".join(terms) if terms else "0"

    xs = [f"x{i + 1}" for i in range(n)]
    us = [f"u{r + 1}" for r in range(m)]
    lines = [f"dims {n} {m}"]
    lines += [f"f{k + 1} = {lin(list(A[k]) + list(B[k]), xs + us)}" for k in range(n)]
    # x = A^-1 (y - B u)
    AinvB = Ainv @ B
    lines += [f"finv{k + 1} = {lin(list(Ainv[k]) + list(-AinvB[k]), xs + us)}"
              for k in range(n)]
    return DiscreteSystem.from_text("\n".join(lines) + "\n", name)


__all__ = [
    "ANALYTIC", "BUILTIN_SYSTEMS", "COND_LIMIT", "DiscreteSystem", "NEWTON",
    "NotInterior", "Trajectory", "as_controls", "builtin", "linear_system", "load_system",
]
