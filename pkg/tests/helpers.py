"""Shared fixtures: frozen closed forms of the R^3 example and random test systems."""
import numpy as np

from dtctrl import exprdsl
from dtctrl.exprdsl import BinOp, Neg, Num, Var
from dtctrl.system import DiscreteSystem

EXAMPLE_TEXT = """\
dims 3 1
f1 = -x1 + x3 + u1^2/2
f2 = x1*x3 - x2
f3 = x3 + u1^2/2
finv1 = -x1 + x3
finv2 = (-x1 + x3)*(x3 - u1^2/2) - x2
finv3 = x3 - u1^2/2
"""


# --------------------------------------------------------------------------
# closed forms for f_u(x, y, z) = (-x + z + u^2/2, x z - y, z + u^2/2), N = 4


def Y_closed(xb, u):
    x, _, z = xb
    u1, u2, u3, u4 = u
    return np.array([
        np.array([0.0, x, 1.0]) * u1,
        np.array([1.0, 2 * x - 0.5 * u1**2, 1.0]) * u2,
        np.array([0.0, 3 * x - 2 * z + 0.5 * u2**2 - u1**2, 1.0]) * u3,
        np.array([1.0, 4 * x - 0.5 * u1**2 + u2**2 - 0.5 * u3**2, 1.0]) * u4,
    ])


def Z_closed(xb, u):
    """4 x 4 x 3 array of Z^{ij}; diagonal from the u-derivative, rest half-brackets."""
    x, _, z = xb
    u1, u2, u3, u4 = u
    Z = np.zeros((4, 4, 3))
    Z[0, 0] = [0.0, x, 1.0]
    Z[1, 1] = [1.0, 2 * x - 0.5 * u1**2, 1.0]
    Z[2, 2] = [0.0, 3 * x - 2 * z - u1**2 + 0.5 * u2**2, 1.0]
    Z[3, 3] = [1.0, 4 * x - 0.5 * u1**2 + u2**2 - 0.5 * u3**2, 1.0]
    off = {(0, 1): -1, (0, 2): -2, (0, 3): -1, (1, 2): 1, (1, 3): 2, (2, 3): -1}
    for (i, j), c in off.items():
        Z[i, j] = Z[j, i] = 0.5 * np.array([0.0, c, 0.0]) * u[i] * u[j]
    return Z


def case1_point(u, y=0.0):
    """State with rank L = 2 for controls u (all nonzero)."""
    u1, u2, u3, _ = u
    return np.array([0.25 * u3**2 - 0.5 * u2**2, y, 0.25 * u3**2 - 0.25 * u2**2 - 0.5 * u1**2])


def case1_lambda(xb, u):
    return np.array([-xb[0] + 0.5 * u[0]**2, 1.0, -xb[0]])


def random_controls(rng, low=0.3, high=1.5):
    return rng.uniform(low, high, 4) * rng.choice([-1.0, 1.0], 4)


# --------------------------------------------------------------------------
# random invertible polynomial systems: x -> A g(x, u), g triangular


def _poly_text(rng, j, n, m):
    """Random polynomial in x_1..x_{j-1} and u for the j-th triangular layer."""
    us = [f"u{r + 1}" for r in range(m)]
    xs = [f"x{i + 1}" for i in range(j)]
    monos = [f"{v}^2" for v in us] + us
    monos += [f"{a}*{b}" for a in xs for b in us] + [f"{a}^2" for a in xs]
    monos += [f"{a}*{b}" for k, a in enumerate(xs) for b in xs[k + 1:]]
    pick = rng.choice(len(monos), size=min(4, len(monos)), replace=False)
    terms = [f"({rng.uniform(-0.6, 0.6)!r})*{monos[p]}" for p in sorted(pick)]
    if m and not any("u" in monos[p] for p in pick):
        terms.append(f"({rng.uniform(0.3, 0.8)!r})*{us[0]}^2")
    return " + ".join(terms)


def random_poly_system(seed, n=3, m=1) -> DiscreteSystem:
    """Triangular polynomial layer followed by an invertible linear mix; analytic inverse."""
    rng = np.random.default_rng(seed)
    while True:
        A = np.eye(n) + 0.4 * rng.standard_normal((n, n))
        if np.linalg.cond(A) < 20:
            break
    Ainv = np.linalg.inv(A)
    p = [exprdsl.parse_expr(_poly_text(rng, j, n, m), n, m) for j in range(n)]
    g = [BinOp("+", Var("x", j + 1), p[j]) for j in range(n)]

    def lin(M, row, args):
        out = None
        for c, a in zip(M[row], args):
            term = BinOp("*", Num(float(c)), a)
            out = term if out is None else BinOp("+", out, term)
        return out

    dyn = [lin(A, k, g) for k in range(n)]
    ys = [lin(Ainv, k, [Var("x", i + 1) for i in range(n)]) for k in range(n)]
    back = {}
    inv = []
    for j in range(n):
        xj = BinOp("-", ys[j], exprdsl.substitute(p[j], back))
        inv.append(xj)
        back[Var("x", j + 1)] = xj
    sf = exprdsl.SystemFile(n, m, tuple(dyn), tuple(inv), None)
    return DiscreteSystem.from_file(sf, f"random-{seed}")


# --------------------------------------------------------------------------
# random expressions


def random_expr(rng, n, m=0, depth=3):
    """Random Expr over x1..xn (and u1..um) with + - * / and small integer powers."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.3:
            return Num(float(np.round(rng.uniform(-3, 3), 3)))
        if m and rng.random() < 0.3:
            return Var("u", int(rng.integers(1, m + 1)))
        return Var("x", int(rng.integers(1, n + 1)))
    r = rng.random()
    if r < 0.1:
        return Neg(random_expr(rng, n, m, depth - 1))
    if r < 0.25:
        return BinOp("^", random_expr(rng, n, m, depth - 1), Num(float(rng.integers(0, 4))))
    op = ["+", "-", "*", "/"][int(rng.integers(0, 4))]
    return BinOp(op, random_expr(rng, n, m, depth - 1), random_expr(rng, n, m, depth - 1))


def denominators_ok(e, x, u=(), floor=0.25):
    """True when every divisor in ``e`` stays away from zero at (x, u)."""
    if isinstance(e, BinOp):
        if e.op == "/":
            try:
                d = exprdsl.evaluate(e.right, [float(v) for v in x], [float(v) for v in u])
            except ZeroDivisionError:
                return False
            if abs(d) < floor:
                return False
        return denominators_ok(e.left, x, u, floor) and denominators_ok(e.right, x, u, floor)
    if isinstance(e, Neg):
        return denominators_ok(e.arg, x, u, floor)
    return True


# --------------------------------------------------------------------------
# finite-difference oracle for hyper-dual derivatives

def fd_partials(e, x, p, q, h=1e-5, dps=50):
    """``(d/dx_p, d/dx_q, d2/dx_p dx_q)`` of ``e`` by central differences with one
    Richardson step, evaluated in 50-digit arithmetic so rounding cannot mask
    the truncation error."""
    import mpmath

    with mpmath.workdps(dps):
        xm = [mpmath.mpf(float(v)) for v in x]
        hm = mpmath.mpf(h)

        def ev(dp=0, dq=0):
            pt = list(xm)
            pt[p] += dp
            pt[q] += dq
            return exprdsl.evaluate(e, pt)

        def first(k, s):
            return ((ev(s, 0) - ev(-s, 0)) if k == p else (ev(0, s) - ev(0, -s))) / (2 * s)

        def second(s):
            if p == q:
                return (ev(s) - 2 * ev() + ev(-s)) / s**2
            return (ev(s, s) - ev(s, -s) - ev(-s, s) + ev(-s, -s)) / (4 * s**2)

        def rich(g):
            return (4 * g(hm / 2) - g(hm)) / 3

        return (float(rich(lambda s: first(p, s))), float(rich(lambda s: first(q, s))),
                float(rich(second)))


def hyperdual_partials(e, x, p, q):
    from dtctrl.diffnum import HyperDual

    xs = [HyperDual(float(v), 1.0 if i == p else 0.0, 1.0 if i == q else 0.0)
          for i, v in enumerate(x)]
    out = exprdsl.evaluate(e, xs)
    if not isinstance(out, HyperDual):
        return 0.0, 0.0, 0.0
    return out.d1, out.d2, out.d12


def rel_err(a, b, floor=1e-8):
    """Relative error; the floor only matters for derivatives that vanish identically."""
    return abs(a - b) / max(abs(b), floor)


def random_fd_case(rng, n=3):
    """A random expression and point whose divisors stay away from zero."""
    while True:
        e = random_expr(rng, n, 0, depth=int(rng.integers(2, 5)))
        x = rng.uniform(-2, 2, n)
        if not denominators_ok(e, x):
            continue
        v = exprdsl.evaluate(e, [float(t) for t in x])
        if abs(v) > 1e6:
            continue
        p, q = (int(k) for k in rng.integers(0, n, 2))
        return e, x, p, q
