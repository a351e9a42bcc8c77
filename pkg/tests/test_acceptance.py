"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dtctrl.analysis import Status, index_pair, restrict_form, span_kernel, verdict
from dtctrl._linalg import contains, subspace_distance
from dtctrl.optimal import (LOCALLY_OPTIMAL, MeyerProblem, adjoint_chain, check_meyer_necessary,
                            check_meyer_sufficient, transport_covector)
from dtctrl.oracle import (BOUNDARY_LIKELY, INTERIOR_LIKELY, EndpointMap, ReachProbe,
                           fd_hessian_on_kernel, fd_jacobian, fd_kernel, minimize_psi,
                           probe_interior, witness_level_set)
from dtctrl.system import builtin
from dtctrl.variation import (ad, ad_field, lie_bracket, variations, x_minus, x_plus,
                              x_plus_field, y_minus, y_plus)

from helpers import (Y_closed, Z_closed, case1_lambda, case1_point, fd_partials,
                     hyperdual_partials, random_controls, random_fd_case, random_poly_system,
                     rel_err)
from test_variation import TEST_FIELD

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
EX = builtin("example-r3")


@pytest.fixture
def verdict_line(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def linear_phi(c):
    return lambda x: sum(float(ci) * xi for ci, xi in zip(c, x))


# --------------------------------------------------------------------------


def test_criterion_1_closed_forms(verdict_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_y = worst_z = 0.0
    for _ in range(50):
        xb = rng.uniform(-1.5, 1.5, 3)
        u = random_controls(rng)
        d = variations(EX, xb, u)
        worst_y = max(worst_y, np.max(np.abs(d.Y[:, 0, :] - Y_closed(xb, u))))
        worst_z = max(worst_z, np.max(np.abs(d.Z[:, 0, :, 0, :] - Z_closed(xb, u))))
    dt = time.perf_counter() - t0
    ok = worst_y <= 1e-8 and worst_z <= 1e-8 and dt < 1.0
    verdict_line(1, ok, f"max |Y err| {worst_y:.2e}, max |Z err| {worst_z:.2e}, {dt:.2f} s")


def test_criterion_2_case_one_verdict(verdict_line):
    rng = np.random.default_rng(102)
    worst_form = worst_lam = 0.0
    bad = []
    for _ in range(20):
        u = random_controls(rng)
        xb = case1_point(u, rng.uniform(-1, 1))
        v = verdict(EX, xb, u)
        sk = v.span
        lam = case1_lambda(xb, u)
        unit = lam / np.linalg.norm(lam)
        worst_lam = max(worst_lam, 1 - abs(unit @ sk.Lperp_basis[:, 0]))
        # the displayed expression corresponds to the covector 2 lam
        H = v.hessian
        for _ in range(5):
            A1, A2 = rng.standard_normal(2)
            a = np.array([A1 / u[0], A2 / u[1], -A1 / u[2], -A2 / u[3]])
            worst_form = max(worst_form,
                             abs((2 * lam) @ H(a) - 4 * (A1**2 - A1 * A2 - A2**2)))
        inertia = index_pair(restrict_form(H, sk, lam))
        if (v.rank, v.k, inertia, v.status) != (2, 1, (1, 0, 1), Status.CERTIFIED_CONTROLLABLE):
            bad.append((v.rank, v.k, inertia, str(v.status)))
    ok = not bad and worst_form <= 1e-8 and worst_lam <= 1e-10
    verdict_line(2, ok, f"20 points, form err {worst_form:.2e}, lambda misalignment "
                        f"{worst_lam:.1e}, mismatches {bad}")


def test_criterion_3_case_two_verdicts(verdict_line):
    rng = np.random.default_rng(103)
    problems = []
    v = verdict(EX, [1.0, 0.0, 0.0], [0, 1, 0, 1])
    if v.status is not Status.CERTIFIED_NOT_CONTROLLABLE:
        problems.append("IIa status")
    if np.max(np.abs(v.witness.lam - [-1, 0, 1])) > 1e-12:
        problems.append("IIa witness")
    if np.max(np.abs(v.witness.eigenvalues - 1.0)) > 1e-10:
        problems.append("IIa eigenvalues")
    for _ in range(5):
        u2, u4 = rng.uniform(0.5, 1.5, 2) * rng.choice([-1, 1], 2)
        x = rng.uniform(-1, 1)
        if abs(x + 0.5 * u2**2) < 0.05:
            continue
        if verdict(EX, [x, rng.uniform(-1, 1), rng.uniform(-1, 1)],
                   [0, u2, 0, u4]).status is not Status.CERTIFIED_NOT_CONTROLLABLE:
            problems.append("IIa random")
    V = np.array([[1.0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, -1]]).T
    diag_err = 0.0
    for _ in range(5):
        z = rng.uniform(-1, 1)
        xb = np.array([-0.5, rng.uniform(-1, 1), z])
        v = verdict(EX, xb, [0, 1, 0, 1])
        if v.status is not Status.CERTIFIED_NOT_CONTROLLABLE or v.witness.inertia != (3, 0, 0):
            problems.append("IIb status")
            continue
        # express the witness as a lam1 + b lam2
        basis = np.column_stack([[-1.0, 0, 1], [2 * xb[0], -2.0, 2 * xb[0]]])
        (a, b), *_ = np.linalg.lstsq(basis, v.witness.lam, rcond=None)
        G = v.hessian.scalar(v.witness.lam)
        diag_err = max(diag_err, np.max(np.abs(V.T @ G @ V - np.diag([a, a + b * (4 * z + 1),
                                                                        4 * b]))))
        if not (a > 0 and b > 0 and a + b * (4 * z + 1) > 0):
            problems.append("IIb witness not positive")
    ok = not problems and diag_err <= 1e-8
    verdict_line(3, ok, f"IIa witness (-1,0,1) eigenvalues (1,1); IIb diag err {diag_err:.1e}; "
                        f"problems {problems}")


def test_criterion_4_derivative_oracles(verdict_line):
    t0 = time.perf_counter()
    systems = [EX] + [random_poly_system(s) for s in (201, 202, 203)]
    rng = np.random.default_rng(104)
    jac = kdist = hess = 0.0
    for sys_ in systems:
        for _ in range(20):
            # moderate states: on exploding trajectories df.Y loses eps * cond(df)
            x0 = rng.uniform(-0.5, 0.5, 3)
            u = rng.uniform(0.2, 0.8, 5) * rng.choice([-1, 1], 5)
            d = variations(sys_, x0, u)
            S = d.df_ubar @ d.Y_matrix()
            F = EndpointMap(sys_, x0, 5)
            J = fd_jacobian(F, u)
            col = np.linalg.norm(J - S, axis=0) / np.maximum(np.linalg.norm(S, axis=0), 1e-12)
            jac = max(jac, float(np.max(col)))
            sk = span_kernel(d.Y)
            kdist = max(kdist, subspace_distance(fd_kernel(J), sk.K_basis))
            a = sk.K_basis @ rng.standard_normal(sk.dim_K)
            ref = d.df_ubar @ d.hessian()(a)
            got = fd_hessian_on_kernel(F, u, a)
            hess = max(hess, float(np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-12)))
    dt = time.perf_counter() - t0
    ok = jac <= 1e-6 and kdist <= 1e-5 and hess <= 1e-4 and dt < 30
    verdict_line(4, ok, f"jacobian {jac:.1e}, kernel distance {kdist:.1e}, "
                        f"hessian {hess:.1e}, {dt:.1f} s")


def test_criterion_5_reachability(verdict_line):
    t0 = time.perf_counter()
    probe = dict(radius=0.05, samples=20000, seed=0)
    x1, u1 = np.array([-0.25, 0.0, -0.5]), np.ones(4)
    r1 = probe_interior(EndpointMap(EX, x1, 4), u1, ReachProbe(**probe))
    x2, u2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0, 1.0])
    level = witness_level_set(EX, x2, u2, verdict(EX, x2, u2))
    r2 = probe_interior(EndpointMap(EX, x2, 4), u2, ReachProbe(**probe, level_set=level))
    r2b = probe_interior(EndpointMap(EX, x2, 4), u2, ReachProbe(**probe, level_set=level))
    r1b = probe_interior(EndpointMap(EX, x1, 4), u1, ReachProbe(**probe))
    dt = time.perf_counter() - t0
    same = (np.array_equal(r1.coverage, r1b.coverage) and r2.level_set_min == r2b.level_set_min)
    ok = (r1.verdict == INTERIOR_LIKELY and r2.verdict == BOUNDARY_LIKELY
          and r2.level_set_min >= -1e-6 and same and dt < 60)
    verdict_line(5, ok, f"Case I {r1.verdict}, Case IIa {r2.verdict} (level-set min "
                        f"{r2.level_set_min:.2e}), deterministic {same}, {dt:.1f} s")


def test_criterion_6_field_identities(verdict_line):
    systems = [EX, random_poly_system(301), random_poly_system(302)]
    rng = np.random.default_rng(106)
    refl = bracket = 0.0
    h = 1e-5
    for k in range(100):
        sys_ = systems[k % 3]
        xb = rng.uniform(-1, 1, 3)
        u = rng.uniform(-1, 1, 1)
        xp, yp = x_plus(sys_, xb, u), y_plus(sys_, xb, u)
        xm, ym = x_minus(sys_, xb, u), y_minus(sys_, xb, u)
        adx = ad(sys_, u, lambda y: x_minus(sys_, y, u), xb)
        ady = ad(sys_, u, lambda y: y_minus(sys_, y, u), xb)
        refl = max(refl, *(float(np.max(np.abs(v)))
                           for v in (xp + yp, xm + ym, xp + adx, yp + ady)))
    for k in range(100):
        sys_ = systems[k % 3]
        xb = rng.uniform(-1, 1, 3)
        u = rng.uniform(-1, 1, 1)

        def adz(s):
            return ad_field(sys_, u + s, TEST_FIELD)(xb)

        fd = (4 * (adz(h / 2) - adz(-h / 2)) / h - (adz(h) - adz(-h)) / (2 * h)) / 3
        br = lie_bracket(x_plus_field(sys_, u, 0), ad_field(sys_, u, TEST_FIELD), xb)
        bracket = max(bracket, float(np.max(np.abs(fd - br))))
    ok = refl <= 1e-6 and bracket <= 1e-5
    verdict_line(6, ok, f"reflection identities {refl:.1e}, bracket identity {bracket:.1e}")


def test_criterion_7_optimality_pipeline(verdict_line):
    rng = np.random.default_rng(107)
    notes = []
    # numerical minimisation of a strongly convex cost
    x0 = np.array([0.3, -0.2, 0.5])
    ustar = random_controls(rng)
    target = EX.rollout(x0, ustar).final
    prob = MeyerProblem(EX, x0, 4, lambda x: sum((x[i] - float(target[i])) ** 2 / 2
                                                  for i in range(3)))
    res = minimize_psi(prob, ustar + rng.uniform(-0.1, 0.1, 4))
    nec = check_meyer_necessary(prob, res.u)
    ok_min = res.converged and nec.cond_I_residual < 1e-7 and nec.cond_II_inertia[2] == 0
    notes.append(f"GD converged={res.converged} in {res.iterations} it, "
                 f"(I) {nec.cond_I_residual:.1e}")
    # Case IIa certificate
    x2, u2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0, 1.0])
    d2 = variations(EX, x2, u2)
    lt = transport_covector(d2, [-1.0, 0.0, 1.0])
    xN = d2.trajectory.final
    quad = MeyerProblem(EX, x2, 4, lambda x: sum(float(lt[i]) * x[i] + 25.0 * (x[i] - float(xN[i]))
                                                 ** 2 for i in range(3)))
    suf = check_meyer_sufficient(quad, u2)
    ok_2a = suf.verdict == LOCALLY_OPTIMAL
    notes.append(f"IIa {suf.verdict}")
    # Case I rejection
    u1 = np.ones(4)
    x1 = case1_point(u1)
    lt1 = transport_covector(variations(EX, x1, u1), case1_lambda(x1, u1))
    rej = check_meyer_sufficient(MeyerProblem(EX, x1, 4, linear_phi(lt1)), u1)
    ok_1 = rej.reason.startswith("(III) fails")
    notes.append(f"Case I '{rej.reason}'")
    # adjoint identities and nesting
    adj = adjoint_chain(MeyerProblem(EX, x2, 4, linear_phi(lt)), u2)
    ok_adj = max(adj.cc_residuals.max(), adj.adjoint_residuals.max()) < 1e-9
    notes.append(f"adjoint {max(adj.cc_residuals.max(), adj.adjoint_residuals.max()):.1e}")
    nested = True
    for x, u in ((x1, u1), (x2, u2), (rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 6))):
        Y = variations(EX, x, u).Y
        prev = None
        for t in range(1, len(u) + 1):
            sk = span_kernel(Y[:t], allow_degenerate=True)
            if prev is not None:
                Kp = np.vstack([prev.K_basis, np.zeros((1, prev.dim_K))])
                nested &= contains(sk.K_basis, Kp, 1e-8) and contains(sk.L_basis, prev.L_basis,
                                                                      1e-8)
            prev = sk
    notes.append(f"nesting {nested}")
    verdict_line(7, ok_min and ok_2a and ok_1 and ok_adj and nested, "; ".join(notes))


def test_criterion_8_diffnum(verdict_line):
    rng = np.random.default_rng(108)
    worst = 0.0
    for _ in range(1000):
        e, x, p, q = random_fd_case(rng)
        got = hyperdual_partials(e, x, p, q)
        ref = fd_partials(e, x, p, q)
        worst = max(worst, *(rel_err(g, r) for g, r in zip(got, ref)))
    verdict_line(8, worst <= 1e-6, f"1000 expressions, worst relative error {worst:.2e}")


def _cli(*argv):
    out = subprocess.run([sys.executable, "-m", "dtctrl", *argv, "--format", "structured"],
                         capture_output=True, text=True, cwd=ROOT)
    return out.returncode, out.stdout


def test_criterion_9_cli(verdict_line):
    case1 = ["--x0", "-0.25", "0", "-0.5", "--u", "1", "1", "1", "1"]
    case2a = ["--x0", "1", "0", "0", "--u", "0", "1", "0", "1"]
    runs = [
        (["analyze", "--system", "example-r3", *case1], 0),
        (["analyze", "--system", "example-r3", *case2a], 10),
        (["optimal", "--problem", "problems/case2a-quadratic.prob", *case2a], 0),
        (["optimal", "--problem", "problems/case1-linear.prob", *case1], 10),
        (["optimal", "--problem", "problems/constant.prob", *case1], 20),
        (["oracle", "--system", "example-r3", *case1, "--seed", "3"], 0),
        (["oracle", "--system", "example-r3", *case2a, "--seed", "3"], 0),
    ]
    bad = []
    for argv, expected in runs:
        c1, o1 = _cli(*argv)
        c2, o2 = _cli(*argv)
        if c1 != expected or c2 != expected:
            bad.append(f"{argv[0]} exit {c1} (want {expected})")
        if o1 != o2:
            bad.append(f"{argv[0]} output differs between runs")
    verdict_line(9, not bad, f"{len(runs)} invocations run twice; problems {bad}")
