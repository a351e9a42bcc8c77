import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtctrl.analysis import (RestrictedForm, Status, VerdictOptions, index_pair, restrict_form,
                             span_kernel, sphere_samples, verdict)
from dtctrl.errors import DegenerateInput, LambdaNotInAnnihilator
from dtctrl.system import builtin
from dtctrl.variation import variations

from helpers import case1_lambda, case1_point, random_controls

EX = builtin("example-r3")


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_case_one_span_and_kernel():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = random_controls(rng)
        xb = case1_point(u, rng.uniform(-1, 1))
        sk = span_kernel(variations(EX, xb, u).Y)
        assert (sk.rank, sk.k, sk.dim_K) == (2, 1, 2)
        lam = _unit(case1_lambda(xb, u))
        assert abs(abs(sk.Lperp_basis[:, 0] @ lam) - 1) < 1e-10


def test_case_one_kernel_description():
    rng = np.random.default_rng(10)
    for _ in range(10):
        u = random_controls(rng)
        xb = case1_point(u)
        d = variations(EX, xb, u)
        sk = span_kernel(d.Y)
        A1, A2 = rng.standard_normal(2)
        a = np.array([A1, A2, -u[0] / u[2] * A1, -u[1] / u[3] * A2])
        assert abs(d.Y_matrix() @ a).max() < 1e-10
        # a lies in the computed kernel
        np.testing.assert_allclose(sk.K_basis @ (sk.K_basis.T @ a), a, atol=1e-10)


def test_standard_basis_full_rank():
    Y = np.eye(3).reshape(3, 1, 3)
    sk = span_kernel(Y)
    assert sk.rank == 3 and sk.dim_K == 0 and sk.k == 0


def test_all_zero_variations_are_degenerate():
    with pytest.raises(DegenerateInput):
        span_kernel(np.zeros((4, 1, 3)))


def test_case_two_a_form():
    for x in (1.0, 0.2, -2.0):
        xb = np.array([x, 0.3, -0.4])
        for u2, u4 in ((1.0, 1.0), (0.7, -1.3)):
            u = np.array([0.0, u2, 0.0, u4])
            d = variations(EX, xb, u)
            sk = span_kernel(d.Y)
            assert sk.k == 1 and sk.dim_K == 2
            rf = restrict_form(d.hessian(), sk, [-1.0, 0.0, 1.0])
            np.testing.assert_allclose(rf.eigenvalues, [1.0, 1.0], atol=1e-10)
            G = d.hessian().scalar([-1.0, 0.0, 1.0])
            a = np.array([0.6, 0.0, -1.1, 0.0])
            assert a @ G @ a == pytest.approx(0.6**2 + 1.1**2, abs=1e-12)


def test_case_two_b_form_in_kernel_basis():
    u = np.array([0.0, 1.0, 0.0, 1.0])
    rng = np.random.default_rng(1)
    for _ in range(10):
        z = rng.uniform(-1, 1)
        xb = np.array([-0.5, rng.uniform(-1, 1), z])
        a, b = rng.uniform(-2, 2, 2)
        lam = a * np.array([-1.0, 0.0, 1.0]) + b * np.array([2 * xb[0], -2.0, 2 * xb[0]])
        d = variations(EX, xb, u)
        sk = span_kernel(d.Y)
        assert sk.k == 2 and sk.dim_K == 3
        G = d.hessian().scalar(lam)
        V = np.array([[1.0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, -1]]).T
        np.testing.assert_allclose(V.T @ G @ V, np.diag([a, a + b * (4 * z + 1), 4 * b]),
                                   atol=1e-10)


def test_case_two_b_general_controls():
    # with u2, u4 not 1 the third kernel vector is (0, -u4/u2, 0, 1) and gives 4 b u4^2
    u2, u4 = 0.8, -1.4
    u = np.array([0.0, u2, 0.0, u4])
    xb = np.array([-0.5 * u2**2, 0.2, 0.3])
    a, b = 1.5, 0.25
    lam = a * np.array([-1.0, 0.0, 1.0]) + b * np.array([2 * xb[0], -2.0, 2 * xb[0]])
    d = variations(EX, xb, u)
    V3 = np.array([0.0, -u4 / u2, 0.0, 1.0])
    assert abs(d.Y_matrix() @ V3).max() < 1e-12
    assert V3 @ d.hessian().scalar(lam) @ V3 == pytest.approx(4 * b * u4**2, abs=1e-10)


def test_index_pair_examples():
    rf = RestrictedForm(np.zeros(3), np.eye(2), np.array([1.0, 1.0]))
    assert index_pair(rf) == (2, 0, 0)
    assert index_pair(np.zeros(3)) == (0, 3, 0)
    M = 4 * np.array([[1.0, -0.5], [-0.5, -1.0]])
    assert index_pair(np.linalg.eigvalsh(M)) == (1, 0, 1)


def test_sphere_samples_shapes_and_norms():
    np.testing.assert_array_equal(sphere_samples(1, 10), [[1.0], [-1.0]])
    for k, c in ((2, 36), (3, 100), (5, 50)):
        S = sphere_samples(k, c, seed=3)
        assert S.shape == (c, k)
        np.testing.assert_allclose(np.linalg.norm(S, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sphere_samples(5, 20, 1), sphere_samples(5, 20, 1))


# ----------------------------------------------------------------- verdicts


def test_verdict_case_one():
    rng = np.random.default_rng(2)
    for _ in range(20):
        u = random_controls(rng)
        xb = case1_point(u, rng.uniform(-1, 1))
        v = verdict(EX, xb, u)
        assert v.status is Status.CERTIFIED_CONTROLLABLE
        assert v.rank == 2 and v.k == 1
        assert v.witness.inertia[2] >= 1


def test_verdict_golden_case_one():
    v = verdict(EX, [-0.25, 0.0, -0.5], [1, 1, 1, 1])
    assert v.status is Status.CERTIFIED_CONTROLLABLE
    assert str(v.status) == "CertifiedControllable"


def test_verdict_case_two_a():
    v = verdict(EX, [1.0, 0.0, 0.0], [0, 1, 0, 1])
    assert v.status is Status.CERTIFIED_NOT_CONTROLLABLE
    np.testing.assert_allclose(v.witness.lam, [-1.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(v.witness.eigenvalues, [1.0, 1.0], atol=1e-10)


def test_verdict_case_two_b_finds_witness():
    rng = np.random.default_rng(3)
    for _ in range(5):
        u2, u4 = rng.uniform(0.5, 1.5, 2) * rng.choice([-1, 1], 2)
        xb = np.array([-0.5 * u2**2, rng.uniform(-1, 1), rng.uniform(-1, 1)])
        v = verdict(EX, xb, [0, u2, 0, u4])
        assert v.k == 2
        assert v.status is Status.CERTIFIED_NOT_CONTROLLABLE
        assert v.witness.inertia == (3, 0, 0)
        # the witness lies in the annihilator
        assert abs(v.witness.lam @ v.data.Y_matrix()).max() < 1e-9


def test_verdict_full_rank():
    v = verdict(EX, [0.3, 0.2, 0.9], [1, 1, 1, 1])
    assert v.status is Status.FULL_RANK_CONTROLLABLE and v.rank == 3


def test_verdict_two_steps_trivial_kernel():
    v = verdict(EX, [0.3, 0.2, 0.9], [1.0, 0.7])
    assert v.status is Status.INCONCLUSIVE and v.span.dim_K == 0


# ----------------------------------------------------------------- invariants


def test_restrict_form_rejects_foreign_covector():
    u = np.ones(4)
    xb = case1_point(u)
    d = variations(EX, xb, u)
    with pytest.raises(LambdaNotInAnnihilator):
        restrict_form(d.hessian(), span_kernel(d.Y), [1.0, 0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_scale_and_sign_invariance(seed, c):
    rng = np.random.default_rng(seed)
    u = random_controls(rng)
    xb = case1_point(u, rng.uniform(-1, 1))
    d = variations(EX, xb, u)
    sk = span_kernel(d.Y)
    H = d.hessian()
    lam = case1_lambda(xb, u)
    p = index_pair(restrict_form(H, sk, lam))
    assert index_pair(restrict_form(H, sk, c * lam)) == p
    pn = index_pair(restrict_form(H, sk, -lam))
    assert pn == (p[2], p[1], p[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_nullity(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 6))
    u = rng.uniform(-1, 1, N)
    d = variations(EX, rng.uniform(-1, 1, 3), u)
    sk = span_kernel(d.Y, allow_degenerate=True)
    assert sk.rank + sk.dim_K == N
    assert sk.rank + sk.k == 3
    assert sk.L_basis.shape == (3, sk.rank) and sk.Lperp_basis.shape == (3, sk.k)


def test_restriction_consistency():
    rng = np.random.default_rng(4)
    u = random_controls(rng)
    xb = case1_point(u)
    d = variations(EX, xb, u)
    sk = span_kernel(d.Y)
    lam = case1_lambda(xb, u)
    H = d.hessian()
    rf = restrict_form(H, sk, lam)
    for _ in range(100):
        c = rng.standard_normal(sk.dim_K)
        a = sk.K_basis @ c
        assert lam @ H(a) == pytest.approx(c @ rf.matrix @ c, abs=1e-9)


def test_controllable_verdict_has_no_pd_sample():
    rng = np.random.default_rng(5)
    u = random_controls(rng)
    v = verdict(EX, case1_point(u), u, VerdictOptions(seed=2))
    assert all(s.inertia[2] >= v.k for s in v.samples)
    assert not any(s.inertia == (len(s.eigenvalues), 0, 0) for s in v.samples)


def test_case_one_diagonal_entries():
    rng = np.random.default_rng(11)
    for _ in range(10):
        xb = rng.uniform(-1, 1, 3)
        u = random_controls(rng)
        x, z = xb[0], xb[2]
        G = variations(EX, xb, u).hessian().scalar(case1_lambda(xb, u))
        # the diagonal of lam H is (0, 0, A/2, B/2); Z^ii carries no u_i factor
        D = np.diag(G)
        np.testing.assert_allclose(D[:2], 0.0, atol=1e-12)
        assert D[2] == pytest.approx(2 * x - 2 * z - u[0]**2 + 0.5 * u[1]**2, abs=1e-12)
        assert D[3] == pytest.approx(2 * x + u[1]**2 - 0.5 * u[2]**2, abs=1e-12)
