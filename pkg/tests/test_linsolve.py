import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from vesselflow.linsolve import (CrossSectionOperator, MildlyNonlinearSystem, NonConvergence, SparseOperator,
                                 TridiagonalOperator, cg_solve, newton_mildly_nonlinear,
                                 perturbative_cross_section_solve, thomas_solve)
from vesselflow.verify import random_cross_section, random_spd_banded, run_verify


def test_thomas_identity_and_2x2():
    b = np.arange(5.0)
    assert np.array_equal(thomas_solve(np.zeros(5), np.ones(5), np.zeros(5), b), b)
    x = thomas_solve(np.array([0.0, 1.0]), np.array([2.0, 2.0]), np.array([1.0, 0.0]), np.array([3.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-15)


def test_thomas_random_spd(rng):
    n = 50
    off = rng.uniform(-1, 1, n - 1)
    d = np.abs(np.concatenate([off, [0]])) + np.abs(np.concatenate([[0], off])) + rng.uniform(0.1, 1, n)
    A = np.diag(d) + np.diag(off, 1) + np.diag(off, -1)
    b = rng.normal(size=n)
    x = thomas_solve(np.concatenate([[0], off]), d, np.concatenate([off, [0]]), b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_cg_trivial_cases():
    A = SparseOperator(sp.identity(7))
    out = cg_solve(A, np.zeros(7))
    assert out.iterations == 0 and np.all(out.x == 0)
    b = np.arange(1.0, 8.0)
    out = cg_solve(A, b)
    assert out.iterations == 1 and np.allclose(out.x, b)


def test_cg_penta_matches_dense(rng):
    A = random_spd_banded(rng, 200, 2)
    b = rng.normal(size=200)
    x = cg_solve(SparseOperator(A), b, tol=1e-14).x
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-10 * np.linalg.norm(x)


def test_cg_raises_on_iteration_cap(rng):
    A = random_spd_banded(rng, 100, 2)
    with pytest.raises(NonConvergence):
        cg_solve(SparseOperator(A), rng.normal(size=100), tol=1e-14, maxiter=2)


def test_tridiagonal_operator_is_symmetric(rng):
    T = TridiagonalOperator(rng.uniform(2, 3, 9), rng.uniform(0, 1, 9))
    x, y = rng.normal(size=9), rng.normal(size=9)
    assert np.isclose(x @ T.apply(y), y @ T.apply(x), rtol=1e-13)


def test_perturbative_axisymmetric_needs_no_cg(rng):
    op = random_cross_section(rng, 2, 8, 6)
    # make the system and rhs independent of the angle
    for a in (op.diag, op.rad, op.ang):
        a[:] = a[:, :, :1]
    b = np.repeat(rng.normal(size=(2, 8, 1)), 6, axis=2)
    x, its = perturbative_cross_section_solve(op, b)
    assert its == 0
    assert np.allclose(op.apply(x), b, atol=1e-12)


def test_perturbative_diagonal_exact(rng):
    d = rng.uniform(1, 2, (1, 5, 7))
    op = CrossSectionOperator(d, np.zeros_like(d), np.zeros_like(d))
    b = rng.normal(size=d.shape)
    x, its = perturbative_cross_section_solve(op, b)
    assert its == 0 and np.allclose(x, b / d, rtol=1e-15)


@given(st.integers(0, 10_000))
def test_perturbative_matches_plain_cg(seed):
    rng = np.random.default_rng(seed)
    op = random_cross_section(rng, 2, int(rng.integers(2, 9)), int(rng.integers(2, 12)))
    b = rng.normal(size=op.diag.shape)
    x, _ = perturbative_cross_section_solve(op, b, tol=1e-14)
    ref = cg_solve(op, b, tol=1e-14, batched=True).x
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_newton_linear_volume_one_iteration():
    T = TridiagonalOperator(np.ones(4), np.zeros(4))
    b = np.array([1.0, -2.0, 3.0, 0.5])
    sys_ = MildlyNonlinearSystem(lambda p: np.zeros_like(p), lambda p: np.zeros_like(p), T, b)
    res = newton_mildly_nonlinear(sys_, np.zeros(4))
    assert res.iterations == 1 and np.allclose(res.p, b, atol=1e-14)


def test_newton_scalar_laplace_volume():
    dx, R0, beta, t = 0.01, 0.025, 2500.0, 1e-6
    d = np.pi * 0.01 * 0.026**2 + 2.5e-6
    T = TridiagonalOperator(np.array([t]), np.zeros(1))
    sys_ = MildlyNonlinearSystem(lambda p: np.pi * dx * (R0 + p / beta) ** 2,
                                 lambda p: 2 * np.pi * dx * (R0 + p / beta) / beta, T, np.array([d]))
    res = newton_mildly_nonlinear(sys_, np.zeros(1), tol=1e-14)
    assert np.isclose(res.p[0], 2.5, rtol=1e-10)
    assert all(b <= a for a, b in zip(res.residuals, res.residuals[1:]))


def test_newton_rigid_chain_matches_linear_solve(rng):
    n, dx, R0, beta = 10, 0.1, 0.025, 1e12
    off = rng.uniform(1e-6, 2e-6, n)
    off[-1] = 0
    diag = np.concatenate([off[:1], off[:-2] + off[1:-1], off[-2:-1]]) + 1e-6
    T = TridiagonalOperator(diag, off)
    c = np.pi * dx
    b = c * R0**2 + rng.uniform(-1e-9, 1e-9, n)
    sys_ = MildlyNonlinearSystem(lambda p: c * (R0 + p / beta) ** 2, lambda p: 2 * c * (R0 + p / beta) / beta, T, b)
    res = newton_mildly_nonlinear(sys_, np.zeros(n), tol=1e-15)
    # linearised: (T + 2 c R0 / beta) p = b - c R0^2
    lin = cg_solve(SparseOperator(sp.diags([diag + 2 * c * R0 / beta, -off[:-1], -off[:-1]], [0, 1, -1])),
                   b - c * R0**2, tol=1e-15).x
    assert np.linalg.norm(res.p - lin) <= 1e-10 * np.linalg.norm(lin)


def test_verify_suite_passes():
    results = run_verify(seed=7)
    assert [r.name for r in results] == ["cg_vs_dense", "perturbative_vs_cg", "newton_vs_bisection",
                                         "cell_volumes", "mathieu_norm"]
    for r in results:
        assert r.passed, r.line()
