"""Ball solver: pinned geometry, oracle agreement, KKT certificates, gradients."""

import time

import numpy as np
import pytest

import fsocc.autodiff as ad
from fsocc.autodiff import Tensor, apply_primitive, grad_check
from fsocc.errors import ContractError, DifferentiationError, NumericError
from fsocc.svdd import (
    KernelMatrix,
    build_kernel,
    decide,
    meb_oracle,
    qp_backward,
    solve_dual,
    solve_svdd,
    svdd_alpha,
)


def test_two_point_ball():
    sol = solve_svdd(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert sol.alpha == pytest.approx([0.5, 0.5], abs=1e-9)
    assert sol.center == pytest.approx([1.0, 0.0], abs=1e-9)
    assert sol.radius == pytest.approx(1.0, abs=1e-6)


def test_collinear_interior_point_gets_zero_weight():
    sol = solve_svdd(np.array([[0.0], [1.0], [2.0]]), lam=0.0)
    assert np.array_equal(sol.alpha, [0.5, 0.0, 0.5])
    assert sol.center == pytest.approx([1.0], abs=0.0)
    assert sol.radius == pytest.approx(1.0, abs=0.0)


def test_collinear_dual_multipliers_on_raw_kernel():
    # raw (uncentered) kernel of z = 0, 1, 2: the solved multipliers are exact
    kernel = build_kernel(np.array([[0.0], [1.0], [2.0]]), lam=0.0)
    sol = solve_dual(kernel)
    assert np.array_equal(sol.alpha, [0.5, 0.0, 0.5])
    assert sol.nu == 0.0
    mu = 2.0 * kernel.entries @ sol.alpha - np.diag(kernel.entries) + sol.nu
    assert mu == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)
    assert sol.kkt_residual <= 1e-8


def test_equilateral_triangle_uniform_weights():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    sol = solve_svdd(pts, lam=0.0)
    assert sol.alpha == pytest.approx([1 / 3, 1 / 3, 1 / 3], abs=1e-9)
    assert sol.radius == pytest.approx(1 / np.sqrt(3), abs=1e-9)


def test_single_point_ball():
    sol = solve_svdd(np.array([[3.0, -1.0]]))
    assert sol.alpha == pytest.approx([1.0], abs=0.0)
    assert sol.center == pytest.approx([3.0, -1.0], abs=0.0)
    assert sol.radius == pytest.approx(0.0, abs=1e-8)


def test_identical_points_uniform_alpha():
    sol = solve_svdd(np.zeros((4, 3)), lam=0.0)
    assert sol.alpha == pytest.approx([0.25] * 4, abs=1e-12)
    assert sol.radius == pytest.approx(0.0, abs=1e-12)


def test_meb_oracle_fixtures():
    center, radius = meb_oracle(np.array([[2.0, 5.0]]))
    assert np.array_equal(center, [2.0, 5.0]) and radius == 0.0

    center, radius = meb_oracle(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.5]]))
    assert center == pytest.approx([1.0, 0.0], abs=1e-9)
    assert radius == pytest.approx(1.0, abs=1e-9)

    square = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    center, radius = meb_oracle(square)
    assert center == pytest.approx([0.5, 0.5], abs=1e-9)
    assert radius == pytest.approx(np.sqrt(2) / 2, abs=1e-9)


def test_meb_oracle_rejects_large_n():
    with pytest.raises(ContractError):
        meb_oracle(np.zeros((11, 2)))


def test_primal_dual_agreement_200_instances():
    rng = np.random.default_rng(0)
    start = time.time()
    for _ in range(200):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        pts = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0)
        sol = solve_svdd(pts, lam=1e-9)
        center, radius = meb_oracle(pts)
        assert np.linalg.norm(sol.center - center) <= 1e-5
        assert abs(sol.radius - radius) <= 1e-6
        assert sol.kkt_residual <= 1e-8
    assert time.time() - start < 5.0


def test_complementary_slackness():
    rng = np.random.default_rng(4)
    for _ in range(50):
        pts = rng.standard_normal((int(rng.integers(2, 9)), 3))
        sol = solve_svdd(pts, lam=1e-9)
        support = sol.alpha > 1e-7
        dist = np.linalg.norm(pts[support] - sol.center, axis=1)
        assert np.abs(dist - sol.radius).max() <= 1e-5


def test_dual_objective_beats_uniform():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        pts = rng.standard_normal((n, 4))
        kernel = build_kernel(pts - pts.mean(axis=0), 1e-9)
        sol = solve_dual(kernel)
        d = np.diag(kernel.entries)

        def objective(a):
            return float(a @ kernel.entries @ a - d @ a)

        uniform = np.full(n, 1.0 / n)
        assert objective(sol.alpha) <= objective(uniform) + 1e-12


def test_translation_invariance():
    rng = np.random.default_rng(8)
    pts = rng.standard_normal((6, 3))
    shift = np.array([500.0, -250.0, 1000.0])
    base = solve_svdd(pts)
    moved = solve_svdd(pts + shift)
    assert np.abs(base.alpha - moved.alpha).max() <= 1e-8
    assert np.abs(base.center + shift - moved.center).max() <= 1e-8
    assert abs(base.radius - moved.radius) <= 1e-8


def test_decide_geometry():
    sol = solve_svdd(np.array([[0.0, 0.0], [2.0, 0.0]]))
    inside, dist = decide(sol.center, sol)
    assert inside and dist == 0.0
    inside, dist = decide(np.array([1.0, 0.5]), sol)
    assert inside and dist == pytest.approx(0.5, abs=1e-9)
    inside, dist = decide(np.array([1.0, 2.0]), sol)
    assert not inside and dist == pytest.approx(2.0, abs=1e-6)


def test_decide_rejects_dimension_mismatch():
    sol = solve_svdd(np.array([[0.0, 0.0], [2.0, 0.0]]))
    with pytest.raises(ContractError):
        decide(np.array([1.0, 0.0, 0.0]), sol)


def test_build_kernel_contracts():
    with pytest.raises(ContractError):
        build_kernel(np.zeros((0, 2)))
    with pytest.raises(ContractError):
        build_kernel(np.ones(3))
    with pytest.raises(ContractError):
        build_kernel(np.ones((2, 2)), lam=-1.0)
    with pytest.raises(NumericError):
        build_kernel(np.array([[np.inf, 0.0]]))


def test_qp_backward_zero_gradient_is_zero():
    rng = np.random.default_rng(12)
    z = rng.standard_normal((4, 2))
    kernel = build_kernel(z - z.mean(axis=0))
    sol = solve_dual(kernel)
    assert np.array_equal(qp_backward(kernel, sol, np.zeros(4)), np.zeros((4, 4)))


def test_qp_backward_matches_entrywise_fd():
    # n=2 pinned instance plus larger sizes; perturb one kernel entry at a time
    rng = np.random.default_rng(14)
    for n in (2, 3, 4, 5, 6):
        z = rng.standard_normal((n, 3))
        kernel = build_kernel(z - z.mean(axis=0))
        sol = solve_dual(kernel)
        g = rng.standard_normal(n)
        gk = qp_backward(kernel, sol, g)
        h = 1e-6
        for i in range(n):
            for j in range(n):
                plus = kernel.entries.copy()
                plus[i, j] += h
                minus = kernel.entries.copy()
                minus[i, j] -= h
                fd = g @ (
                    solve_dual(KernelMatrix(plus, kernel.lam, kernel.features)).alpha
                    - solve_dual(KernelMatrix(minus, kernel.lam, kernel.features)).alpha
                ) / (2 * h)
                assert abs(gk[i, j] - fd) / max(1.0, abs(fd)) <= 1e-5


def test_feature_gradient_end_to_end_fd():
    rng = np.random.default_rng(16)
    z = rng.standard_normal((4, 3))
    weights = rng.standard_normal(4)

    def f(t):
        return apply_primitive("sum", ad.mul(svdd_alpha(t), Tensor(weights)))

    assert grad_check(f, z, 1e-6) <= 1e-3


def test_qp_backward_rejects_bad_inputs():
    z = np.random.default_rng(18).standard_normal((3, 2))
    kernel = build_kernel(z - z.mean(axis=0))
    sol = solve_dual(kernel)
    with pytest.raises(ContractError):
        qp_backward(kernel, sol, np.zeros(5))
    with pytest.raises(NumericError):
        qp_backward(kernel, sol, np.array([np.nan, 0.0, 0.0]))


def test_degenerate_active_features_raise_differentiation_error():
    # two coincident support points at lam=0: the reduced KKT system is singular
    z = np.array([[-1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    kernel = build_kernel(z, lam=0.0)
    sol = solve_dual(kernel)
    with pytest.raises(DifferentiationError, match="lambda"):
        qp_backward(kernel, sol, np.array([1.0, -1.0, 0.5]))


def test_svdd_alpha_forward_matches_solver():
    rng = np.random.default_rng(20)
    z = rng.standard_normal((5, 3))
    alpha = svdd_alpha(Tensor(z))
    assert np.array_equal(alpha.data, solve_svdd(z).alpha)


def test_solver_failure_carries_best_iterate():
    from fsocc.errors import SolverError

    # an indefinite hand-built kernel is outside the solver's guarantee
    bad = KernelMatrix(np.array([[0.0, 2.0], [2.0, 0.0]]), 0.0, np.zeros((2, 1)))
    try:
        solve_dual(bad)
    except SolverError as err:
        assert err.alpha is not None
        assert err.residual is not None
    # some indefinite kernels still terminate; reaching here is acceptable
