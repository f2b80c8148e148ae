import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from minvine.basis import gram_schmidt_orthonormal, tensor
from minvine.errors import ConvergenceFailure, DomainError
from minvine.grid import (
    DiscretizedCopula, KernelField, UnitGrid, conditional_cdf, d1ad2_project,
    eval_kernel, expectation, inverse_conditional_cdf, log_density,
    marginal_error, read_density_csv,
)

PHI = gram_schmidt_orthonormal(5)
H11 = tensor(PHI[1], PHI[1])
H00 = tensor(PHI[0], PHI[0])


def project(lams, bases, n, **kw):
    return d1ad2_project(eval_kernel(lams, bases, UnitGrid(n)), **kw)


def bisect_inverse(cop, p, u, iters=200):
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if conditional_cdf(cop, mid, u) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------------------- grid

def test_grid_midpoints():
    g = UnitGrid(4)
    assert_allclose(g.midpoints, [0.125, 0.375, 0.625, 0.875])
    assert list(g.cell_index([0.0, 0.25, 0.999, 1.0])) == [0, 1, 3, 3]
    with pytest.raises(ValueError):
        UnitGrid(1)


# ----------------------------------------------------------------- kernel

def test_kernel_zero_lambda_is_ones():
    k = eval_kernel([0.0, 0.0], [H11, tensor(PHI[2], PHI[2])], UnitGrid(5))
    assert_allclose(k.values, 1.0)


def test_kernel_constant_basis_is_constant():
    k = eval_kernel([3.0], [H00], UnitGrid(6))
    assert np.ptp(k.values) == 0.0


def test_kernel_phi1_phi1_analytic():
    g = UnitGrid(4)
    u = g.midpoints
    expected = np.exp(3.0 * np.outer(2 * u - 1, 2 * u - 1))
    k = eval_kernel([1.0], [H11], g)
    # kernel is stored up to the factor exp(-max exponent)
    assert_allclose(k.values * expected.max(), expected, rtol=1e-12)


def test_kernel_length_mismatch():
    with pytest.raises(ValueError):
        eval_kernel([1.0, 2.0], [H11], UnitGrid(4))


# ----------------------------------------------------------------- D1AD2

@pytest.mark.parametrize("n", [2, 7, 50])
def test_constant_kernel_projects_in_one_sweep(n):
    cop = d1ad2_project(KernelField(UnitGrid(n), np.full((n, n), 3.7)))
    assert cop.iterations_used == 1
    assert_allclose(cop.density, 1.0, atol=1e-14)


def test_separable_kernel_projects_to_independence():
    g = UnitGrid(30)
    m = g.midpoints
    cop = d1ad2_project(KernelField(g, np.outer(np.exp(m), 1.0 + m ** 2)))
    assert_allclose(cop.density, 1.0, atol=1e-9)


def test_exp_2uv_marginals():
    g = UnitGrid(100)
    m = g.midpoints
    cop = d1ad2_project(KernelField(g, np.exp(2 * np.outer(m, m))), tol=1e-10)
    assert_allclose(cop.density.mean(axis=1), 1.0, atol=1e-9)
    assert_allclose(cop.density.mean(axis=0), 1.0, atol=1e-9)
    assert cop.density.mean() == pytest.approx(1.0, abs=1e-9)
    assert np.all(cop.density > 0)


def test_exp_2uv_geometric_convergence():
    g = UnitGrid(100)
    m = g.midpoints
    cop = d1ad2_project(KernelField(g, np.exp(2 * np.outer(m, m))), tol=1e-12)
    trace = np.array(cop.error_trace)
    ratios = trace[1:] / trace[:-1]
    assert np.all(ratios[3:] < 0.9)


@given(st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_projection_scale_invariance(c):
    g = UnitGrid(40)
    A = eval_kernel([1.3, -0.4], [H11, tensor(PHI[1], PHI[2])], g)
    base = d1ad2_project(A).density
    scaled = d1ad2_project(KernelField(g, c * A.values)).density
    assert_allclose(scaled, base, rtol=0, atol=1e-12)


def test_symmetric_kernel_gives_symmetric_density():
    cop = project([1.5, 0.7], [H11, tensor(PHI[2], PHI[2])], 60)
    assert_allclose(cop.density, cop.density.T, atol=1e-10)


def test_convergence_failure_carries_best_iterate():
    A = eval_kernel([2.0], [H11], UnitGrid(50))
    with pytest.raises(ConvergenceFailure) as info:
        d1ad2_project(A, tol=1e-14, max_iter=2)
    assert info.value.best is not None
    assert info.value.error == info.value.best.final_marginal_error
    assert info.value.best.iterations_used == 2


@pytest.mark.parametrize("delta", [1e-3, 1e-2])
def test_projection_is_lipschitz_under_perturbation(delta):
    # a copula perturbed by a bounded field re-projects close to itself
    g = project([0.5], [H11], 100).density
    rng = np.random.default_rng(11)
    noise = rng.uniform(-1.0, 1.0, g.shape)
    noise *= delta / np.max(np.abs(noise))
    back = d1ad2_project(KernelField(UnitGrid(100), g + noise)).density
    assert np.max(np.abs(back - g)) < 20 * delta


# ----------------------------------------------------------- expectation

def test_independence_expectations():
    cop = DiscretizedCopula.independence(200)
    assert abs(expectation(cop, H11)) < 1e-12
    assert expectation(cop, H00) == 1.0


def test_positive_lambda_gives_positive_expectation_grid_stable():
    e200 = expectation(project([0.8], [H11], 200), H11)
    e400 = expectation(project([0.8], [H11], 400), H11)
    assert e200 > 0
    assert abs(e200 - e400) < 1e-3


# ----------------------------------------------------------- log density

def test_log_density_independence():
    cop = DiscretizedCopula.independence(10)
    assert_allclose(log_density(cop, np.array([0.0, 0.3, 1.0]), np.array([1.0, 0.9, 0.0])), 0.0)


def test_log_density_cell_lookup():
    cop = DiscretizedCopula.from_density([[1.5, 0.5], [0.5, 1.5]])
    assert log_density(cop, 0.1, 0.1) == pytest.approx(math.log(1.5))
    assert log_density(cop, 0.1, 0.9) == pytest.approx(math.log(0.5))


def test_log_density_grid_refinement():
    a = log_density(project([0.5], [H11], 200), 0.3, 0.7)
    b = log_density(project([0.5], [H11], 400), 0.3, 0.7)
    assert abs(a - b) < 0.02


def test_log_density_zero_cell_is_minus_inf():
    cop = DiscretizedCopula.from_density([[2.0, 0.0], [0.0, 2.0]])
    assert log_density(cop, 0.1, 0.9) == -np.inf


def test_log_density_domain():
    with pytest.raises(DomainError):
        log_density(DiscretizedCopula.independence(4), 1.2, 0.5)


# -------------------------------------------------------- conditional cdf

def test_conditional_cdf_independence_is_identity():
    cop = DiscretizedCopula.independence(16)
    v = np.linspace(0, 1, 33)
    for u in (0.0, 0.4, 1.0):
        assert_allclose(conditional_cdf(cop, v, u), v, atol=1e-14)
        assert_allclose(inverse_conditional_cdf(cop, v, u), v, atol=1e-14)


def test_conditional_cdf_endpoints():
    cop = project([1.7, -0.6], [H11, tensor(PHI[1], PHI[2])], 50)
    for u in np.linspace(0, 1, 11):
        assert conditional_cdf(cop, 0.0, u) == 0.0
        assert conditional_cdf(cop, 1.0, u) == 1.0
        assert inverse_conditional_cdf(cop, 0.0, u) == 0.0
        assert inverse_conditional_cdf(cop, 1.0, u) == 1.0


def test_conditional_cdf_monotone():
    cop = project([2.0], [H11], 40)
    v = np.linspace(0, 1, 401)
    for u in (0.05, 0.5, 0.95):
        assert np.all(np.diff(conditional_cdf(cop, v, u)) >= 0)


def test_conditional_cdf_round_trip_lattice():
    cop = project([1.2, 0.4], [H11, tensor(PHI[2], PHI[1])], 60)
    lattice = np.linspace(0, 1, 21)
    U, V = np.meshgrid(lattice, lattice, indexing="ij")
    p = conditional_cdf(cop, V, U)
    assert np.max(np.abs(inverse_conditional_cdf(cop, p, U) - V)) < 1e-9
    # inverse agrees with an independent bisection on a subset
    for u, v in [(0.1, 0.35), (0.55, 0.9), (0.95, 0.05)]:
        q = conditional_cdf(cop, v, u)
        assert inverse_conditional_cdf(cop, q, u) == pytest.approx(bisect_inverse(cop, q, u), abs=1e-9)


def test_transpose_conditions_on_second_coordinate():
    cop = DiscretizedCopula.from_density([[1.5, 0.5], [0.5, 1.5]])
    # P(U <= 0.5 | V in first cell) = 1.5 / 2
    assert conditional_cdf(cop.transpose(), 0.5, 0.1) == pytest.approx(0.75)


# ---------------------------------------------------------------- export

def test_density_csv_round_trip(tmp_path):
    cop = project([0.9], [H11], 8)
    path = tmp_path / "density.csv"
    cop.write_csv(path)
    first = path.read_text().splitlines()[0]
    assert first == "# minvine density n=8"
    back = read_density_csv(path)
    assert np.array_equal(back.density, cop.density)
    assert marginal_error(back.density) < 1e-10
