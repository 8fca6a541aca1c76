import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_probe.elastic import (
    KernelError,
    LameConstants,
    LameError,
    closed_form_pde_checks,
    completed_squares,
    convergence_order,
    deviator,
    divergence_identity_residual,
    elastic_singular_leading,
    energy_decomposition_residual,
    fd_lame,
    kelvin_matrix,
    lame_of_grad_green_residual,
    laplace_green_grad,
    pointwise_lower_bound_check,
    random_lame,
    run_suite,
    suite_report,
    trace,
    trace_dev_split_residual,
)

E1 = np.array([1.0, 0.0, 0.0])
UNIT = LameConstants(1.0, 1.0)

vec3 = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)
mat3 = st.lists(st.floats(-3, 3), min_size=9, max_size=9).map(lambda v: np.array(v).reshape(3, 3))


@st.composite
def lame_st(draw):
    mu = draw(st.floats(0.05, 10.0))
    lam = draw(st.floats(-2 * mu / 3 + 0.05, 10.0))
    return LameConstants(lam, mu)


def test_lame_validation():
    with pytest.raises(LameError):
        LameConstants(0.0, 0.0)
    with pytest.raises(LameError):
        LameConstants(1.0, -1.0)
    with pytest.raises(LameError):
        LameConstants(-1.0, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        L = random_lame(rng)
        assert L.mu > 0 and 3 * L.lam + 2 * L.mu > 0


def test_kelvin_reference_values():
    K = kelvin_matrix(E1, UNIT)
    assert np.diag(K) == pytest.approx([0.0796, 0.0531, 0.0531], abs=5e-5)
    assert np.abs(K - np.diag(np.diag(K))).max() == 0.0
    with pytest.raises(KernelError):
        kelvin_matrix(np.zeros(3), UNIT)


@settings(max_examples=50, deadline=None)
@given(z=vec3, lame=lame_st())
def test_kelvin_symmetry_and_homogeneity(z, lame):
    if np.linalg.norm(z) < 1e-2:
        return
    K = kelvin_matrix(z, lame)
    assert np.allclose(K, K.T, rtol=0, atol=1e-15 * np.abs(K).max())
    assert np.allclose(kelvin_matrix(-z, lame), K, rtol=1e-14)
    assert np.allclose(kelvin_matrix(2 * z, lame), K / 2, rtol=1e-13)


def test_kelvin_is_fundamental_away_from_pole():
    # ℒ(E₀ b) = 0 for z ≠ 0
    lame = LameConstants(2.0, 0.7)
    z = np.array([0.6, -0.3, 0.5])
    for b in np.eye(3):
        r = fd_lame(lambda y: kelvin_matrix(y, lame) @ b, z, lame, 1e-3)
        assert np.linalg.norm(r) <= 1e-5


def test_divergence_identity_examples():
    assert divergence_identity_residual(E1, E1, UNIT, 1e-4) <= 1e-8
    assert divergence_identity_residual(E1, np.zeros(3), UNIT, 1e-4) == 0.0
    r1 = divergence_identity_residual(E1, E1, UNIT, 2e-3)
    r2 = divergence_identity_residual(E1, E1, UNIT, 1e-3)
    assert 3.5 < r1 / r2 < 4.5
    with pytest.raises(KernelError):
        divergence_identity_residual(E1, E1, UNIT, 0.1)
    with pytest.raises(KernelError):
        divergence_identity_residual(1e-4 * E1, E1, UNIT, 1e-7)


def test_trace_dev_split_examples():
    assert trace_dev_split_residual(np.eye(3), 1.0, 1.0) == 0.0
    A = np.random.default_rng(1).standard_normal((3, 3))
    assert trace_dev_split_residual(A, 2.0, 0.0) <= 1e-12 * trace(A) ** 2 * 2


@settings(max_examples=200, deadline=None)
@given(A=mat3, alpha=st.floats(-5, 5), beta=st.floats(-5, 5))
def test_trace_dev_split_property(A, alpha, beta):
    scale = abs(alpha) * trace(A) ** 2 + 2 * abs(beta) * np.sum(A * A) + 1e-300
    assert trace_dev_split_residual(A, alpha, beta) <= 1e-12 * scale


def test_deviator_is_traceless_and_symmetric():
    A = np.random.default_rng(2).standard_normal((3, 3))
    B = deviator(A)
    assert abs(trace(B)) <= 1e-15
    assert np.array_equal(B, B.T)


def test_energy_decomposition_trivial_cases(rng):
    A = rng.standard_normal((3, 3))
    L1, L2 = LameConstants(1.0, 2.0), LameConstants(3.0, 0.5)
    assert energy_decomposition_residual(A, A, L1, L2) <= 1e-15
    assert energy_decomposition_residual(A, rng.standard_normal((3, 3)), L1, L1) <= 1e-15


@settings(max_examples=200, deadline=None)
@given(A1=mat3, A2=mat3, l1=lame_st(), l2=lame_st())
def test_energy_decomposition_property(A1, A2, l1, l2):
    assert energy_decomposition_residual(A1, A2, l1, l2) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(A1=mat3, A2=mat3, l1=lame_st(), l2=lame_st())
def test_pointwise_lower_bound_property(A1, A2, l1, l2):
    assert pointwise_lower_bound_check(A1, A2, l1, l2) >= -1e-12


def test_lower_bound_equality_case(rng):
    A = rng.standard_normal((3, 3))
    assert abs(float(pointwise_lower_bound_check(A, A, UNIT, UNIT))) <= 1e-15
    # choose A₂ so both completed squares vanish
    L1, L2 = LameConstants(1.0, 2.0), LameConstants(0.5, 3.0)
    A1 = rng.standard_normal((3, 3))
    d2 = L1.bulk3 / L2.bulk3 * trace(A1)
    A2 = (L1.mu / L2.mu) * deviator(A1) + d2 / 3 * np.eye(3)
    s1, s2 = completed_squares(A1, A2, L1, L2)
    assert s1 <= 1e-24 and s2 <= 1e-24
    assert abs(float(pointwise_lower_bound_check(A1, A2, L1, L2))) <= 1e-13
    s1, s2 = completed_squares(A1, A2 + 0.1 * np.eye(3), L1, L2)
    assert s1 > 0


def test_singular_leading_term():
    y, x = np.array([0.3, 0.4, 0.5]), np.zeros(3)
    assert np.array_equal(elastic_singular_leading(y, x, UNIT, np.zeros(3)), laplace_green_grad(y - x))
    g = np.array([0.2, -0.1, 0.4])
    lead = lambda p: elastic_singular_leading(p, x, UNIT, g)
    first = lambda p: laplace_green_grad(p - x)
    second = lambda p: lead(p) - first(p)
    assert first(2 * y) == pytest.approx(first(y) / 4, rel=1e-13)
    assert second(2 * y) == pytest.approx(second(y) / 2, rel=1e-13)
    with pytest.raises(KernelError):
        elastic_singular_leading(x, x, UNIT, g)


def test_lame_of_grad_green_vanishes():
    z = np.array([0.5, 0.5, -0.7])
    assert lame_of_grad_green_residual(z, LameConstants(2.0, 1.5), 1e-3) <= 1e-5
    p = convergence_order(lambda h: lame_of_grad_green_residual(z, LameConstants(2.0, 1.5), h), np.geomspace(5e-3, 5e-4, 5))
    assert abs(p - 2) <= 0.3


def test_closed_form_cases():
    z = np.array([0.0, 0.6, 0.8])
    assert closed_form_pde_checks("a", z, {"grad_mu": np.array([0, 0, 1.0])}, 1e-3) <= 1e-7
    assert closed_form_pde_checks("b", z, {"hess_mu": np.zeros((3, 3)), "mu0": 1.0}, 1e-3) == 0.0
    coeffs = np.random.default_rng(3).standard_normal((3, 10))
    assert closed_form_pde_checks("c", z, {"coeffs": coeffs, "lame": UNIT}, 1e-1) <= 1e-10
    with pytest.raises(KernelError):
        closed_form_pde_checks("d", z, {}, 1e-3)
    with pytest.raises(KernelError):
        closed_form_pde_checks("a", 1e-3 * z, {"grad_mu": np.ones(3)}, 1e-6)


def test_fd_orders_over_a_decade():
    rng = np.random.default_rng(4)
    z = rng.standard_normal(3)
    z /= np.linalg.norm(z)
    steps = np.geomspace(5e-3, 5e-4, 5)
    H = rng.standard_normal((3, 3))
    H = H + H.T
    for fn in (
        lambda h: divergence_identity_residual(z, E1, UNIT, h),
        lambda h: closed_form_pde_checks("a", z, {"grad_mu": E1}, h),
        lambda h: closed_form_pde_checks("b", z, {"hess_mu": H, "mu0": 1.3}, h),
    ):
        assert abs(convergence_order(fn, steps) - 2.0) <= 0.3


def test_suite_passes_and_detects_injected_failure():
    ok = suite_report(run_suite(seed=5, n_draws=300), 5)
    assert ok["passed"]
    bad = suite_report(run_suite(seed=5, n_draws=300, inject_failure=True), 5)
    assert not bad["passed"]
    failing = [c["name"] for c in bad["checks"] if not c["passed"]]
    assert failing == ["trace_dev_split"]
