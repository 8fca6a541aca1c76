import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_probe.fem import (
    DiscreteField,
    ForwardSolver,
    GapOracle,
    SolverError,
    SupportError,
    alessandrini_pairing_check,
    assemble_dtn,
    cell_conductivity,
    gap_polarization,
    gap_quadratic_form,
    read_matrix_csv,
    solve_dirichlet,
    verify_monotonicity,
    weak_solve_functional,
)
from inclusion_probe.geometry import build_domain_mesh
from inclusion_probe.scenario import CoefficientField, ConductivityScenario

from conftest import UNIT_DISK, disk_phantom, gamma_data


@pytest.fixture(scope="module")
def mesh02():
    return build_domain_mesh(UNIT_DISK, 0.02)


@pytest.fixture(scope="module")
def phantom_oracle(phantom_mesh):
    return GapOracle.from_scenario(phantom_mesh, disk_phantom())


def test_linear_data_reproduced_exactly(disk_mesh_coarse):
    m = disk_mesh_coarse
    u = solve_dirichlet(m, 1.0, m.vertices[m.boundary_nodes, 0])
    assert np.max(np.abs(u.values - m.vertices[:, 0])) <= 1e-12


def test_quadratic_harmonic_converges_second_order():
    errs = []
    for h in (0.05, 0.025):
        m = build_domain_mesh(UNIT_DISK, h)
        exact = m.vertices[:, 0] ** 2 - m.vertices[:, 1] ** 2
        u = solve_dirichlet(m, 1.0, exact[m.boundary_nodes])
        errs.append(np.max(np.abs(u.values - exact)))
    assert 2.5 < errs[0] / errs[1] < 6.5


def test_constant_gamma_scales_out(disk_mesh_coarse, rng):
    m = disk_mesh_coarse
    f = rng.standard_normal(len(m.boundary_nodes))
    assert np.allclose(solve_dirichlet(m, 1.0, f).values, solve_dirichlet(m, 2.0, f).values, atol=1e-12)


def test_dirichlet_residual_small(phantom_mesh, rng):
    fs = ForwardSolver(phantom_mesh, disk_phantom())
    u = fs.extend(rng.standard_normal(len(phantom_mesh.boundary_nodes)))
    assert fs.solver.residual(u) <= 1e-10


def test_zero_functional_gives_zero_field(disk_mesh_coarse):
    u = weak_solve_functional(disk_mesh_coarse, 1.0, np.zeros(disk_mesh_coarse.n_nodes))
    assert np.all(u.values == 0.0)


def test_interface_hat_load_is_harmonic_elsewhere(phantom_mesh):
    m = phantom_mesh
    node = int(m.interface_nodes[0])
    load = np.zeros(m.n_nodes)
    load[node] = 1.0
    fs = ForwardSolver(m, disk_phantom())
    u = weak_solve_functional(m, disk_phantom(), load).values
    assert np.all(u[m.boundary_nodes] == 0.0)
    r = fs.K @ u
    interior = np.setdiff1d(m.interior_nodes, [node])
    assert np.max(np.abs(r[interior])) <= 1e-10 * np.max(np.abs(r))


def test_point_source_log_coefficient(mesh02):
    m = mesh02
    node = int(np.argmin(np.linalg.norm(m.vertices, axis=1)))
    load = np.zeros(m.n_nodes)
    load[node] = 1.0
    u = weak_solve_functional(m, 1.0, load).values
    r = np.linalg.norm(m.vertices - m.vertices[node], axis=1)
    sel = (r > 0.1) & (r < 0.5)
    a, _ = np.polyfit(np.log(r[sel]), u[sel], 1)
    assert a == pytest.approx(-1 / (2 * np.pi), rel=0.05)


def test_disk_dtn_spectrum(mesh02):
    ev = assemble_dtn(mesh02, 1.0).spectrum()
    expect = np.array([0] + [k for k in range(1, 9) for _ in range(2)], float)
    assert abs(ev[0]) <= 1e-8
    assert np.allclose(ev[1:17], expect[1:], rtol=0.05)


def test_dtn_invariants(phantom_mesh):
    d = assemble_dtn(phantom_mesh, disk_phantom())
    assert d.asymmetry() <= 1e-12
    assert d.constant_residual() <= 1e-10
    assert np.linalg.eigvalsh(d.L).min() >= -1e-10 * np.abs(d.L).max()


def test_dtn_linear_in_constant_gamma(disk_mesh_coarse):
    L1 = assemble_dtn(disk_mesh_coarse, 1.0).L
    L2 = assemble_dtn(disk_mesh_coarse, 2.0).L
    assert np.abs(L2 - 2 * L1).max() <= 1e-12 * np.abs(L2).max()


def test_dtn_csv_roundtrip(tmp_path, disk_mesh_coarse):
    d = assemble_dtn(disk_mesh_coarse, 1.0)
    d.to_csv(tmp_path / "L.csv")
    hdr, L = read_matrix_csv(tmp_path / "L.csv")
    assert hdr == [str(int(n)) for n in d.nodes]
    assert np.array_equal(L, d.L)


def test_quadratic_form_two_grid_convergence():
    # γ = 1, f = cos θ on the unit circle: ⟨Λf, f⟩ = π
    errs = []
    for h in (0.1, 0.05):
        m = build_domain_mesh(UNIT_DISK, h)
        p = m.vertices[m.boundary_nodes]
        f = p[:, 0] / np.linalg.norm(p, axis=1)
        errs.append(abs(assemble_dtn(m, 1.0).quadratic(f) - np.pi))
    assert errs[0] / errs[1] >= 2.0


def test_null_oracle_vanishes(phantom_mesh, rng):
    sc = ConductivityScenario(UNIT_DISK, CoefficientField.constant(1.0))
    o = GapOracle.from_scenario(phantom_mesh, sc)
    f = gamma_data(phantom_mesh, rng)
    assert abs(gap_quadratic_form(o, f)) <= 1e-12 * (f @ f) * o.scale


def test_gap_nonnegative_for_larger_gamma(phantom_mesh, phantom_oracle, rng):
    F = gamma_data(phantom_mesh, rng, 100)
    vals = np.array([gap_quadratic_form(phantom_oracle, f) for f in F])
    assert np.all(vals >= 0)
    assert gap_quadratic_form(phantom_oracle, 0 * F[0]) == 0.0


def test_polarization(phantom_mesh, phantom_oracle, rng):
    f, g = gamma_data(phantom_mesh, rng, 2)
    q = gap_quadratic_form(phantom_oracle, f)
    assert gap_polarization(phantom_oracle, f, f) == pytest.approx(q, rel=1e-12)
    assert gap_polarization(phantom_oracle, f, -f) == pytest.approx(-q, rel=1e-12)
    direct = f @ (phantom_oracle.L_gamma - phantom_oracle.L_gamma0) @ g
    assert gap_polarization(phantom_oracle, f, g) == pytest.approx(direct, rel=1e-10)


def test_support_violation_rejected(phantom_mesh, phantom_oracle):
    f = np.zeros(len(phantom_mesh.boundary_nodes))
    f[~phantom_oracle.gamma_mask] = 1.0
    with pytest.raises(SupportError):
        phantom_oracle.quadratic(f)


def test_noise_is_seeded_per_query(phantom_mesh, rng, tmp_path):
    sc = disk_phantom()
    a = GapOracle.from_scenario(phantom_mesh, sc, noise=0.01, seed=7, audit_path=tmp_path / "a.csv")
    b = GapOracle.from_scenario(phantom_mesh, sc, noise=0.01, seed=7)
    F = gamma_data(phantom_mesh, rng, 3)
    va = [a.quadratic(f) for f in F]
    vb = [b.quadratic(f) for f in F[::-1]][::-1]
    assert va == vb
    assert a.quadratic(F[0]) == va[0]
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 4


def test_monotonicity_equal_pair_has_zero_slack(phantom_mesh, rng):
    r = verify_monotonicity(phantom_mesh, disk_phantom(), disk_phantom(), rng.standard_normal(len(phantom_mesh.boundary_nodes)))
    assert all(abs(s) <= 1e-12 * r.scale for s in r.slacks.values())


def test_monotonicity_constant_pair_is_sharp(phantom_mesh, rng):
    r = verify_monotonicity(phantom_mesh, 1.0, 3.0, rng.standard_normal(len(phantom_mesh.boundary_nodes)))
    assert r.passed
    assert abs(r.slacks["sharp1"]) <= 1e-9 * r.scale
    assert abs(r.slacks["sharp2"]) <= 1e-9 * r.scale


def test_monotonicity_phantom_sweep(phantom_mesh, rng):
    F = gamma_data(phantom_mesh, rng, 20)
    for f in F:
        assert verify_monotonicity(phantom_mesh, 1.0, disk_phantom(), f).passed


def test_sharpened_bounds_reject_constant_data(disk_mesh_coarse):
    with pytest.raises(ValueError):
        verify_monotonicity(disk_mesh_coarse, 1.0, 2.0, np.ones(len(disk_mesh_coarse.boundary_nodes)))


def test_alessandrini_pairing(phantom_mesh, rng):
    sc = disk_phantom()
    f = rng.standard_normal(len(phantom_mesh.boundary_nodes))
    assert alessandrini_pairing_check(phantom_mesh, sc, f, f).relative <= 1e-9
    c = alessandrini_pairing_check(phantom_mesh, sc, f, np.ones_like(f))
    assert abs(c.boundary_side) <= 1e-10 and abs(c.interior_side) <= 1e-10
    null = ConductivityScenario(UNIT_DISK, CoefficientField.constant(1.0))
    z = alessandrini_pairing_check(phantom_mesh, null, f, f)
    assert z.boundary_side == 0.0 and z.interior_side == 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_alessandrini_pairing_random_pairs(phantom_mesh, seed):
    r = np.random.default_rng(seed)
    n = len(phantom_mesh.boundary_nodes)
    assert alessandrini_pairing_check(phantom_mesh, disk_phantom(), r.standard_normal(n), r.standard_normal(n)).relative <= 1e-9


def test_bad_conductivity_and_field_rejected(disk_mesh_coarse):
    with pytest.raises(SolverError):
        cell_conductivity(disk_mesh_coarse, -1.0)
    with pytest.raises(ValueError):
        DiscreteField(disk_mesh_coarse, np.zeros(3))
    with pytest.raises(ValueError):
        DiscreteField(disk_mesh_coarse, np.full(disk_mesh_coarse.n_nodes, np.nan))
