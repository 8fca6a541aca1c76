import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_probe.fem import ForwardSolver
from inclusion_probe.geometry import (
    GAMMA_ARC,
    OTHER,
    Mesh2D,
    Needle,
    _in_arc,
    _orient,
    build_domain_mesh,
    exclusion_region,
)
from inclusion_probe.runge import (
    DEFAULT_SCHEDULE,
    RungeBasis,
    RungeError,
    RungeProblem,
    approximate_target,
    runge_for_needle,
)
from inclusion_probe.shapes import Polygon
from inclusion_probe.singular import adapt_to_arc, arc_cutoff, build_corrected_singular

from conftest import UNIT_DISK

SHORT = tuple(10.0 ** -np.arange(1, 9))


def symmetric_mesh(h: float, arc=(-60.0, 60.0)) -> Mesh2D:
    """Mesh of a regular 64-gon that is exactly symmetric under y -> -y."""
    th = np.pi * np.arange(33) / 32
    up = np.column_stack([np.cos(th), np.sin(th)])
    up[[0, 32], 1] = 0.0
    half = build_domain_mesh(Polygon(up), h)
    full = Polygon(np.vstack([up, up[31:0:-1] * [1, -1]]))
    p = half.vertices
    axis = p[:, 1] == 0.0
    mirror_id = np.arange(len(p), 2 * len(p))
    mirror_id[axis] = np.flatnonzero(axis)
    verts = np.vstack([p, p * [1, -1]])
    tri = np.vstack([half.triangles, mirror_id[half.triangles]])
    used = np.unique(tri)
    remap = -np.ones(len(verts), int)
    remap[used] = np.arange(len(used))
    verts, tri = verts[used], remap[tri]
    tri = _orient(verts, tri)
    e = np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    ang = full.boundary_angle(0.5 * (verts[bedges[:, 0]] + verts[bedges[:, 1]]))
    markers = np.where(_in_arc(ang, arc), GAMMA_ARC, OTHER)
    mesh = Mesh2D(verts, tri, bedges, markers, h=h, domain=full)
    mesh.check_invariants()
    return mesh


@pytest.fixture(scope="module")
def half_basis(phantom_mesh):
    return RungeBasis.for_mesh(phantom_mesh, 1.0)


@pytest.fixture(scope="module")
def full_basis(phantom_mesh_full):
    return RungeBasis.for_mesh(phantom_mesh_full, 1.0)


def test_default_schedule():
    assert len(DEFAULT_SCHEDULE) == 10
    assert DEFAULT_SCHEDULE[0] == pytest.approx(0.1) and DEFAULT_SCHEDULE[-1] == pytest.approx(1e-10)
    assert np.all(np.diff(DEFAULT_SCHEDULE) < 0)


def test_problem_validation(half_basis):
    n = half_basis.mesh.n_nodes
    K = np.ones(half_basis.mesh.n_cells, bool)
    with pytest.raises(RungeError):
        RungeProblem.from_field(half_basis, ~K, np.zeros(n))
    with pytest.raises(RungeError):
        RungeProblem.from_field(half_basis, K, np.zeros(n), schedule=(1e-2, 1e-1))
    with pytest.raises(RungeError):
        RungeProblem.from_field(half_basis, K, np.zeros(n), schedule=(1e-1, -1.0))


def test_representable_target_recovered(full_basis, rng):
    m = full_basis.mesh
    g = rng.standard_normal(len(m.boundary_nodes))
    target = full_basis.solver.extend(g)
    K = np.ones(m.n_cells, bool)
    res = approximate_target(RungeProblem.from_field(full_basis, K, target, schedule=(1e-2, 1e-6, 1e-12), rho_mode="absolute"))
    assert res.errors[-1] <= 1e-8 * res.target_norm
    assert np.linalg.norm(res.coefficients[-1] - g) <= 1e-8 * np.linalg.norm(g)


def test_singular_target_errors_decrease(half_basis):
    m = half_basis.mesh
    needle = Needle(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    t = 0.2
    sol = build_corrected_singular(m, 1.0, needle(t), solver=half_basis.solver)
    sol = adapt_to_arc(sol, half_basis.solver, arc_cutoff(m))
    K = exclusion_region(m, needle, t, 0.1, boundary_margin=0.1)
    res = approximate_target(RungeProblem.from_singular(half_basis, K, sol, schedule=DEFAULT_SCHEDULE))
    stable = res.stable_stages
    assert len(stable) >= 3
    e = res.errors[stable]
    assert np.all(np.diff(e) <= 1e-9 * e[:-1] + 1e-13 * res.target_norm)
    assert e[-1] < 0.9 * e[0]


def test_support_invariant(half_basis, rng):
    m = half_basis.mesh
    target = half_basis.solver.extend(rng.standard_normal(len(m.boundary_nodes)))
    K = np.linalg.norm(m.centroids, axis=1) < 0.5
    res = approximate_target(RungeProblem.from_field(half_basis, K, target, schedule=SHORT))
    off = ~np.isin(m.boundary_nodes, m.gamma_nodes)
    assert np.all(res.coefficients[:, off] == 0.0)


def test_reproducible(half_basis):
    needle = Needle(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    a = runge_for_needle(half_basis, 1.0, needle, 0.3, 0.1, schedule=SHORT)[0]
    b = runge_for_needle(half_basis, 1.0, needle, 0.3, 0.1, schedule=SHORT)[0]
    assert np.array_equal(a.coefficients, b.coefficients)
    assert np.array_equal(a.errors, b.errors)


def test_quarter_arc_near_inaccessible_boundary_is_harder():
    m = build_domain_mesh(UNIT_DISK, 0.05, gamma_arc=(-45.0, 45.0))
    basis = RungeBasis.for_mesh(m, 1.0)
    K = np.linalg.norm(m.centroids, axis=1) < 0.95

    def final_rel(x):
        sol = build_corrected_singular(m, 1.0, x, solver=basis.solver)
        cells = K & (np.linalg.norm(m.centroids - x, axis=1) > 0.1)
        r = approximate_target(RungeProblem.from_singular(basis, cells, sol, schedule=DEFAULT_SCHEDULE))
        return r.relative_errors[r.stable_stages[-1]]

    near_gamma = final_rel(np.array([0.6, 0.0]))
    near_other = final_rel(np.array([-0.85, 0.0]))
    assert near_other > near_gamma


def test_larger_t_is_harder(half_basis):
    needle = Needle(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    early = runge_for_needle(half_basis, 1.0, needle, 0.2, 0.1, schedule=SHORT)[0]
    late = runge_for_needle(half_basis, 1.0, needle, 0.7, 0.1, schedule=SHORT)[0]
    assert late.relative_errors[-1] > early.relative_errors[-1]


def test_density_superset_arc_never_worse(rng):
    m_small = build_domain_mesh(UNIT_DISK, 0.07, gamma_arc=(-45.0, 45.0))
    big_pos = np.flatnonzero(np.isin(m_small.boundary_nodes, build_domain_mesh(UNIT_DISK, 0.07, gamma_arc=(-90.0, 90.0)).gamma_nodes))
    solver = ForwardSolver(m_small, 1.0)
    small = RungeBasis.for_mesh(m_small, 1.0, solver=solver, smoothing="l2")
    big = RungeBasis(solver, big_pos, smoothing="l2")
    assert set(small.positions) <= set(big.positions)
    sol = build_corrected_singular(m_small, 1.0, [0.0, 0.1], solver=solver)
    K = np.linalg.norm(m_small.centroids - [0.0, 0.1], axis=1) > 0.15
    K &= np.linalg.norm(m_small.centroids, axis=1) < 0.9
    for rho in (1e-1, 1e-4):
        e_small = approximate_target(RungeProblem.from_singular(small, K, sol, schedule=(rho,), rho_mode="absolute")).errors[0]
        e_big = approximate_target(RungeProblem.from_singular(big, K, sol, schedule=(rho,), rho_mode="absolute")).errors[0]
        assert e_big <= e_small * (1 + 1e-12)


def test_mirror_symmetric_needles_give_mirrored_data():
    m = symmetric_mesh(0.08)
    basis = RungeBasis.for_mesh(m, 1.0)
    a, b = np.array([np.cos(np.pi / 8), np.sin(np.pi / 8)]), np.array([np.cos(9 * np.pi / 8), np.sin(9 * np.pi / 8)])
    n1 = Needle(np.array([a, b]))
    n2 = Needle(np.array([a * [1, -1], b * [1, -1]]))
    sched = (1e-1, 1e-2, 1e-3, 1e-4)
    r1 = runge_for_needle(basis, 1.0, n1, 0.3, 0.1, schedule=sched)[0]
    r2 = runge_for_needle(basis, 1.0, n2, 0.3, 0.1, schedule=sched)[0]
    p = m.vertices[m.boundary_nodes]
    lookup = {tuple(np.round(q, 12)): i for i, q in enumerate(p)}
    perm = np.array([lookup[tuple(np.round(q * [1, -1], 12))] for q in p])
    for c1, c2 in zip(r1.coefficients, r2.coefficients):
        assert np.max(np.abs(c1 - c2[perm])) <= 1e-8 * np.max(np.abs(c1))


@settings(max_examples=8, deadline=None)
@given(t=st.floats(0.1, 0.6), delta=st.floats(0.05, 0.2))
def test_errors_monotone_until_breach(half_basis, t, delta):
    needle = Needle(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    r = runge_for_needle(half_basis, 1.0, needle, t, delta)[0]
    e = r.errors[r.stable_stages]
    assert np.all(np.diff(e) <= 1e-9 * e[:-1] + 1e-13 * r.target_norm)
    assert np.all(r.coefficients[:, ~r.gamma_mask] == 0.0)
