"""P1 Galerkin forward solver, discrete Dirichlet-to-Neumann maps and the gap oracle.

Conductivities are sampled once per cell at the centroid.  Every operator
here is built from the energy form ``a(u, v) = ∫ γ ∇u·∇v`` so that the
discrete DtN quadratic form equals the Dirichlet energy of the discrete
harmonic extension, which keeps the monotonicity and interior-integral
identities exact at the Galerkin level.
"""

from __future__ import annotations

import csv
import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh2D
from .scenario import CoefficientField, ConductivityScenario, eval_conductivity


class SolverError(RuntimeError):
    pass


class SupportError(ValueError):
    """Boundary data with nonzero values outside the accessible arc."""


# ----------------------------------------------------------------------------
# coefficients and assembly


def cell_conductivity(mesh: Mesh2D, gamma) -> np.ndarray:
    """Per-cell conductivity values sampled at centroids.

    ``gamma`` may be a scalar, a per-cell array, a :class:`CoefficientField`,
    a :class:`ConductivityScenario` or any vectorised callable of points.
    """
    if isinstance(gamma, ConductivityScenario):
        vals = eval_conductivity(gamma, mesh.centroids)
    elif isinstance(gamma, (int, float, np.floating)):
        vals = np.full(mesh.n_cells, float(gamma))
    elif isinstance(gamma, np.ndarray):
        vals = np.asarray(gamma, float)
        if vals.shape != (mesh.n_cells,):
            raise ValueError(f"per-cell conductivity must have shape ({mesh.n_cells},)")
    elif callable(gamma):
        vals = np.asarray(gamma(mesh.centroids), float)
    else:
        raise TypeError(f"cannot interpret conductivity {gamma!r}")
    if not np.all(np.isfinite(vals)):
        raise SolverError("conductivity is not finite on every cell")
    if np.min(vals) <= 0:
        k = int(np.argmin(vals))
        c = mesh.centroids[k]
        raise SolverError(f"conductivity must be positive; got {vals[k]:.4g} at ({c[0]:.4g}, {c[1]:.4g})")
    return vals


def assemble_stiffness(mesh: Mesh2D, cell_gamma: np.ndarray, cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness matrix of ``∫ γ ∇φ_i·∇φ_j`` over all cells, or over the masked ``cells``."""
    G = mesh.basis_gradients
    w = cell_gamma * mesh.areas
    if cells is not None:
        w = np.where(cells, w, 0.0)
    local = np.einsum("m,mid,mjd->mij", w, G, G)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    return K


def cell_gradients(mesh: Mesh2D, u: np.ndarray) -> np.ndarray:
    """Constant gradient of the P1 interpolant of ``u`` on every cell, shape (M, 2)."""
    return np.einsum("mk,mkd->md", np.asarray(u)[mesh.triangles], mesh.basis_gradients)


def energy(mesh: Mesh2D, cell_weight: np.ndarray, u: np.ndarray, v: np.ndarray | None = None) -> float:
    """``∫ w ∇u·∇v`` with piecewise-constant weight ``w``."""
    gu = cell_gradients(mesh, u)
    gv = gu if v is None else cell_gradients(mesh, v)
    return float(np.sum(cell_weight * mesh.areas * np.einsum("md,md->m", gu, gv)))


def boundary_mass_matrix(mesh: Mesh2D, nodes: np.ndarray | None = None, edges: np.ndarray | None = None) -> np.ndarray:
    """Consistent P1 mass matrix on a boundary loop, ordered like ``nodes``."""
    nodes = mesh.boundary_nodes if nodes is None else np.asarray(nodes)
    edges = mesh.boundary_edges if edges is None else edges
    pos = {int(n): k for k, n in enumerate(nodes)}
    M = np.zeros((len(nodes), len(nodes)))
    for a, b in edges:
        ia, ib = pos[int(a)], pos[int(b)]
        L = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
        M[np.ix_([ia, ib], [ia, ib])] += (L / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
    return M


def boundary_laplace_matrix(mesh: Mesh2D, nodes: np.ndarray | None = None, edges: np.ndarray | None = None) -> np.ndarray:
    """P1 stiffness of the tangential derivative along a boundary loop."""
    nodes = mesh.boundary_nodes if nodes is None else np.asarray(nodes)
    edges = mesh.boundary_edges if edges is None else edges
    pos = {int(n): k for k, n in enumerate(nodes)}
    S = np.zeros((len(nodes), len(nodes)))
    for a, b in edges:
        ia, ib = pos[int(a)], pos[int(b)]
        L = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
        S[np.ix_([ia, ib], [ia, ib])] += (1.0 / L) * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return S


# ----------------------------------------------------------------------------
# constrained solves


class ConstrainedSolver:
    """Factorised ``K`` restricted to the free nodes, with prescribed values on ``fixed``.

    ``active`` (default: all nodes) limits the problem to a node subset, used
    for sub-domain problems assembled on a cell mask.
    """

    def __init__(self, K: sp.spmatrix, fixed: np.ndarray, active: np.ndarray | None = None):
        n = K.shape[0]
        act = np.ones(n, bool) if active is None else np.zeros(n, bool)
        if active is not None:
            act[np.asarray(active)] = True
        is_fixed = np.zeros(n, bool)
        is_fixed[np.asarray(fixed)] = True
        if np.any(is_fixed & ~act):
            raise SolverError("fixed nodes must be active")
        self.n = n
        self.fixed = np.asarray(fixed, int)
        self.free = np.flatnonzero(act & ~is_fixed)
        self.K = K.tocsr()
        self.K_ff = self.K[self.free][:, self.free].tocsc()
        self.K_fF = self.K[self.free][:, self.fixed].tocsc()
        self._lu = None
        self._lock = threading.Lock()
        if len(self.free):
            try:
                self._lu = spla.splu(self.K_ff, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError:
                self._lu = None  # singular factor; fall back to CG in _solve

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        if len(self.free) == 0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            x = self._lu.solve(np.asarray(rhs, float))
            if np.all(np.isfinite(x)):
                return x
        rhs2 = rhs.reshape(len(self.free), -1)
        cols = []
        for k in range(rhs2.shape[1]):
            x, info = spla.cg(self.K_ff, rhs2[:, k], rtol=1e-12, maxiter=20 * len(self.free))
            if info != 0:
                raise SolverError("iterative fallback did not converge; system is not SPD")
            cols.append(x)
        return np.column_stack(cols).reshape(rhs.shape)

    def solve(self, fixed_values=None, load=None) -> np.ndarray:
        """Full nodal vector(s) with ``u[fixed] = fixed_values`` and ``(K u)[free] = load[free]``.

        Both arguments may carry a trailing column axis for many right-hand sides.
        """
        if fixed_values is None and load is None:
            raise ValueError("nothing to solve")
        ncol = None
        if fixed_values is not None:
            fixed_values = np.asarray(fixed_values, float)
            ncol = fixed_values.shape[1:] if fixed_values.ndim > 1 else ()
        if load is not None:
            load = np.asarray(load, float)
            ncol = load.shape[1:] if load.ndim > 1 else ()
        rhs = np.zeros((len(self.free),) + ncol)
        if load is not None:
            rhs += load[self.free]
        if fixed_values is not None:
            rhs -= self.K_fF @ fixed_values
        u = np.zeros((self.n,) + ncol)
        if fixed_values is not None:
            u[self.fixed] = fixed_values
        u[self.free] = self._solve(rhs)
        return u

    def residual(self, u: np.ndarray, load=None) -> float:
        r = self.K[self.free] @ u
        if load is not None:
            r = r - np.asarray(load)[self.free]
        scale = max(float(np.abs(self.K_ff).max()) * float(np.max(np.abs(u))), 1e-300)
        return float(np.max(np.abs(r)) / scale)

    def schur(self) -> np.ndarray:
        """Dense ``K_FF − K_Ff K_ff⁻¹ K_fF`` on the fixed nodes."""
        K_FF = self.K[self.fixed][:, self.fixed].toarray()
        if len(self.free) == 0:
            return K_FF
        X = self._solve(self.K_fF.toarray())
        S = K_FF - self.K_fF.T @ X
        return 0.5 * (S + S.T)


@dataclass
class DiscreteField:
    mesh: Mesh2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("field needs one value per vertex")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")

    def gradients(self) -> np.ndarray:
        return cell_gradients(self.mesh, self.values)


class ForwardSolver:
    """γ-problem on a mesh with one factorisation reused for every solve."""

    def __init__(self, mesh: Mesh2D, gamma):
        self.mesh = mesh
        self.cell_gamma = cell_conductivity(mesh, gamma)
        self.K = assemble_stiffness(mesh, self.cell_gamma)
        self.solver = ConstrainedSolver(self.K, mesh.boundary_nodes)

    def extend(self, f: np.ndarray) -> np.ndarray:
        """Discrete γ-harmonic extension of boundary data given in loop order."""
        return self.solver.solve(fixed_values=f)

    def solve_load(self, load: np.ndarray) -> np.ndarray:
        """Zero outer data, right-hand side given as a nodal load vector."""
        return self.solver.solve(fixed_values=np.zeros((len(self.mesh.boundary_nodes),) + np.shape(load)[1:]), load=load)

    def dtn(self) -> np.ndarray:
        return self.solver.schur()


def solve_dirichlet(mesh: Mesh2D, gamma, f) -> DiscreteField:
    """Discrete solution of ∇·γ∇u = 0 with ``u = f`` on the boundary nodes (loop order)."""
    fs = ForwardSolver(mesh, gamma)
    f = np.asarray(f, float)
    if f.shape != (len(mesh.boundary_nodes),):
        raise ValueError("boundary data must have one value per boundary node")
    return DiscreteField(mesh, fs.extend(f))


def weak_solve_functional(mesh: Mesh2D, gamma, load) -> DiscreteField:
    """Solution vanishing on ∂Ω with ``a(u, φ_i) = load[i]`` for interior hats φ_i."""
    load = np.asarray(load, float)
    if load.shape != (mesh.n_nodes,) or not np.all(np.isfinite(load)):
        raise ValueError("load must be a finite nodal vector")
    return DiscreteField(mesh, ForwardSolver(mesh, gamma).solve_load(load))


# ----------------------------------------------------------------------------
# Dirichlet-to-Neumann maps


@dataclass
class DiscreteDtn:
    """``L[i, j] = a(u_i, u_j)`` for discrete harmonic extensions of boundary hats."""

    nodes: np.ndarray
    L: np.ndarray
    M: np.ndarray

    def quadratic(self, f: np.ndarray) -> float:
        return float(f @ self.L @ f)

    def asymmetry(self) -> float:
        return float(np.abs(self.L - self.L.T).max() / np.abs(self.L).max())

    def constant_residual(self) -> float:
        return float(np.linalg.norm(self.L @ np.ones(len(self.nodes))) / np.linalg.norm(self.L, 2))

    def spectrum(self) -> np.ndarray:
        """Generalised eigenvalues of ``L v = λ M v``."""
        from scipy.linalg import eigh

        return eigh(self.L, self.M, eigvals_only=True)

    def to_csv(self, path) -> None:
        write_matrix_csv(path, self.L, [str(int(n)) for n in self.nodes])


def assemble_dtn(mesh: Mesh2D, gamma, solver: ForwardSolver | None = None) -> DiscreteDtn:
    fs = solver or ForwardSolver(mesh, gamma)
    L = fs.dtn()
    return DiscreteDtn(mesh.boundary_nodes.copy(), L, boundary_mass_matrix(mesh))


def write_matrix_csv(path, A: np.ndarray, header: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(A):
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


# ----------------------------------------------------------------------------
# measurement oracle


@dataclass
class GapOracle:
    """Answers ``Q(f) = fᵀ(L_γ − L_γ₀)f`` for boundary data supported on Γ.

    Data vectors are indexed like ``mesh.boundary_nodes``.  The optional
    noise is zero-mean relative Gaussian, drawn from a generator seeded by
    ``seed`` and a digest of the query, so repeated queries agree.
    """

    L_gamma: np.ndarray
    L_gamma0: np.ndarray
    gamma_mask: np.ndarray
    noise: float = 0.0
    seed: int = 0
    audit_path: str | Path | None = None
    _lock: threading.Lock = field(init=False, repr=False, default_factory=threading.Lock)
    n_queries: int = field(init=False, default=0)

    def __post_init__(self):
        self.gamma_mask = np.asarray(self.gamma_mask, bool)
        self._gap = self.L_gamma - self.L_gamma0
        self._gap = 0.5 * (self._gap + self._gap.T)
        self.scale = float(np.abs(self.L_gamma0).max())

    @classmethod
    def from_scenario(cls, mesh: Mesh2D, scenario: ConductivityScenario, **kw) -> "GapOracle":
        Lg = assemble_dtn(mesh, scenario).L
        L0 = Lg if scenario.is_null else assemble_dtn(mesh, scenario.gamma0).L
        mask = np.isin(mesh.boundary_nodes, mesh.gamma_nodes)
        return cls(Lg, L0, mask, **kw)

    def _check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, float)
        if f.shape != self.gamma_mask.shape:
            raise ValueError(f"boundary data must have length {len(self.gamma_mask)}")
        outside = np.abs(f[~self.gamma_mask])
        if outside.size and outside.max() > 1e-14:
            raise SupportError(f"boundary data is nonzero outside the accessible arc (max {outside.max():.3g})")
        return f

    def quadratic(self, f) -> float:
        f = self._check(f)
        val = float(f @ self._gap @ f)
        digest = hashlib.sha1(np.ascontiguousarray(f).tobytes()).hexdigest()[:16]
        if self.noise:
            # seeded by the query itself so results do not depend on query order
            rng = np.random.default_rng([self.seed, int(digest, 16)])
            val *= 1.0 + self.noise * float(rng.standard_normal())
        with self._lock:
            self.n_queries += 1
            if self.audit_path is not None:
                with open(self.audit_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([digest, f"{val:.17g}"])
        return val


def gap_quadratic_form(oracle: GapOracle, f) -> float:
    return oracle.quadratic(f)


def gap_polarization(oracle: GapOracle, f, g) -> float:
    """Bilinear gap pairing recovered from two quadratic queries."""
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    return 0.25 * (oracle.quadratic(f + g) - oracle.quadratic(f - g))


# ----------------------------------------------------------------------------
# identity and inequality checks


@dataclass
class MonotonicityReport:
    """Slacks (right side minus left side) of the six energy inequalities."""

    values: dict
    slacks: dict
    scale: float
    tol: float

    @property
    def violations(self) -> list[str]:
        return [k for k, s in self.slacks.items() if s < -self.tol]

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_monotonicity(mesh: Mesh2D, gamma1, gamma2, f, sharpened: bool = True, rtol: float = 1e-9) -> MonotonicityReport:
    """Evaluate the two-sided energy bounds between conductivities γ₁ and γ₂.

    With ``v_j`` the γ_j-extension of ``f`` and ``Q = ⟨(Λ₂ − Λ₁)f, f⟩``:

    * ``∫(γ₁⁻¹ − γ₂⁻¹)γ₁²|∇v₁|² ≤ Q ≤ ∫(γ₂ − γ₁)|∇v₁|²``
    * ``∫(γ₂⁻¹ − γ₁⁻¹)γ₂²|∇v₂|² ≤ −Q ≤ ∫(γ₁ − γ₂)|∇v₂|²``
    * sharpened lower bounds scaled by the energy ratio ``a₁/a₂`` and ``a₂/a₁``.
    """
    g1 = cell_conductivity(mesh, gamma1)
    g2 = cell_conductivity(mesh, gamma2)
    f = np.asarray(f, float)
    v1 = ForwardSolver(mesh, g1).extend(f)
    v2 = ForwardSolver(mesh, g2).extend(f)
    a = mesh.areas
    d1 = np.einsum("md,md->m", cell_gradients(mesh, v1), cell_gradients(mesh, v1))
    d2 = np.einsum("md,md->m", cell_gradients(mesh, v2), cell_gradients(mesh, v2))
    a1 = float(np.sum(g1 * d1 * a))
    a2 = float(np.sum(g2 * d2 * a))
    Q = a2 - a1
    low1 = float(np.sum((1 / g1 - 1 / g2) * g1**2 * d1 * a))
    up1 = float(np.sum((g2 - g1) * d1 * a))
    low2 = float(np.sum((1 / g2 - 1 / g1) * g2**2 * d2 * a))
    up2 = float(np.sum((g1 - g2) * d2 * a))
    vals = {"Q": Q, "a1": a1, "a2": a2, "lower1": low1, "upper1": up1, "lower2": low2, "upper2": up2}
    slacks = {
        "lower1": Q - low1,
        "upper1": up1 - Q,
        "lower2": -Q - low2,
        "upper2": up2 + Q,
    }
    if sharpened:
        if np.ptp(f) <= 1e-12 * max(np.max(np.abs(f)), 1e-300):
            raise ValueError("sharpened bounds need nonconstant boundary data")
        slacks["sharp1"] = (a1 / a2) * Q - low1
        slacks["sharp2"] = (a2 / a1) * (-Q) - low2
    scale = max(abs(v) for v in vals.values())
    return MonotonicityReport(vals, slacks, scale, rtol * scale)


@dataclass
class PairingCheck:
    boundary_side: float
    interior_side: float
    residual: float
    relative: float


def alessandrini_pairing_check(mesh: Mesh2D, scenario: ConductivityScenario, f, g, solvers=None) -> PairingCheck:
    """Compare ``⟨(Λ_γ − Λ_γ₀)f, g⟩`` with ``∫(γ − γ₀)∇u_γ(f)·∇u_γ₀(g)``."""
    if solvers is None:
        solvers = (ForwardSolver(mesh, scenario), ForwardSolver(mesh, scenario.gamma0))
    fs, fs0 = solvers
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    uf, ug = fs.extend(f), fs.extend(g)
    uf0, ug0 = fs0.extend(f), fs0.extend(g)
    bside = energy(mesh, fs.cell_gamma, uf, ug) - energy(mesh, fs0.cell_gamma, uf0, ug0)
    iside = energy(mesh, fs.cell_gamma - fs0.cell_gamma, uf, ug0)
    res = abs(bside - iside)
    scale = max(energy(mesh, fs.cell_gamma, uf) ** 0.5 * energy(mesh, fs.cell_gamma, ug) ** 0.5, abs(bside), 1e-300)
    return PairingCheck(bside, iside, res, res / scale)


def assemble_mass(mesh: Mesh2D, cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix (optionally over masked cells)."""
    w = mesh.areas / 12.0
    if cells is not None:
        w = np.where(cells, w, 0.0)
    local = w[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def lumped_mass(mesh: Mesh2D, cells: np.ndarray | None = None) -> np.ndarray:
    w = mesh.areas / 3.0
    if cells is not None:
        w = np.where(cells, w, 0.0)
    m = np.zeros(mesh.n_nodes)
    np.add.at(m, mesh.triangles.ravel(), np.repeat(w, 3))
    return m
