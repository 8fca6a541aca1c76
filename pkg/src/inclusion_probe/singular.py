"""Singular solutions of the background equation with a point source.

``G_x = G₀(· − x) + ε(·; x)`` where ``G₀(z) = −log|z| / (2π γ₀(x))`` is the
fundamental solution of the operator frozen at the pole and ``ε`` is a
finite element correction vanishing on ∂Ω.  The correction solves

    ∫ γ₀ ∇ε·∇φ = ∫ (γ₀(x) − γ₀(y)) ∇G₀(y − x)·∇φ(y) dy

for all interior hats φ, with γ₀ sampled per cell like the stiffness
matrix.  Cell integrals of ∇G₀ are evaluated exactly through the
divergence theorem, so G_x is discretely γ₀-harmonic away from the pole up
to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import ForwardSolver, assemble_mass, assemble_stiffness, cell_conductivity
from .geometry import Mesh2D


class PoleError(ValueError):
    pass


def fundamental_2d(z, gamma0_at_x: float) -> tuple[np.ndarray, np.ndarray]:
    """Value and gradient of ``−log|z| / (2π γ)`` at offsets ``z``.

    Returns scalars/2-vectors for a single offset, arrays for many.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = z.reshape(-1, 2)
    r2 = np.einsum("ij,ij->i", z, z)
    if np.any(r2 == 0):
        raise PoleError("fundamental solution evaluated at its pole")
    c = 1.0 / (2 * np.pi * gamma0_at_x)
    val = -0.5 * c * np.log(r2)
    grad = -c * z / r2[:, None]
    if single:
        return val[0], grad[0]
    return val, grad


def _log_segment_integral(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Exact ``∫_a^b log|y − x| ds`` along each segment (arrays of shape (n, 2))."""
    d = b - a
    L = np.linalg.norm(d, axis=1)
    u = d / L[:, None]
    w = a - x
    t0 = np.einsum("ij,ij->i", w, u)
    c = np.abs(w[:, 0] * u[:, 1] - w[:, 1] * u[:, 0])
    t1 = t0 + L

    def F(t):
        # antiderivative of ½ log(t² + c²)
        r2 = t * t + c * c
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
            at = np.where(c > 0, c * np.arctan2(t, np.where(c > 0, c, 1.0)), 0.0)
        return 0.5 * t * lg - t + at

    return F(t1) - F(t0)


def cell_integrated_gradient(mesh: Mesh2D, x, gamma0_at_x: float, cells: np.ndarray | None = None) -> np.ndarray:
    """``∫_T ∇G₀(y − x) dy`` for every (or every selected) cell, shape (m, 2).

    Uses ``∫_T ∇G₀ = ∮_{∂T} G₀ ν ds`` with exact edge integrals of the
    logarithm; valid also for the cell containing the pole since ∇G₀ is
    integrable.
    """
    x = np.asarray(x, float)
    tri = mesh.triangles if cells is None else mesh.triangles[cells]
    p = mesh.vertices[tri]
    out = np.zeros((len(tri), 2))
    c = -1.0 / (2 * np.pi * gamma0_at_x)
    for k in range(3):
        a, b = p[:, k], p[:, (k + 1) % 3]
        e = b - a
        # triangles are counter-clockwise, so the outward normal is (e_y, -e_x)/|e|
        nu_len = np.column_stack([e[:, 1], -e[:, 0]])  # = ν |e|
        I = _log_segment_integral(a, b, x) / np.linalg.norm(e, axis=1)
        out += c * I[:, None] * nu_len
    return out


@dataclass
class SingularSolution:
    """Point-source solution ``G₀(· − x) + ε`` on a mesh."""

    mesh: Mesh2D
    center: np.ndarray
    gamma0_at_x: float
    eps: np.ndarray
    cell_gamma0: np.ndarray = field(repr=False)
    shift: np.ndarray | None = field(default=None, repr=False)

    def _regular(self) -> np.ndarray:
        return self.eps if self.shift is None else self.eps + self.shift

    def value(self, points) -> np.ndarray:
        """Closed-form part only, at arbitrary points (ε is added at nodes by :meth:`nodal_values`)."""
        return fundamental_2d(np.asarray(points, float) - self.center, self.gamma0_at_x)[0]

    def nodal_values(self, nodes: np.ndarray | None = None) -> np.ndarray:
        """Nodal values of G_x; a node sitting exactly on the pole gets 0 (never used by callers)."""
        idx = np.arange(self.mesh.n_nodes) if nodes is None else np.asarray(nodes)
        z = self.mesh.vertices[idx] - self.center
        v = np.zeros(len(idx))
        ok = np.einsum("ij,ij->i", z, z) > 0
        v[ok] = fundamental_2d(z[ok], self.gamma0_at_x)[0]
        return v + self._regular()[idx]

    def cell_average_gradients(self, cells: np.ndarray | None = None) -> np.ndarray:
        """Cell means of ∇G_x (exact for the closed-form part)."""
        from .fem import cell_gradients

        g0 = cell_integrated_gradient(self.mesh, self.center, self.gamma0_at_x, cells)
        area = self.mesh.areas if cells is None else self.mesh.areas[cells]
        ge = cell_gradients(self.mesh, self._regular())
        if cells is not None:
            ge = ge[cells]
        return g0 / area[:, None] + ge

    def eps_h1_norm(self) -> float:
        K = assemble_stiffness(self.mesh, np.ones(self.mesh.n_cells))
        M = assemble_mass(self.mesh)
        return float(np.sqrt(self.eps @ (K @ self.eps) + self.eps @ (M @ self.eps)))

    def harmonic_residual(self, min_distance: float) -> float:
        """Max |∫γ₀∇G_x·∇φ_i| over interior hats at distance ≥ ``min_distance`` from the pole,
        relative to the size of the individual contributions."""
        mesh = self.mesh
        gi = cell_integrated_gradient(mesh, self.center, self.gamma0_at_x)
        contrib = np.einsum("m,md,mkd->mk", self.cell_gamma0, gi, mesh.basis_gradients)
        r = np.zeros(mesh.n_nodes)
        s = np.zeros(mesh.n_nodes)
        np.add.at(r, mesh.triangles.ravel(), contrib.ravel())
        np.add.at(s, mesh.triangles.ravel(), np.abs(contrib).ravel())
        K = assemble_stiffness(mesh, self.cell_gamma0)
        r += K @ self.eps
        far = np.linalg.norm(mesh.vertices - self.center, axis=1) >= min_distance
        far[mesh.boundary_nodes] = False
        if not np.any(far):
            return 0.0
        return float(np.max(np.abs(r[far])) / max(np.max(s[far]), 1e-300))


def correction_load(mesh: Mesh2D, cell_gamma0: np.ndarray, x, gamma0_at_x: float) -> np.ndarray:
    """Nodal load ``∫ (γ₀(x) − γ₀) ∇G₀(· − x)·∇φ_i``."""
    jump = gamma0_at_x - cell_gamma0
    active = jump != 0
    load = np.zeros(mesh.n_nodes)
    if not np.any(active):
        return load
    gi = cell_integrated_gradient(mesh, x, gamma0_at_x, active)
    contrib = jump[active, None] * np.einsum("md,mkd->mk", gi, mesh.basis_gradients[active])
    np.add.at(load, mesh.triangles[active].ravel(), contrib.ravel())
    return load


def build_corrected_singular(
    mesh: Mesh2D,
    gamma0,
    x,
    solver: ForwardSolver | None = None,
    min_boundary_distance: float | None = None,
) -> SingularSolution:
    """Singular solution with pole at ``x`` for the background conductivity.

    Parameters
    ----------
    gamma0 : coefficient field, callable or scalar
        Background conductivity; the pole value ``γ₀(x)`` is evaluated
        pointwise, cells use centroid samples.
    solver : ForwardSolver, optional
        Shared factorisation of the background problem.
    min_boundary_distance : float, optional
        Required clearance of ``x`` from ∂Ω (default ``2 h``).
    """
    x = np.asarray(x, float)
    margin = 2 * mesh.h if min_boundary_distance is None else min_boundary_distance
    if mesh.domain is not None:
        d = -float(mesh.domain.signed_distance(x[None])[0])
        if d < margin:
            raise PoleError(f"pole at distance {d:.4g} from the boundary; need at least {margin:.4g}")
    if solver is None:
        solver = ForwardSolver(mesh, gamma0)
    cg = solver.cell_gamma
    if callable(gamma0):
        gx = float(np.asarray(gamma0(x[None]), float).ravel()[0])
    else:
        gx = float(gamma0)
    if not gx > 0:
        raise PoleError("background conductivity must be positive at the pole")
    load = correction_load(mesh, cg, x, gx)
    eps = solver.solve_load(load) if np.any(load) else np.zeros(mesh.n_nodes)
    return SingularSolution(mesh, x, gx, eps, cg)


def gradient_on_cells(sol: SingularSolution, cells, min_distance: float | None = None) -> np.ndarray:
    """∇G_x per selected cell: closed form at the centroid plus the P1 gradient of ε."""
    from .fem import cell_gradients

    mesh = sol.mesh
    cells = np.asarray(cells)
    if cells.dtype == bool:
        cells = np.flatnonzero(cells)
    cen = mesh.centroids[cells]
    dist = np.linalg.norm(cen - sol.center, axis=1)
    h = mesh.h if np.isfinite(mesh.h) else 0.0
    lim = h if min_distance is None else min_distance
    for c in cells[dist < lim]:
        if mesh.barycentric(c, sol.center).min() >= -1e-12:
            raise PoleError(f"cell {c} contains the pole")
    if np.any(dist < lim):
        raise PoleError(f"cells closer than {lim:.4g} to the pole were requested")
    _, g0 = fundamental_2d(cen - sol.center, sol.gamma0_at_x)
    return g0 + cell_gradients(mesh, sol._regular())[cells]


def arc_cutoff(mesh: Mesh2D, ramp_deg: float = 15.0) -> np.ndarray:
    """Boundary weight χ (loop order): 1 off Γ, 0 deep inside Γ, cosine ramp near the Γ ends.

    The ramp width is measured in arclength-equivalent degrees of the domain
    perimeter from the nearest Γ end.
    """
    nodes = mesh.boundary_nodes
    ing = np.isin(nodes, mesh.gamma_nodes)
    if np.all(ing):
        return np.zeros(len(nodes))
    p = mesh.vertices[nodes]
    seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    per = float(seg.sum())
    out = s[~ing]
    # arclength distance from each node to the closest non-Γ node (periodic)
    d = np.abs(s[:, None] - out[None, :])
    d = np.minimum(d, per - d).min(axis=1)
    w = per * ramp_deg / 360.0
    if w <= 0:
        return np.where(ing, 0.0, 1.0)
    chi = 0.5 * (1 + np.cos(np.pi * np.clip(d / w, 0, 1)))
    return np.where(ing, chi, 1.0)


def adapt_to_arc(sol: SingularSolution, solver: ForwardSolver, chi: np.ndarray) -> SingularSolution:
    """Add the γ₀-harmonic field with boundary data ``−χ·G_x`` so the trace lives on Γ.

    The result is again a point-source solution with an H¹ regular part; its
    trace off Γ is zero, which removes the part of the target that Γ-supported
    data can only reach through an unstable continuation.
    """
    bn = sol.mesh.boundary_nodes
    trace = sol.nodal_values(bn)
    shift = solver.extend(-chi * trace)
    if sol.shift is not None:
        shift = shift + sol.shift
    return SingularSolution(sol.mesh, sol.center, sol.gamma0_at_x, sol.eps, sol.cell_gamma0, shift)
