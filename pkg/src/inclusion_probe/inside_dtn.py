"""Recovery of the Dirichlet-to-Neumann map inside a known inclusion from Γ data.

Discrete setting.  ``K`` and ``K₀`` are the stiffness matrices of γ and γ₀
with zero data on ∂Ω; ``I`` denotes the ∂D node loop.  Functionals on ∂D are
nodal load vectors, so the operator sending a ∂D datum to the trace of the
solution with that load is ``G = (K⁻¹)_II``.  With ``S_in`` the Schur
complement of the interior stiffness onto I (the interior DtN map) and
``S_ext`` that of the exterior stiffness with ∂Ω pinned, ``G⁻¹ = S_in +
S_ext``.  The outside map carries a minus sign, ``Λ⁺ = −S_ext``, so that
``(Λ⁻ − Λ⁺) G = I`` holds exactly.

The recovery only reads the gap oracle, γ₀, D and Γ:

1. for exterior point functionals F_a on a ring R around D, the moments
   ``w_a(b) = e_bᵀ(K⁻¹ − K₀⁻¹)e_a`` follow from polarised gap queries of
   Γ data approximating ``K₀⁻¹e_a`` and ``K₀⁻¹e_b`` on D;
2. ``w_a`` is γ₀-harmonic outside D̄, so its values on R continue to ∂D
   by a small least-squares problem;
3. ``(K⁻¹e_a)_I = (K₀⁻¹e_a)_I + w_a|_I`` gives ``u_f(a)`` for every
   ∂D datum f by symmetry, and the same continuation yields the columns
   of G;
4. ``Λ⁻ = G⁻¹ + Λ⁺``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    ConstrainedSolver,
    ForwardSolver,
    GapOracle,
    assemble_stiffness,
    cell_conductivity,
    write_matrix_csv,
)
from .geometry import Mesh2D
from .runge import DEFAULT_SCHEDULE, RungeBasis, approximate_targets
from .shapes import Shape


class SubmeshError(ValueError):
    pass


class RankDeficientError(RuntimeError):
    pass


class InversionError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# partition of a mesh by a known inclusion


@dataclass
class InclusionSplit:
    """Cells and nodes of a mesh split by the resolved interface ∂D."""

    mesh: Mesh2D
    cells_in: np.ndarray
    interface: np.ndarray
    inner: np.ndarray
    exterior: np.ndarray
    distance: np.ndarray = field(repr=False)

    @classmethod
    def from_mesh(cls, mesh: Mesh2D, inclusion: Shape) -> "InclusionSplit":
        I = mesh.interface_nodes
        if len(I) < 3:
            raise SubmeshError("mesh does not resolve the inclusion boundary; rebuild it with the interface")
        cells_in = mesh.cells_inside(inclusion)
        if not np.any(cells_in):
            raise SubmeshError("no cells inside the inclusion")
        in_nodes = np.unique(mesh.triangles[cells_in])
        out_nodes = np.unique(mesh.triangles[~cells_in])
        shared = np.intersect1d(in_nodes, out_nodes)
        if not np.array_equal(np.sort(shared), np.sort(I)):
            raise SubmeshError("cells inside D do not close up along the interface edges")
        is_I = np.zeros(mesh.n_nodes, bool)
        is_I[I] = True
        inner = np.setdiff1d(in_nodes, I)
        exterior = np.setdiff1d(np.arange(mesh.n_nodes), in_nodes)
        P = mesh.vertices[I]
        dist = np.zeros(mesh.n_nodes)
        for chunk in np.array_split(np.arange(mesh.n_nodes), max(1, mesh.n_nodes // 2000)):
            d = np.linalg.norm(mesh.vertices[chunk, None, :] - P[None], axis=2).min(axis=1)
            dist[chunk] = d
        dist[in_nodes] = 0.0
        return cls(mesh, cells_in, I, inner, exterior, dist)

    def ring(self, inner: float = 2.0, outer: float = 4.0) -> np.ndarray:
        """Exterior, non-boundary nodes with ``inner·h ≤ dist(·, ∂D) < outer·h``."""
        h = self.mesh.h
        d = self.distance[self.exterior]
        sel = self.exterior[(d >= inner * h) & (d < outer * h)]
        return np.setdiff1d(sel, self.mesh.boundary_nodes)

    def node_coordinates(self) -> list[str]:
        return [f"{x:.6f} {y:.6f}" for x, y in self.mesh.vertices[self.interface]]


# ----------------------------------------------------------------------------
# direct operators (known coefficients)


def dtn_inside_direct(mesh: Mesh2D, gamma_inside, inclusion: Shape, split: InclusionSplit | None = None) -> np.ndarray:
    """Energy-form DtN map of the interior problem on the ∂D node loop."""
    split = split or InclusionSplit.from_mesh(mesh, inclusion)
    g = cell_conductivity(mesh, gamma_inside)
    K = assemble_stiffness(mesh, g, cells=split.cells_in)
    active = np.concatenate([split.inner, split.interface])
    return ConstrainedSolver(K, split.interface, active=active).schur()


def dtn_outside(mesh: Mesh2D, gamma0, inclusion: Shape, split: InclusionSplit | None = None) -> np.ndarray:
    """``Λ⁺``: minus the exterior energy Schur complement on ∂D, outer data pinned at zero."""
    split = split or InclusionSplit.from_mesh(mesh, inclusion)
    g = cell_conductivity(mesh, gamma0)
    K = assemble_stiffness(mesh, g, cells=~split.cells_in)
    bn = mesh.boundary_nodes
    fixed = np.concatenate([split.interface, bn])
    active = np.concatenate([split.exterior, split.interface])
    S = ConstrainedSolver(K, fixed, active=active).schur()
    nI = len(split.interface)
    return -S[:nI, :nI]


def g_operator_direct(mesh: Mesh2D, scenario, split: InclusionSplit | None = None, solver: ForwardSolver | None = None) -> np.ndarray:
    """Column j is the ∂D trace of the γ-solution with unit nodal load at the j-th ∂D node."""
    split = split or InclusionSplit.from_mesh(mesh, scenario.inclusion)
    fs = solver or ForwardSolver(mesh, scenario)
    I = split.interface
    load = np.zeros((mesh.n_nodes, len(I)))
    load[I, np.arange(len(I))] = 1.0
    U = fs.solve_load(load)
    G = U[I]
    return 0.5 * (G + G.T)


def operator_identity_residual(lambda_minus: np.ndarray, lambda_plus: np.ndarray, G: np.ndarray) -> float:
    """``‖(Λ⁻ − Λ⁺)G − I‖₂``."""
    n = G.shape[0]
    return float(np.linalg.norm((lambda_minus - lambda_plus) @ G - np.eye(n), 2))


# ----------------------------------------------------------------------------
# exterior functionals


@dataclass
class ExteriorFunctional:
    """A load vector supported away from D̄, anchored at an exterior node."""

    anchor: int
    kind: str
    load: np.ndarray

    def check(self, split: InclusionSplit) -> None:
        sup = np.flatnonzero(self.load)
        mesh = split.mesh
        touching = np.isin(mesh.triangles, sup).any(axis=1)
        if np.any(touching & split.cells_in):
            raise ValueError(f"functional anchored at node {self.anchor} touches the closure of D")
        if np.any(np.isin(sup, mesh.boundary_nodes)):
            raise ValueError(f"functional anchored at node {self.anchor} touches the outer boundary")

    def __call__(self, u: np.ndarray) -> float:
        return float(self.load @ u)


def point_functional(split: InclusionSplit, node: int) -> ExteriorFunctional:
    """Nodal point source: ``F(v) = v(node)``."""
    load = np.zeros(split.mesh.n_nodes)
    load[node] = 1.0
    F = ExteriorFunctional(int(node), "point", load)
    F.check(split)
    return F


def moment_functional(split: InclusionSplit, gamma0, node: int) -> ExteriorFunctional:
    """Stiffness moment: ``F(v) = ∫ γ₀ ∇φ_node·∇v``."""
    K0 = assemble_stiffness(split.mesh, cell_conductivity(split.mesh, gamma0))
    load = np.asarray(K0[node].toarray()).ravel()
    F = ExteriorFunctional(int(node), "moment", load)
    F.check(split)
    return F


# ----------------------------------------------------------------------------
# moments


def limit_polarization(mesh: Mesh2D, scenario, F: np.ndarray, H: np.ndarray, solver=None, solver0=None) -> np.ndarray:
    """Exact-interior value of the polarised gap limit, ``−Hᵀ(K⁻¹ − K₀⁻¹)F`` (validation).

    ``F`` and ``H`` are load matrices with one column per functional.
    """
    fs = solver or ForwardSolver(mesh, scenario)
    f0 = solver0 or ForwardSolver(mesh, scenario.gamma0)
    W = fs.solve_load(F) - f0.solve_load(F)
    return -(H.T @ W)


@dataclass
class RungeMoments:
    """Stage-wise moment matrices from the oracle plus the Runge error trail."""

    rhos: np.ndarray
    moments: list[np.ndarray]
    max_relative_error: np.ndarray
    n_queries: int


def runge_polarization(
    oracle: GapOracle,
    basis: RungeBasis,
    split: InclusionSplit,
    background: ForwardSolver,
    anchors: np.ndarray,
    schedule=DEFAULT_SCHEDULE,
) -> RungeMoments:
    """Moments ``w_a(b)`` from polarised gap queries at every Runge stage.

    The Γ data approximate the background fields ``K₀⁻¹e_a`` on D; the
    moment is ``−¼[Q(f_a + f_b) − Q(f_a − f_b)]``.
    """
    from .fem import cell_gradients

    mesh = split.mesh
    load = np.zeros((mesh.n_nodes, len(anchors)))
    load[anchors, np.arange(len(anchors))] = 1.0
    Z = background.solve_load(load)  # (n, R)
    grads = np.stack([cell_gradients(mesh, Z[:, k]) for k in range(Z.shape[1])])
    res = approximate_targets(basis, split.cells_in, grads, Z.T, schedule)
    n_stage = len(schedule)
    q0 = oracle.n_queries
    mats, errs = [], []
    for k in range(n_stage):
        A = np.array([r.coefficients[k] for r in res])  # (R, nb)
        P = np.zeros((len(anchors), len(anchors)))
        for a in range(len(anchors)):
            for b in range(a, len(anchors)):
                v = 0.25 * (oracle.quadratic(A[a] + A[b]) - oracle.quadratic(A[a] - A[b]))
                P[a, b] = P[b, a] = v
        mats.append(-P)
        errs.append(max(r.relative_errors[k] for r in res))
    return RungeMoments(np.asarray(schedule, float), mats, np.asarray(errs), oracle.n_queries - q0)


# ----------------------------------------------------------------------------
# harmonic continuation from the ring to ∂D


@dataclass
class ContinuationReport:
    n_unknowns: int
    n_equations: int
    singular_min: float
    singular_max: float

    @property
    def condition(self) -> float:
        return self.singular_max / self.singular_min if self.singular_min > 0 else np.inf


class HarmonicContinuation:
    """Values of a γ₀-harmonic exterior field on the ring R → values on ∂D.

    Unknowns are the ∂D nodes and the exterior band between ∂D and R;
    equations are the discrete γ₀-harmonicity rows of every band node and of
    every ring node whose stencil stays inside band ∪ ring ∪ ∂Ω.  Outer
    boundary nodes are known zeros.
    """

    def __init__(self, split: InclusionSplit, gamma0, ring: np.ndarray, rank_tol: float = 1e-12):
        mesh = split.mesh
        self.split = split
        ring = np.asarray(ring, int)
        if len(ring) == 0:
            raise RankDeficientError("empty functional family: nothing to continue from")
        K0 = assemble_stiffness(mesh, cell_conductivity(mesh, gamma0)).tocsr()
        bn = mesh.boundary_nodes
        known = np.zeros(mesh.n_nodes, bool)
        known[ring] = True
        known[bn] = True
        is_ext = np.zeros(mesh.n_nodes, bool)
        is_ext[split.exterior] = True
        rmin = split.distance[ring].min()
        band = np.flatnonzero(is_ext & ~known & (split.distance < rmin))
        unknown = np.concatenate([split.interface, band])
        is_unknown = np.zeros(mesh.n_nodes, bool)
        is_unknown[unknown] = True
        allowed = is_unknown | known
        rows = []
        for i in np.concatenate([band, ring]):
            cols = K0.indices[K0.indptr[i] : K0.indptr[i + 1]]
            if np.all(allowed[cols]) and np.any(is_unknown[cols]):
                rows.append(i)
        rows = np.asarray(rows, int)
        if len(rows) == 0:
            raise RankDeficientError("no harmonicity equations link the ring to ∂D")
        pos = -np.ones(mesh.n_nodes, int)
        pos[unknown] = np.arange(len(unknown))
        rpos = -np.ones(mesh.n_nodes, int)
        rpos[ring] = np.arange(len(ring))
        Ksub = K0[rows]
        self.A = Ksub[:, unknown].toarray()
        self.B = Ksub[:, ring].toarray()
        U, s, Vt = np.linalg.svd(self.A, full_matrices=False)
        self.report = ContinuationReport(len(unknown), len(rows), float(s.min()) if len(s) else 0.0,
                                         float(s.max()) if len(s) else 0.0)
        if len(rows) < len(unknown) or s.min() <= rank_tol * s.max():
            raise RankDeficientError(
                f"continuation system is rank-deficient: {len(rows)} equations for {len(unknown)} unknowns, "
                f"singular values in [{self.report.singular_min:.3g}, {self.report.singular_max:.3g}]"
            )
        self._U, self._s, self._Vt = U, s, Vt
        self.ring = ring
        self.unknown = unknown
        self.n_interface = len(split.interface)

    def __call__(self, ring_values: np.ndarray) -> np.ndarray:
        """∂D values (one column per field) from ring values (rows ordered like ``ring``)."""
        rhs = -self.B @ np.asarray(ring_values, float)
        z = self._Vt.T @ ((self._U.T @ rhs) / (self._s[:, None] if rhs.ndim == 2 else self._s))
        return z[: self.n_interface]


# ----------------------------------------------------------------------------
# recovery


@dataclass
class RecoveredOperator:
    """Recovered ``G`` and ``Λ⁻`` on the ∂D node basis plus the computed ``Λ⁺``."""

    interface: np.ndarray
    G_hat: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus_hat: np.ndarray
    g_asymmetry: float
    lambda_asymmetry: float
    condition: float
    tikhonov: float
    continuation: ContinuationReport

    def to_csv(self, path, header: list[str]) -> None:
        write_matrix_csv(path, self.lambda_minus_hat, header)


def recover_correction_field(
    moments: np.ndarray, continuation: HarmonicContinuation, background_trace: np.ndarray | None = None
) -> np.ndarray:
    """∂D traces of ``w_a = 𝑮F_a − 𝑮₀F_a`` from ring moments (column a = functional a).

    With ``background_trace`` (the ∂D trace of ``𝑮₀F_a``) the traces of
    ``𝑮F_a`` are returned instead.
    """
    W = continuation(moments)
    return W if background_trace is None else background_trace + W


def recover_g_operator(GF_trace: np.ndarray, continuation: HarmonicContinuation) -> np.ndarray:
    """Columns ``u_f|_∂D`` for the ∂D nodal data f.

    ``GF_trace[j, a]`` is the value of ``𝑮F_a`` at the j-th ∂D node, which by
    symmetry equals ``F_a(u_{e_j})``; continuing these ring values gives G.
    """
    if GF_trace.shape[1] < 2:
        raise RankDeficientError("a single exterior functional cannot determine G")
    return continuation(GF_trace.T)


def recover_lambda_minus(G_hat: np.ndarray, lambda_plus: np.ndarray, cond_cap: float = 1e10):
    """``Λ⁻ = G⁻¹ + Λ⁺`` with a Tikhonov inverse when ``cond(G) > cond_cap``.

    Returns the matrix, the condition number and the Tikhonov parameter used
    (0 for a plain inverse).
    """
    G = 0.5 * (G_hat + G_hat.T)
    U, s, Vt = np.linalg.svd(G)
    if not np.all(np.isfinite(s)) or s[0] == 0:
        raise InversionError("recovered G is singular")
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    rho = 0.0
    if cond > cond_cap:
        rho = float(s[0] / cond_cap)
        inv_s = s / (s * s + rho * rho)
    else:
        inv_s = 1.0 / s
    Ginv = (Vt.T * inv_s) @ U.T
    if not np.all(np.isfinite(Ginv)):
        raise InversionError("regularised inverse of G is not finite")
    Lm = Ginv + lambda_plus
    return 0.5 * (Lm + Lm.T), cond, rho


def relative_error(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.linalg.norm(A - B, 2) / np.linalg.norm(B, 2))


class InsideDtnPipeline:
    """Shared setup for both run modes on one mesh and known inclusion."""

    def __init__(self, mesh: Mesh2D, gamma0, inclusion: Shape, ring=(2.0, 4.0)):
        self.mesh = mesh
        self.gamma0 = gamma0
        self.inclusion = inclusion
        self.split = InclusionSplit.from_mesh(mesh, inclusion)
        self.background = ForwardSolver(mesh, gamma0)
        self.anchors = self.split.ring(*ring)
        for a in self.anchors:
            point_functional(self.split, a)
        self.continuation = HarmonicContinuation(self.split, gamma0, self.anchors)
        load = np.zeros((mesh.n_nodes, len(self.anchors)))
        load[self.anchors, np.arange(len(self.anchors))] = 1.0
        self.G0F_trace = self.background.solve_load(load)[self.split.interface]  # (nI, R)
        self.lambda_plus = dtn_outside(mesh, gamma0, inclusion, self.split)

    def from_moments(self, moments: np.ndarray, cond_cap: float = 1e10) -> RecoveredOperator:
        M = 0.5 * (moments + moments.T)
        GF = recover_correction_field(M, self.continuation, self.G0F_trace)
        G = recover_g_operator(GF, self.continuation)
        asym = float(np.linalg.norm(G - G.T) / max(np.linalg.norm(G), 1e-300))
        Gs = 0.5 * (G + G.T)
        Lm, cond, rho = recover_lambda_minus(Gs, self.lambda_plus, cond_cap)
        return RecoveredOperator(
            self.split.interface, Gs, self.lambda_plus, Lm, asym, 0.0, cond, rho, self.continuation.report
        )

    def exact_interior(self, scenario, cond_cap: float = 1e10) -> RecoveredOperator:
        """Moments from the exact interior fields (validation mode)."""
        load = np.zeros((self.mesh.n_nodes, len(self.anchors)))
        load[self.anchors, np.arange(len(self.anchors))] = 1.0
        P = limit_polarization(self.mesh, scenario, load, load, solver0=self.background)
        return self.from_moments(-P, cond_cap)

    def full_runge(self, oracle: GapOracle, basis: RungeBasis | None = None, schedule=DEFAULT_SCHEDULE,
                   cond_cap: float = 1e10) -> tuple[list[RecoveredOperator], RungeMoments]:
        """One recovered operator per Runge stage."""
        basis = basis or RungeBasis.for_mesh(self.mesh, self.gamma0, solver=self.background)
        rm = runge_polarization(oracle, basis, self.split, self.background, self.anchors, schedule)
        return [self.from_moments(M, cond_cap) for M in rm.moments], rm


def comparison_report(recovered: RecoveredOperator, lambda_minus_direct: np.ndarray | None = None,
                      G_direct: np.ndarray | None = None) -> dict:
    rep = {
        "n_interface_nodes": int(len(recovered.interface)),
        "g_asymmetry": recovered.g_asymmetry,
        "condition": recovered.condition,
        "tikhonov": recovered.tikhonov,
        "continuation_condition": recovered.continuation.condition,
        "constant_residual": float(
            np.linalg.norm(recovered.lambda_minus_hat @ np.ones(len(recovered.interface)))
            / np.linalg.norm(recovered.lambda_minus_hat, 2)
        ),
    }
    if lambda_minus_direct is not None:
        rep["lambda_minus_relative_error"] = relative_error(recovered.lambda_minus_hat, lambda_minus_direct)
    if G_direct is not None:
        rep["g_relative_error"] = relative_error(recovered.G_hat, G_direct)
    return rep


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
