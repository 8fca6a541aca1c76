"""Boundary data on Γ whose background solutions approximate a target on a region K.

For boundary coefficients α supported on the Γ nodes, ``E α`` is the
discrete γ₀-harmonic extension.  Each stage of a decreasing ρ schedule
solves

    min_α  |E α − target|²_{H¹(K)} + ρ·s_max·αᵀ R α

where the misfit is the cell-wise gradient seminorm plus a lumped nodal L²
term on K, ``R`` is the boundary mass plus tangential stiffness restricted
to Γ, and ``s_max`` is the largest generalised eigenvalue of the misfit
matrix against ``R`` (so ρ is dimensionless).  One generalised eigen-
decomposition per region serves every ρ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .fem import ForwardSolver, boundary_laplace_matrix, boundary_mass_matrix, lumped_mass
from .geometry import Mesh2D, Needle, exclusion_region
from .singular import SingularSolution, adapt_to_arc, build_corrected_singular

DEFAULT_SCHEDULE = tuple(10.0 ** -np.arange(1, 11))
BREACH_COND = 1e14


class RungeError(RuntimeError):
    pass


class RungeBasis:
    """Extensions of the Γ hat functions with precomputed full-domain Gram data.

    Parameters
    ----------
    solver : ForwardSolver
        Factorised background problem.
    gamma_positions : array of int
        Positions (in ``mesh.boundary_nodes`` order) of the Γ dofs.
    smoothing : ``"h1"`` (mass + tangential stiffness) or ``"l2"`` (mass only)
    """

    def __init__(self, solver: ForwardSolver, gamma_positions, smoothing: str = "h1"):
        mesh = solver.mesh
        self.mesh = mesh
        self.solver = solver
        self.positions = np.asarray(gamma_positions, int)
        if len(self.positions) == 0:
            raise RungeError("Γ has no degrees of freedom")
        nb = len(mesh.boundary_nodes)
        B = np.zeros((nb, len(self.positions)))
        B[self.positions, np.arange(len(self.positions))] = 1.0
        self.E = solver.extend(B)  # (n_nodes, nΓ)
        G = mesh.basis_gradients
        Et = self.E[mesh.triangles]  # (M, 3, nΓ)
        self.gx = np.einsum("mk,mkj->mj", G[:, :, 0], Et)
        self.gy = np.einsum("mk,mkj->mj", G[:, :, 1], Et)
        self.areas = mesh.areas
        self.node_mass_full = lumped_mass(mesh)
        self.N_full = self._gram(np.ones(mesh.n_cells, bool))
        Mb = boundary_mass_matrix(mesh)
        if smoothing == "h1":
            Rb = Mb + boundary_laplace_matrix(mesh)
        elif smoothing == "l2":
            Rb = Mb
        else:
            raise ValueError(f"unknown smoothing norm {smoothing!r}")
        self.R = Rb[np.ix_(self.positions, self.positions)]
        self.smoothing = smoothing

    @classmethod
    def for_mesh(cls, mesh: Mesh2D, gamma0, solver: ForwardSolver | None = None, **kw) -> "RungeBasis":
        solver = solver or ForwardSolver(mesh, gamma0)
        pos = np.flatnonzero(np.isin(mesh.boundary_nodes, mesh.gamma_nodes))
        return cls(solver, pos, **kw)

    def _gram(self, cells: np.ndarray) -> np.ndarray:
        w = self.areas[cells]
        gx, gy = self.gx[cells], self.gy[cells]
        N = (gx * w[:, None]).T @ gx + (gy * w[:, None]).T @ gy
        m = lumped_mass(self.mesh, cells)
        nz = m > 0
        E = self.E[nz]
        N += (E * m[nz, None]).T @ E
        return N

    def gram(self, K: np.ndarray) -> np.ndarray:
        """Misfit matrix on region K, built from whichever side is smaller."""
        K = np.asarray(K, bool)
        if K.sum() > 0.5 * len(K):
            N = self.N_full - self._gram(~K)
        else:
            N = self._gram(K)
        return 0.5 * (N + N.T)

    def boundary_vector(self, alpha: np.ndarray) -> np.ndarray:
        f = np.zeros(len(self.mesh.boundary_nodes))
        f[self.positions] = alpha
        return f


@dataclass
class RungeProblem:
    """Target gradients/values on region K to be matched from Γ.

    ``target_grad`` has one row per cell (only rows in K are used) and
    ``target_values`` one entry per node (only nodes touching K are used).
    """

    basis: RungeBasis
    K: np.ndarray
    target_grad: np.ndarray
    target_values: np.ndarray
    schedule: tuple = DEFAULT_SCHEDULE
    rho_mode: str = "relative"

    def __post_init__(self):
        self.K = np.asarray(self.K, bool)
        if not np.any(self.K):
            raise RungeError("approximation region K is empty")
        s = np.asarray(self.schedule, float)
        if len(s) == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise RungeError("regularisation schedule must be positive and strictly decreasing")
        if self.rho_mode not in ("relative", "absolute"):
            raise RungeError(f"unknown rho_mode {self.rho_mode!r}")

    @classmethod
    def from_field(cls, basis: RungeBasis, K, nodal_values, **kw) -> "RungeProblem":
        from .fem import cell_gradients

        return cls(basis, K, cell_gradients(basis.mesh, nodal_values), np.asarray(nodal_values, float), **kw)

    @classmethod
    def from_singular(cls, basis: RungeBasis, K, sol: SingularSolution, **kw) -> "RungeProblem":
        K = np.asarray(K, bool)
        grad = np.zeros((basis.mesh.n_cells, 2))
        grad[K] = sol.cell_average_gradients(K)
        nodes = np.unique(basis.mesh.triangles[K])
        vals = np.zeros(basis.mesh.n_nodes)
        vals[nodes] = sol.nodal_values(nodes)
        return cls(basis, K, grad, vals, **kw)


@dataclass
class RungeResult:
    """One coefficient vector per ρ stage plus diagnostics.

    ``coefficients[n]`` is a full boundary vector (zero off Γ).  Errors are
    absolute H¹(K) misfits; ``relative_errors`` divide by the target norm on
    K.  ``breach_index`` is the first stage flagged as numerically unstable
    (``None`` if all stages are stable).
    """

    rhos: np.ndarray
    coefficients: np.ndarray
    errors: np.ndarray
    relative_errors: np.ndarray
    objective: np.ndarray
    condition: np.ndarray
    target_norm: float
    breach_index: int | None = None
    gamma_mask: np.ndarray = field(default=None, repr=False)

    @property
    def stable_stages(self) -> np.ndarray:
        end = len(self.rhos) if self.breach_index is None else self.breach_index
        return np.arange(end)

    def to_rows(self) -> list[dict]:
        return [
            {"rho": float(r), "error": float(e), "relative_error": float(q), "condition": float(c)}
            for r, e, q, c in zip(self.rhos, self.errors, self.relative_errors, self.condition)
        ]


def approximate_target(problem: RungeProblem) -> RungeResult:
    """Run the ρ schedule for one target."""
    return approximate_targets(
        problem.basis, problem.K, problem.target_grad[None], problem.target_values[None], problem.schedule,
        problem.rho_mode,
    )[0]


def approximate_targets(
    basis: RungeBasis,
    K,
    target_grads: np.ndarray,
    target_values: np.ndarray,
    schedule=DEFAULT_SCHEDULE,
    rho_mode: str = "relative",
) -> list[RungeResult]:
    """Run the ρ schedule for many targets on the same region K.

    ``target_grads`` has shape (T, M, 2) and ``target_values`` shape (T, n);
    one generalised eigendecomposition serves every target.
    """
    b = basis
    RungeProblem(b, K, target_grads[0], target_values[0], tuple(schedule), rho_mode)  # validates inputs
    K = np.asarray(K, bool)
    N = b.gram(K)
    w = b.areas[K]
    tg = np.asarray(target_grads, float)[:, K]  # (T, mK, 2)
    m = lumped_mass(b.mesh, K)
    nz = m > 0
    tv = np.asarray(target_values, float)[:, nz]  # (T, nK)
    C = b.gx[K].T @ (w[:, None] * tg[:, :, 0].T) + b.gy[K].T @ (w[:, None] * tg[:, :, 1].T)
    C += b.E[nz].T @ (m[nz, None] * tv.T)  # (nΓ, T)
    t2 = np.einsum("m,tmd,tmd->t", w, tg, tg) + np.einsum("k,tk,tk->t", m[nz], tv, tv)
    tnorm = np.sqrt(t2)

    s, V = eigh(N, b.R)
    smax = float(s[-1])
    if not smax > 0:
        raise RungeError("misfit matrix vanishes on K; Γ cannot influence the region")
    VC = V.T @ C
    rhos = np.asarray(schedule, float)
    gx, gy, EK = b.gx[K], b.gy[K], b.E[nz]
    mask = np.zeros(len(b.mesh.boundary_nodes), bool)
    mask[b.positions] = True
    T = tg.shape[0]
    coeffs = np.zeros((T, len(rhos), len(mask)))
    errs = np.zeros((T, len(rhos)))
    objs = np.zeros((T, len(rhos)))
    conds = np.zeros(len(rhos))
    for k, rho in enumerate(rhos):
        reg = rho * smax if rho_mode == "relative" else rho
        A = V @ (VC / (s + reg)[:, None])  # (nΓ, T)
        rx = gx @ A - tg[:, :, 0].T
        ry = gy @ A - tg[:, :, 1].T
        rv = EK @ A - tv.T
        e2 = w @ (rx * rx + ry * ry) + m[nz] @ (rv * rv)
        errs[:, k] = np.sqrt(e2)
        objs[:, k] = e2 + reg * np.einsum("it,ij,jt->t", A, b.R, A)
        coeffs[:, k, b.positions] = A.T
        conds[k] = (smax + reg) / (max(float(s[0]), 0.0) + reg)
    out = []
    for j in range(T):
        breach = None
        for k in range(len(rhos)):
            rising = k > 0 and errs[j, k] > errs[j, k - 1] * (1 + 1e-9) + 1e-13 * tnorm[j]
            if conds[k] > BREACH_COND or rising or not np.all(np.isfinite(coeffs[j, k])):
                breach = k
                break
        out.append(
            RungeResult(
                rhos=rhos,
                coefficients=coeffs[j],
                errors=errs[j],
                relative_errors=errs[j] / max(float(tnorm[j]), 1e-300),
                objective=objs[j],
                condition=conds.copy(),
                target_norm=float(tnorm[j]),
                breach_index=breach,
                gamma_mask=mask,
            )
        )
    return out


def runge_for_needle(
    basis: RungeBasis,
    gamma0,
    needle: Needle,
    t: float,
    delta: float,
    schedule=DEFAULT_SCHEDULE,
    widen: float = 0.0,
    boundary_margin: float = 0.0,
    max_radius: float = np.inf,
    arc_weight: np.ndarray | None = None,
) -> tuple[RungeResult, SingularSolution, np.ndarray]:
    """Approximate the singular solution at ``c(t)`` away from the needle tail.

    ``arc_weight`` (boundary loop order, see :func:`singular.arc_cutoff`)
    switches the target to the Γ-adapted singular solution.
    Returns the Runge result, the singular solution and the region K.
    """
    if not 0 < t < 1:
        raise RungeError("t must lie in (0, 1)")
    mesh = basis.mesh
    K = exclusion_region(
        mesh, needle, t, delta, widen=widen, boundary_margin=boundary_margin, max_radius=max_radius
    )
    sol = build_corrected_singular(mesh, gamma0, needle(t), solver=basis.solver, min_boundary_distance=0.0)
    if arc_weight is not None:
        sol = adapt_to_arc(sol, basis.solver, arc_weight)
    prob = RungeProblem.from_singular(basis, K, sol, schedule=tuple(schedule))
    return approximate_target(prob), sol, K
