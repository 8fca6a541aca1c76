"""Closed-form and pointwise checks for 3D isotropic elasticity kernels.

No elastic solves happen here: the fundamental solutions, the algebraic
identities behind the elastic monotonicity inequalities and the explicit
fields used to build singular solutions are verified pointwise, the
differential ones with central finite differences whose residuals must
converge at second order.

``ℒ_{λ,μ} u = μ Δu + (λ + μ) ∇(∇·u)`` for constant Lamé parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi
EIGHT_PI = 8.0 * np.pi
_EPS_IN_TOL = np.finfo(float).eps / 1e-12


class LameError(ValueError):
    pass


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class LameConstants:
    """Isotropic Lamé parameters with ``μ > 0`` and ``3λ + 2μ > 0``."""

    lam: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.mu)):
            raise LameError("Lamé parameters must be finite")
        if not self.mu > 0:
            raise LameError(f"mu must be positive, got {self.mu}")
        if not 3 * self.lam + 2 * self.mu > 0:
            raise LameError(f"3·lambda + 2·mu must be positive, got {3 * self.lam + 2 * self.mu}")

    @property
    def bulk3(self) -> float:
        """``3λ + 2μ``."""
        return 3 * self.lam + 2 * self.mu

    @property
    def p_modulus(self) -> float:
        """``λ + 2μ``."""
        return self.lam + 2 * self.mu


def random_lame(rng: np.random.Generator) -> LameConstants:
    """Random admissible constants, including negative λ."""
    mu = float(rng.uniform(0.1, 5.0))
    lam = float(rng.uniform(-2 * mu / 3 + 1e-3, 5.0))
    return LameConstants(lam, mu)


# ----------------------------------------------------------------------------
# matrix helpers


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def trace(A: np.ndarray) -> np.ndarray:
    return np.trace(A, axis1=-2, axis2=-1)


def deviator(A: np.ndarray) -> np.ndarray:
    """``Sym A − (Tr A / 3) I``."""
    return sym(A) - trace(A)[..., None, None] / 3.0 * np.eye(3)


def frob2(A: np.ndarray) -> np.ndarray:
    return np.sum(A * A, axis=(-2, -1))


def inner(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.sum(A * B, axis=(-2, -1))


# ----------------------------------------------------------------------------
# kernels


def _nonzero(z) -> np.ndarray:
    z = np.asarray(z, float)
    if z.shape != (3,):
        raise KernelError("expected a 3-vector")
    if not np.linalg.norm(z) > 0:
        raise KernelError("kernel evaluated at its singular point")
    return z


def laplace_green(z) -> float:
    """``G(z) = 1 / (4π|z|)``."""
    z = _nonzero(z)
    return 1.0 / (FOUR_PI * np.linalg.norm(z))


def laplace_green_grad(z) -> np.ndarray:
    z = _nonzero(z)
    r = np.linalg.norm(z)
    return -z / (FOUR_PI * r**3)


def kelvin_matrix(z, lame: LameConstants) -> np.ndarray:
    """Kelvin matrix of ``ℒ_{λ,μ}`` at offset ``z``."""
    z = _nonzero(z)
    r = np.linalg.norm(z)
    a = (1.0 / lame.mu + 1.0 / lame.p_modulus) / EIGHT_PI
    b = (1.0 / lame.mu - 1.0 / lame.p_modulus) / EIGHT_PI
    return a * np.eye(3) / r + b * np.outer(z, z) / r**3


def elastic_singular_leading(y, x, lame_at_x: LameConstants, grad_mu_at_x) -> np.ndarray:
    """Leading part ``∇G(y−x) − G(y−x)/(λ+2μ)·(I − r̂⊗r̂)∇μ₀(x)`` of the dipole singular solution."""
    z = _nonzero(np.asarray(y, float) - np.asarray(x, float))
    rh = z / np.linalg.norm(z)
    g = np.asarray(grad_mu_at_x, float)
    return laplace_green_grad(z) - laplace_green(z) / lame_at_x.p_modulus * ((np.eye(3) - np.outer(rh, rh)) @ g)


# ----------------------------------------------------------------------------
# finite differences


def _check_step(z, h: float, min_ratio: float = 100.0) -> float:
    r = float(np.linalg.norm(z))
    if not h > 0:
        raise KernelError("finite-difference step must be positive")
    if h > r / min_ratio:
        raise KernelError(f"step {h:.3g} too large for distance {r:.3g}; need at most {r / min_ratio:.3g}")
    return r


def fd_divergence(field, y, h: float) -> float:
    """Central-difference divergence of a vector field R³ → R³."""
    y = np.asarray(y, float)
    out = 0.0
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        out += (field(y + e)[j] - field(y - e)[j]) / (2 * h)
    return float(out)


def fd_laplacian(field, y, h: float) -> np.ndarray:
    """Central-difference Laplacian of a scalar or vector field."""
    y = np.asarray(y, float)
    c = np.asarray(field(y), float)
    out = np.zeros_like(c)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        out += (np.asarray(field(y + e)) - 2 * c + np.asarray(field(y - e))) / (h * h)
    return out


def fd_grad_div(field, y, h: float) -> np.ndarray:
    """Central-difference ``∇(∇·u)``."""
    y = np.asarray(y, float)
    out = np.zeros(3)
    I = np.eye(3) * h
    for i in range(3):
        for j in range(3):
            if i == j:
                d = (field(y + I[i])[i] - 2 * field(y)[i] + field(y - I[i])[i]) / (h * h)
            else:
                d = (
                    field(y + I[i] + I[j])[j]
                    - field(y + I[i] - I[j])[j]
                    - field(y - I[i] + I[j])[j]
                    + field(y - I[i] - I[j])[j]
                ) / (4 * h * h)
            out[i] += d
    return out


def fd_lame(field, y, lame: LameConstants, h: float) -> np.ndarray:
    """Central-difference ``ℒ_{λ,μ}`` applied to a vector field."""
    return lame.mu * fd_laplacian(field, y, h) + (lame.lam + lame.mu) * fd_grad_div(field, y, h)


# ----------------------------------------------------------------------------
# identities


def divergence_identity_residual(z, b, lame: LameConstants, h_fd: float = 1e-4) -> float:
    """``|∇·(E₀ b) − ∇G·b / (λ+2μ)|`` at offset ``z`` with a central-difference divergence."""
    z = _nonzero(z)
    if np.linalg.norm(z) < 1e-3:
        raise KernelError("offset must satisfy |z| >= 1e-3")
    _check_step(z, h_fd)
    b = np.asarray(b, float)
    if not np.any(b):
        return 0.0
    div = fd_divergence(lambda y: kelvin_matrix(y, lame) @ b, z, h_fd)
    rhs = float(laplace_green_grad(z) @ b) / lame.p_modulus
    return abs(div - rhs)


def trace_dev_split_residual(A, alpha: float, beta: float) -> float:
    """``|α|TrA|² + 2β|SymA|² − (3α+2β)/3·|TrA|² − 2β|SymA − TrA/3·I|²|``."""
    A = np.asarray(A, float)
    t = trace(A)
    lhs = alpha * t * t + 2 * beta * frob2(sym(A))
    rhs = (3 * alpha + 2 * beta) / 3 * t * t + 2 * beta * frob2(deviator(A))
    return float(np.max(np.abs(lhs - rhs)))


def _forms(A1, A2, l1: LameConstants, l2: LameConstants):
    d1, d2 = trace(A1), trace(A2)
    S1, S2 = sym(A1), sym(A2)
    B1, B2 = deviator(A1), deviator(A2)
    dd = d1 - d2
    # energy gap integrand before the trace/deviator split
    f55 = (
        l1.lam * dd * dd
        + 2 * l1.mu * frob2(S1 - S2)
        + (l2.lam - l1.lam) * d2 * d2
        + 2 * (l2.mu - l1.mu) * frob2(S2)
    )
    f56 = (
        l1.bulk3 / 3 * dd * dd
        + 2 * l1.mu * frob2(B1 - B2)
        + (3 * (l2.lam - l1.lam) + 2 * (l2.mu - l1.mu)) / 3 * d2 * d2
        + 2 * (l2.mu - l1.mu) * frob2(B2)
    )
    scale = (
        abs(l1.lam) * dd * dd
        + 2 * l1.mu * frob2(S1 - S2)
        + abs(l2.lam - l1.lam) * d2 * d2
        + 2 * abs(l2.mu - l1.mu) * frob2(S2)
        + l1.bulk3 / 3 * dd * dd
        # roundoff in d₁ − d₂ and S₁ − S₂ is relative to the inputs, not to their difference;
        # this term lets one machine epsilon of input size pass the 1e-12 relative checks
        + _EPS_IN_TOL * (abs(l1.lam) + abs(l2.lam) + l1.mu + l2.mu) * (frob2(A1) + frob2(A2))
        + 1e-300
    )
    return f55, f56, scale, d1, B1


def energy_decomposition_residual(u1_grad, u2_grad, lame1: LameConstants, lame2: LameConstants) -> float:
    """Relative gap between the plain and trace/deviator forms of the energy-gap integrand."""
    f55, f56, scale, _, _ = _forms(np.asarray(u1_grad, float), np.asarray(u2_grad, float), lame1, lame2)
    return float(np.max(np.abs(f55 - f56) / scale))


def pointwise_lower_bound_check(u1_grad, u2_grad, lame1: LameConstants, lame2: LameConstants) -> np.ndarray:
    """Relative slack of the completed-square lower bound (non-negative when the bound holds).

    The bound reads
    ``integrand ≥ (3λ₁+2μ₁)/(3(3λ₂+2μ₂))·{3(λ₂−λ₁)+2(μ₂−μ₁)}|∇·u₁|² + 2μ₁(μ₂−μ₁)/μ₂·|B₁|²``.
    """
    A1, A2 = np.asarray(u1_grad, float), np.asarray(u2_grad, float)
    _, f56, scale, d1, B1 = _forms(A1, A2, lame1, lame2)
    jump = 3 * (lame2.lam - lame1.lam) + 2 * (lame2.mu - lame1.mu)
    rhs = lame1.bulk3 / (3 * lame2.bulk3) * jump * d1 * d1 + 2 * lame1.mu * (lame2.mu - lame1.mu) / lame2.mu * frob2(B1)
    scale = scale + np.abs(rhs)
    return (f56 - rhs) / scale


def completed_squares(u1_grad, u2_grad, lame1: LameConstants, lame2: LameConstants) -> tuple[np.ndarray, np.ndarray]:
    """The two squares dropped in the lower bound; both vanish exactly in the equality case."""
    A1, A2 = np.asarray(u1_grad, float), np.asarray(u2_grad, float)
    d1, d2 = trace(A1), trace(A2)
    B1, B2 = deviator(A1), deviator(A2)
    k2 = lame2.bulk3 / 3
    s1 = (np.sqrt(k2) * d2 - lame1.bulk3 / 3 / np.sqrt(k2) * d1) ** 2
    s2 = frob2(np.sqrt(2 * lame2.mu) * B2 - 2 * lame1.mu / np.sqrt(2 * lame2.mu) * B1)
    return s1, s2


# ----------------------------------------------------------------------------
# differential identities with closed-form fields


def lame_of_grad_green_residual(z, lame: LameConstants, h_fd: float) -> float:
    """``|ℒ ∇G|`` at ``z ≠ 0`` (zero away from the pole)."""
    _check_step(z, h_fd)
    return float(np.linalg.norm(fd_lame(laplace_green_grad, z, lame, h_fd)))


def xi0_field(z, grad_mu) -> np.ndarray:
    return np.linalg.norm(z) / EIGHT_PI * np.asarray(grad_mu, float)


def explicit_u_field(z, hess_mu, mu0: float) -> np.ndarray:
    z = np.asarray(z, float)
    return np.asarray(hess_mu, float) @ (z / np.linalg.norm(z)) / (FOUR_PI * mu0)


def closed_form_pde_checks(case: str, point, params: dict, h_fd: float) -> float:
    """Finite-difference residual of one closed-form identity.

    ``case``:
      ``"a"`` ``Δξ⁰ = G ∇μ₀(x)`` with ``params['grad_mu']``;
      ``"b"`` ``μ₀ Δu = 2 (∇∇μ₀) ∇G`` with ``params['hess_mu']``, ``params['mu0']``;
      ``"c"`` ``ℒ(u + ∇f) = μ Δu`` for the polynomial pair built by
      :func:`polynomial_pair` from ``params['coeffs']`` and ``params['lame']``.
    """
    z = np.asarray(point, float)
    if np.linalg.norm(z) < 1e-2 and case in ("a", "b"):
        raise KernelError("evaluation point must stay at distance >= 1e-2 from the center")
    if case == "a":
        _check_step(z, h_fd)
        g = np.asarray(params["grad_mu"], float)
        lhs = fd_laplacian(lambda y: xi0_field(y, g), z, h_fd)
        return float(np.linalg.norm(lhs - laplace_green(z) * g))
    if case == "b":
        _check_step(z, h_fd)
        H = np.asarray(params["hess_mu"], float)
        mu0 = float(params["mu0"])
        lhs = mu0 * fd_laplacian(lambda y: explicit_u_field(y, H, mu0), z, h_fd)
        return float(np.linalg.norm(lhs - 2 * H @ laplace_green_grad(z)))
    if case == "c":
        lame = params["lame"]
        u, grad_f, lap_u = polynomial_pair(params["coeffs"], lame)
        lhs = fd_lame(lambda y: u(y) + grad_f(y), z, lame, h_fd)
        return float(np.linalg.norm(lhs - lame.mu * lap_u(z)))
    raise KernelError(f"unknown case id {case!r}")


def polynomial_pair(coeffs, lame: LameConstants):
    """Quadratic ``u`` and cubic ``f`` with ``(λ+2μ)Δf = −(λ+μ)∇·u`` holding exactly.

    ``coeffs`` has shape (3, 10): for each component the coefficients of
    ``1, y₁, y₂, y₃, y₁², y₂², y₃², y₁y₂, y₁y₃, y₂y₃``.  Returns callables
    ``u``, ``∇f`` and the exact ``Δu``.
    """
    C = np.asarray(coeffs, float).reshape(3, 10)

    def u(y):
        y1, y2, y3 = y
        m = np.array([1, y1, y2, y3, y1 * y1, y2 * y2, y3 * y3, y1 * y2, y1 * y3, y2 * y3])
        return C @ m

    # ∇·u = c0 + c·y
    c0 = C[0, 1] + C[1, 2] + C[2, 3]
    c = np.array(
        [
            2 * C[0, 4] + C[1, 7] + C[2, 8],
            C[0, 7] + 2 * C[1, 5] + C[2, 9],
            C[0, 8] + C[1, 9] + 2 * C[2, 6],
        ]
    )
    k = -(lame.lam + lame.mu) / lame.p_modulus

    # f = k (c0 |y|²/6 + (c·y)|y|²/10) has Δf = k (c0 + c·y)
    def grad_f(y):
        y = np.asarray(y, float)
        r2 = y @ y
        return k * (c0 * y / 3 + (c * r2 + 2 * (c @ y) * y) / 10)

    lap = 2 * (C[:, 4] + C[:, 5] + C[:, 6])

    def lap_u(y):
        return lap

    return u, grad_f, lap_u


def convergence_order(residual_of_step, steps) -> float:
    """Least-squares slope of ``log residual`` against ``log step``."""
    steps = np.asarray(steps, float)
    res = np.array([residual_of_step(h) for h in steps])
    if np.any(res <= 0):
        raise KernelError("residual vanished; the order is undefined")
    return float(np.polyfit(np.log(steps), np.log(res), 1)[0])


# ----------------------------------------------------------------------------
# suite


@dataclass
class SuiteEntry:
    name: str
    worst: float
    tolerance: float
    passed: bool
    detail: str = ""


def _random_unit(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def run_suite(seed: int = 0, n_draws: int = 10_000, inject_failure: bool = False) -> list[SuiteEntry]:
    """Randomised sweep of every identity; ``inject_failure`` perturbs one of them."""
    rng = np.random.default_rng(seed)
    out: list[SuiteEntry] = []

    A = rng.standard_normal((n_draws, 3, 3))
    alpha = rng.uniform(-5, 5, n_draws)
    beta = rng.uniform(-5, 5, n_draws)
    t = trace(A)
    lhs = alpha * t * t + 2 * beta * frob2(sym(A))
    rhs = (3 * alpha + 2 * beta) / 3 * t * t + 2 * beta * frob2(deviator(A))
    if inject_failure:
        rhs = rhs * (1 + 1e-6)
    scale = np.abs(alpha) * t * t + 2 * np.abs(beta) * frob2(sym(A)) + 1e-300
    worst = float(np.max(np.abs(lhs - rhs) / scale))
    out.append(SuiteEntry("trace_dev_split", worst, 1e-12, worst <= 1e-12))

    G1 = rng.standard_normal((n_draws, 3, 3))
    G2 = rng.standard_normal((n_draws, 3, 3))
    worst_e, worst_v, n_bad = 0.0, 0.0, 0
    for k in range(n_draws):
        l1, l2 = random_lame(rng), random_lame(rng)
        worst_e = max(worst_e, energy_decomposition_residual(G1[k], G2[k], l1, l2))
        s = float(pointwise_lower_bound_check(G1[k], G2[k], l1, l2))
        worst_v = min(worst_v, s)
        n_bad += s < -1e-12
    out.append(SuiteEntry("energy_decomposition", worst_e, 1e-12, worst_e <= 1e-12))
    out.append(
        SuiteEntry("pointwise_lower_bound", -worst_v, 1e-12, n_bad == 0, f"{n_bad} violations in {n_draws} draws")
    )

    steps = np.geomspace(5e-3, 5e-4, 5)
    lame = random_lame(rng)
    z = _random_unit(rng)
    b = _random_unit(rng)
    g = rng.standard_normal(3)
    H = rng.standard_normal((3, 3))
    H = H + H.T
    orders = {
        "divergence_identity": convergence_order(lambda h: divergence_identity_residual(z, b, lame, h), steps),
        "lame_of_grad_green": convergence_order(lambda h: lame_of_grad_green_residual(z, lame, h), steps),
        "xi0_laplacian": convergence_order(lambda h: closed_form_pde_checks("a", z, {"grad_mu": g}, h), steps),
        "explicit_u": convergence_order(
            lambda h: closed_form_pde_checks("b", z, {"hess_mu": H, "mu0": lame.mu}, h), steps
        ),
    }
    for name, p in orders.items():
        out.append(SuiteEntry(f"order_{name}", abs(p - 2.0), 0.3, abs(p - 2.0) <= 0.3, f"order {p:.3f}"))

    coeffs = rng.standard_normal((3, 10))
    res_c = closed_form_pde_checks("c", rng.standard_normal(3), {"coeffs": coeffs, "lame": lame}, 1e-1)
    out.append(SuiteEntry("claim2_polynomial", res_c, 1e-10, res_c <= 1e-10))

    K = kelvin_matrix(np.array([1.0, 0.0, 0.0]), LameConstants(1.0, 1.0))
    ref = np.diag([2.0, 4.0 / 3.0, 4.0 / 3.0]) / EIGHT_PI
    err = float(np.abs(K - ref).max())
    out.append(SuiteEntry("kelvin_reference", err, 1e-15, err <= 1e-15))
    return out


def suite_report(entries: list[SuiteEntry], seed: int) -> dict:
    return {
        "seed": seed,
        "passed": all(e.passed for e in entries),
        "checks": [
            {"name": e.name, "worst": e.worst, "tolerance": e.tolerance, "passed": e.passed, "detail": e.detail}
            for e in entries
        ],
    }
