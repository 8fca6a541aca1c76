"""Conductivity phantoms: background γ₀, an inclusion D and the interior value.

Coefficient fields are declarative: a constant, a radial table about a
centre, or an arithmetic expression in ``x`` and ``y``.  Expressions are
parsed once into a small tree that evaluates vectorised over point arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .shapes import Disk, Polygon, Shape, ShapeError, shape_from_dict

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ExpressionError(ValueError):
    pass


class EvaluationError(ValueError):
    """Domain error while evaluating a coefficient (e.g. log of a nonpositive number)."""

    def __init__(self, message: str, point=None):
        super().__init__(message if point is None else f"{message} at point ({point[0]:.6g}, {point[1]:.6g})")
        self.point = point


# ----------------------------------------------------------------------------
# expression parser

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^()]))")
_FUNCS = {"exp", "log", "sqrt"}
_VARS = {"x", "y"}


def _tokenize(src: str) -> list[tuple[str, str]]:
    out, pos = [], 0
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {src[pos:].strip()[:1]!r} at offset {pos}")
        num, name, op = m.groups()
        if num is not None:
            out.append(("num", num))
        elif name is not None:
            if name not in _FUNCS and name not in _VARS:
                raise ExpressionError(f"unknown name {name!r}")
            out.append(("name", name))
        else:
            out.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return out


@dataclass(frozen=True)
class Node:
    op: str  # num | var | neg | + - * / ^ | exp log sqrt
    args: tuple = ()
    value: float = 0.0
    name: str = ""


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := unary (('*'|'/') unary)*
    # unary  := '-' unary | '+' unary | power
    # power  := atom ('^' unary)?        (right associative, binds tighter than unary minus)
    # atom   := number | var | func '(' expr ')' | '(' expr ')'
    def __init__(self, tokens):
        self.t = tokens
        self.i = 0

    def peek(self):
        return self.t[self.i] if self.i < len(self.t) else (None, None)

    def take(self, kind=None, val=None):
        k, v = self.peek()
        if k is None or (kind and k != kind) or (val and v != val):
            raise ExpressionError(f"expected {val or kind}, found {v!r}")
        self.i += 1
        return v

    def parse(self) -> Node:
        if not self.t:
            raise ExpressionError("empty expression")
        n = self.expr()
        if self.i != len(self.t):
            raise ExpressionError(f"trailing input starting at {self.peek()[1]!r}")
        return n

    def expr(self):
        n = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()
            n = Node(op, (n, self.term()))
        return n

    def term(self):
        n = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()
            n = Node(op, (n, self.unary()))
        return n

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return Node("neg", (self.unary(),))
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return Node("^", (base, self.unary()))
        return base

    def atom(self):
        k, v = self.peek()
        if k == "num":
            self.take()
            return Node("num", value=float(v))
        if k == "name":
            self.take()
            if v in _VARS:
                return Node("var", name=v)
            self.take("op", "(")
            arg = self.expr()
            self.take("op", ")")
            return Node(v, (arg,))
        if (k, v) == ("op", "("):
            self.take()
            n = self.expr()
            self.take("op", ")")
            return n
        raise ExpressionError(f"unexpected token {v!r}")


def parse_expression(src: str) -> Node:
    return _Parser(_tokenize(src)).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def format_expression(n: Node) -> str:
    """Canonical, fully re-parseable text for a parsed tree."""
    if n.op == "num":
        return repr(n.value) if n.value >= 0 else f"({n.value!r})"
    if n.op == "var":
        return n.name
    if n.op in _FUNCS:
        return f"{n.op}({format_expression(n.args[0])})"
    if n.op == "neg":
        a = n.args[0]
        s = format_expression(a)
        return f"-({s})" if _PREC.get(a.op, 9) < _PREC["^"] else f"-{s}"
    a, b = n.args
    sa, sb = format_expression(a), format_expression(b)
    p = _PREC[n.op]
    if n.op == "^":
        # left operand must be an atom; right side may be any unary
        sa = sa if _PREC.get(a.op, 9) > p else f"({sa})"
        sb = sb if _PREC.get(b.op, 9) >= _PREC["neg"] else f"({sb})"
        return f"{sa}^{sb}"
    sa = sa if _PREC.get(a.op, 9) >= p else f"({sa})"
    sb = sb if _PREC.get(b.op, 9) > p else f"({sb})"
    return f"{sa} {n.op} {sb}"


def _eval(n: Node, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    op = n.op
    if op == "num":
        return np.full(x.shape, n.value)
    if op == "var":
        return x if n.name == "x" else y
    if op == "neg":
        return -_eval(n.args[0], x, y)
    if op in _FUNCS:
        a = _eval(n.args[0], x, y)
        if op == "log":
            bad = a <= 0
            if np.any(bad):
                k = int(np.flatnonzero(bad)[0])
                raise EvaluationError("log of a nonpositive value", (x[k], y[k]))
            return np.log(a)
        if op == "sqrt":
            bad = a < 0
            if np.any(bad):
                k = int(np.flatnonzero(bad)[0])
                raise EvaluationError("sqrt of a negative value", (x[k], y[k]))
            return np.sqrt(a)
        with np.errstate(over="ignore"):
            return np.exp(a)
    a = _eval(n.args[0], x, y)
    b = _eval(n.args[1], x, y)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        bad = b == 0
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise EvaluationError("division by zero", (x[k], y[k]))
        return a / b
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        r = np.power(a, b)
    bad = ~np.isfinite(r) & np.isfinite(a) & np.isfinite(b)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise EvaluationError("power outside its real domain", (x[k], y[k]))
    return r


# ----------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientField:
    """Scalar field on the plane.

    ``kind`` is ``constant`` (uses ``value``), ``radial`` (piecewise linear
    in the distance to ``center`` through the ``radii``/``values`` table,
    constant beyond the ends) or ``expression`` (text in ``expr``).
    """

    kind: str = "constant"
    value: float = 1.0
    expr: str = ""
    center: tuple[float, float] = (0.0, 0.0)
    radii: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    _tree: Node | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "expression":
            object.__setattr__(self, "_tree", parse_expression(self.expr))
        elif self.kind == "radial":
            r = np.asarray(self.radii, float)
            if len(r) < 1 or len(r) != len(self.values) or np.any(np.diff(r) <= 0):
                raise ValueError("radial profile needs matching, strictly increasing radii and values")
        elif self.kind != "constant":
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        return cls("constant", value=float(value))

    @classmethod
    def expression(cls, text: str) -> "CoefficientField":
        return cls("expression", expr=text)

    @classmethod
    def from_config(cls, spec) -> "CoefficientField":
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        if isinstance(spec, str):
            try:
                return cls.constant(float(spec))
            except ValueError:
                return cls.expression(spec)
        kind = spec.get("kind", "constant")
        if kind == "constant":
            return cls.constant(spec["value"])
        if kind == "expression":
            return cls.expression(spec["expr"])
        if kind == "radial":
            return cls(
                "radial",
                center=tuple(map(float, spec.get("center", (0.0, 0.0)))),
                radii=tuple(map(float, spec["radii"])),
                values=tuple(map(float, spec["values"])),
            )
        raise ValueError(f"unknown coefficient kind {kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = p.reshape(-1, 2)
        if self.kind == "constant":
            out = np.full(len(p), float(self.value))
        elif self.kind == "radial":
            r = np.linalg.norm(p - np.asarray(self.center), axis=1)
            out = np.interp(r, self.radii, self.values)
        else:
            out = _eval(self._tree, p[:, 0].copy(), p[:, 1].copy())
        return float(out[0]) if single else out

    def gradient(self, points, step: float = 1e-6) -> np.ndarray:
        """Central-difference gradient (exact zero for constants)."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind == "constant":
            return np.zeros_like(p)
        ex = np.array([step, 0.0])
        ey = np.array([0.0, step])
        gx = (self(p + ex) - self(p - ex)) / (2 * step)
        gy = (self(p + ey) - self(p - ey)) / (2 * step)
        return np.column_stack([gx, gy])

    def describe(self) -> str:
        if self.kind == "constant":
            return repr(float(self.value))
        if self.kind == "expression":
            return format_expression(self._tree)
        return f"radial(center={self.center}, radii={self.radii}, values={self.values})"


# ----------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class ConductivityScenario:
    """Domain, background conductivity and an optional inclusion."""

    domain: Shape
    gamma0: CoefficientField
    inclusion: Shape | None = None
    gamma_inside: CoefficientField | None = None

    def __post_init__(self):
        if self.inclusion is not None:
            if self.gamma_inside is None:
                raise ValueError("an inclusion needs an interior conductivity")
            probe = self.inclusion.boundary_samples(self.inclusion.perimeter / 512)
            if np.max(self.domain.signed_distance(probe)) >= 0:
                raise ShapeError("inclusion closure must lie in the domain interior")

    @property
    def is_null(self) -> bool:
        return self.inclusion is None

    def background(self) -> "ConductivityScenario":
        return ConductivityScenario(self.domain, self.gamma0)

    def gamma(self, points) -> np.ndarray:
        return eval_conductivity(self, points)


def eval_conductivity(scenario: ConductivityScenario, points) -> np.ndarray | float:
    """γ at ``points``: γ₀ outside D, the interior field on the closure of D."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 2)
    out = np.asarray(scenario.gamma0(p), dtype=float)
    if scenario.inclusion is not None:
        inside = scenario.inclusion.contains(p)
        if np.any(inside):
            out = out.copy()
            out[inside] = scenario.gamma_inside(p[inside])
    return float(out[0]) if single else out


def signed_distance(shape: Shape, points) -> np.ndarray | float:
    """Signed distance to the shape boundary, negative inside."""
    p = np.asarray(points, dtype=float)
    d = shape.signed_distance(p.reshape(-1, 2))
    return float(d[0]) if p.ndim == 1 else d


@dataclass
class AdmissibilityReport:
    passed: bool
    gamma_min: float
    gamma_max: float
    boundary_points: np.ndarray
    jump_sign: np.ndarray  # +1, -1 or 0 (mixed / vanishing) per boundary point
    jump_min_abs: np.ndarray
    failures: list[str]

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "gamma_min": self.gamma_min,
            "gamma_max": self.gamma_max,
            "jump_signs": sorted({int(s) for s in self.jump_sign}),
            "min_jump_magnitude": float(self.jump_min_abs.min()) if len(self.jump_min_abs) else None,
            "failures": self.failures,
        }


def validate_admissibility(
    scenario: ConductivityScenario,
    sample_density: int = 64,
    h: float = 0.02,
    lower: float = 1e-8,
    upper: float = 1e8,
    jump_floor: float = 1e-6,
    n_boundary: int = 64,
) -> AdmissibilityReport:
    """Sample positivity/boundedness and the one-signed jump near the inclusion boundary.

    Grids are nested: density ``2d`` contains every sample of density ``d``,
    so a failure found at ``d`` persists when the density is doubled.
    """
    if sample_density < 16:
        raise ValueError("sample_density must be at least 16")
    failures: list[str] = []
    lo, hi = scenario.domain.bbox()
    s = np.linspace(0.0, 1.0, sample_density + 1)
    X, Y = np.meshgrid(lo[0] + s * (hi[0] - lo[0]), lo[1] + s * (hi[1] - lo[1]))
    grid = np.column_stack([X.ravel(), Y.ravel()])
    grid = grid[scenario.domain.signed_distance(grid) <= 0]
    if scenario.inclusion is not None:
        grid = np.vstack([grid, scenario.inclusion.boundary_samples(scenario.inclusion.perimeter / n_boundary)])

    gmin, gmax = np.inf, -np.inf
    try:
        g0 = scenario.gamma0(grid)
        g = eval_conductivity(scenario, grid)
        vals = np.concatenate([g0, g])
        gmin, gmax = float(np.min(vals)), float(np.max(vals))
        if not np.all(np.isfinite(vals)):
            failures.append("conductivity is not finite at some sample")
        if gmin < lower:
            failures.append(f"positivity violated: min sampled conductivity {gmin:.4g}")
        if gmax > upper:
            failures.append(f"boundedness violated: max sampled conductivity {gmax:.4g}")
    except EvaluationError as e:
        failures.append(f"evaluation failed: {e}")

    bpts = np.empty((0, 2))
    signs = np.empty(0, int)
    mags = np.empty(0)
    if scenario.inclusion is not None:
        D = scenario.inclusion
        bpts = D.boundary_samples(D.perimeter / n_boundary)[:n_boundary]
        delta = 2 * h
        rr = delta * np.linspace(0, 1, sample_density // 8 + 1)
        th = 2 * np.pi * np.arange(sample_density) / sample_density
        offs = (rr[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]).reshape(-1, 2)
        signs = np.zeros(len(bpts), int)
        mags = np.zeros(len(bpts))
        for k, a in enumerate(bpts):
            pts = a + offs
            pts = pts[D.contains(pts)]
            try:
                jump = scenario.gamma_inside(pts) - scenario.gamma0(pts)
            except EvaluationError as e:
                failures.append(f"evaluation failed near boundary point {k}: {e}")
                continue
            mags[k] = np.min(np.abs(jump))
            if np.all(jump >= jump_floor):
                signs[k] = 1
            elif np.all(jump <= -jump_floor):
                signs[k] = -1
        if np.any(signs == 0):
            failures.append(f"jump vanishes or changes sign near {int(np.sum(signs == 0))} boundary points")
        elif len(set(signs.tolist())) > 1:
            failures.append("jump sign differs between parts of the inclusion boundary")
    return AdmissibilityReport(not failures, gmin, gmax, bpts, signs, mags, failures)


# ----------------------------------------------------------------------------
# config files


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    """Read a TOML scenario file."""
    try:
        with open(Path(path), "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _section(cfg: dict, key: str, build):
    try:
        return build(cfg[key])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"section [{key}]: {e}") from e


def scenario_from_config(cfg: dict) -> ConductivityScenario:
    for key in ("domain", "gamma0"):
        if key not in cfg:
            raise ConfigError(f"missing required section [{key}]")
    domain = _section(cfg, "domain", shape_from_dict)
    gamma0 = _section(cfg, "gamma0", CoefficientField.from_config)
    inc = cfg.get("inclusion")
    if inc is None or inc.get("kind", "disk") == "none":
        return ConductivityScenario(domain, gamma0)
    if "gamma_inside" not in cfg:
        raise ConfigError("missing required section [gamma_inside] for the inclusion")
    inclusion = _section(cfg, "inclusion", shape_from_dict)
    gamma_inside = _section(cfg, "gamma_inside", CoefficientField.from_config)
    try:
        return ConductivityScenario(domain, gamma0, inclusion, gamma_inside)
    except ValueError as e:
        raise ConfigError(f"section [inclusion]: {e}") from e


def require_sections(cfg: dict, names: list[str]) -> None:
    for n in names:
        if n not in cfg:
            raise ConfigError(f"missing required section [{n}]")


__all__ = [
    "AdmissibilityReport",
    "CoefficientField",
    "ConductivityScenario",
    "ConfigError",
    "Disk",
    "EvaluationError",
    "ExpressionError",
    "Polygon",
    "eval_conductivity",
    "format_expression",
    "load_config",
    "parse_expression",
    "require_sections",
    "scenario_from_config",
    "signed_distance",
    "validate_admissibility",
]
