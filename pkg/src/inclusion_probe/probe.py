"""Indicator traces along needles and reconstruction of the inclusion boundary.

For a needle c and a parameter t, the Runge stages f_n approximate the
singular solution with pole c(t) away from the tail of the needle.  The
indicator is the limit of the gap form Q(f_n); before the needle touches
the inclusion it converges and stays bounded, after that it diverges.  The
estimated impact parameter is the first sample where the trace leaves the
bounded regime, and ∂D is recovered as the cloud of points c(t̂).

Reconstruction only ever reads measurement data through :class:`GapOracle`.
Quantities that need the true inclusion (distances, sandwich bounds,
Hausdorff errors) are computed by functions marked *validation*.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import ForwardSolver, GapOracle, cell_conductivity
from .geometry import Mesh2D, Needle, hausdorff
from .runge import DEFAULT_SCHEDULE, RungeBasis, RungeResult, runge_for_needle
from .shapes import Shape
from .singular import SingularSolution, arc_cutoff, gradient_on_cells



class TraceUnusable(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeSettings:
    """Knobs of the scan.

    ``delta``/``widen``/``max_radius`` shape the region excluded around the
    needle tail; ``ramp_deg`` enables the Γ-adapted singular target (None
    disables it).  ``spacing`` is the coarse sampling step in arclength
    (default: mesh h) and ``refine`` the subdivision factor used in the
    bracket around the first detection.
    """

    delta: float = 0.05
    widen: float = 1.0
    max_radius: float = 0.3
    boundary_margin: float = 0.0
    ramp_deg: float | None = 15.0
    schedule: tuple = DEFAULT_SCHEDULE
    spacing: float | None = None
    refine: int = 4
    start: float | None = None
    kappa: float = 10.0
    tau_abs: float = 0.0
    spread_cap: float = 0.2
    error_cap: float = 1.0
    rule: str = "threshold"
    offset: float = 0.0

    def __post_init__(self):
        if self.rule not in ("threshold", "divergence", "either"):
            raise ValueError(f"unknown decision rule {self.rule!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @classmethod
    def from_config(cls, cfg: dict) -> "ProbeSettings":
        kw = dict(cfg)
        if "schedule" in kw:
            kw["schedule"] = tuple(float(v) for v in kw["schedule"])
        if kw.get("ramp_deg", 0) is False:
            kw["ramp_deg"] = None
        known = set(cls.__dataclass_fields__)
        unknown = set(kw) - known
        if unknown:
            raise ValueError(f"unknown probe settings: {sorted(unknown)}")
        return cls(**kw)


@dataclass
class IndicatorSample:
    """Indicator at one (needle, t): stage values, best estimate and its spread."""

    t: float
    gaps: np.ndarray
    value: float
    spread: float
    stage: int
    runge_error: float
    converged: bool
    accepted: bool


def compute_indicator(oracle: GapOracle, runge: RungeResult, t: float = float("nan"), error_cap: float = 1.0,
                      spread_cap: float = 0.2) -> IndicatorSample:
    """Query the gap form at every Runge stage and summarise the limit.

    The estimate is the value at the last stable stage; the spread is the
    range over the last three stable stages.  Fewer than three stable stages
    make the sample unusable.
    """
    gaps = np.array([oracle.quadratic(f) for f in runge.coefficients])
    stable = runge.stable_stages
    if len(stable) < 3:
        return IndicatorSample(t, gaps, float("nan"), float("inf"), -1, float("nan"), False, False)
    last3 = gaps[stable[-3:]]
    stage = int(stable[-1])
    value = float(gaps[stage])
    spread = float(last3.max() - last3.min())
    scale = max(abs(value), oracle.scale * 1e-12)
    converged = spread <= spread_cap * scale
    err = float(runge.relative_errors[stage])
    accepted = bool(np.isfinite(value) and err <= error_cap)
    return IndicatorSample(t, gaps, value, spread, stage, err, converged, accepted)


@dataclass
class IndicatorTrace:
    """Samples of t ↦ I(t, c) along one needle."""

    needle_id: int
    samples: list[IndicatorSample] = field(default_factory=list)
    oracle_distance: np.ndarray | None = None  # validation only

    def sort(self) -> None:
        self.samples.sort(key=lambda s: s.t)

    @property
    def t(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])

    @property
    def accepted(self) -> np.ndarray:
        return np.array([s.accepted for s in self.samples], bool)

    @property
    def converged(self) -> np.ndarray:
        return np.array([s.converged for s in self.samples], bool)

    def rows(self) -> list[dict]:
        out = []
        for k, s in enumerate(self.samples):
            for n, g in enumerate(s.gaps):
                row = {
                    "t": s.t,
                    "n": n,
                    "gap": float(g),
                    "runge_error": s.runge_error,
                    "accepted": int(s.accepted and n == s.stage),
                }
                if self.oracle_distance is not None:
                    row["oracle_distance"] = float(self.oracle_distance[k])
                out.append(row)
        return out


@dataclass
class ImpactEstimate:
    t_hat: float
    tau: float
    index: int | None
    slope: float
    notes: list[str]


def _baseline(samples: list[IndicatorSample], t_lo: float, t_hi: float) -> float:
    quart = t_lo + 0.25 * (t_hi - t_lo)
    vals = [abs(s.value) for s in samples if s.accepted and s.converged and s.t <= quart]
    if not vals:
        vals = [abs(s.value) for s in samples if s.accepted and s.converged][:1]
    return float(np.median(vals)) if vals else 0.0


def _first_detection(samples: list[IndicatorSample], tau: float, rule: str) -> int | None:
    seen_converged = False
    for k, s in enumerate(samples):
        if not s.accepted:
            continue
        over = abs(s.value) > tau
        diverged = seen_converged and not s.converged
        if rule == "threshold" and over:
            return k
        if rule == "divergence" and diverged:
            return k
        if rule == "either" and (over or diverged):
            return k
        seen_converged |= s.converged
    return None


def estimate_impact_parameter(
    trace: IndicatorTrace,
    settings: ProbeSettings = ProbeSettings(),
    t_range: tuple[float, float] | None = None,
    tau_floor: float = 0.0,
) -> ImpactEstimate:
    """First sample where the trace leaves the bounded regime (t̂ = 1 if none).

    With the ``threshold`` rule the bound is ``τ = max(τ_abs, κ·median|Î|)``
    over accepted samples in the first quarter of the scanned range;
    ``divergence`` uses the loss of stage-to-stage convergence instead and
    ``either`` fires on whichever comes first.  ``tau_floor`` is a lower
    bound for τ supplied by the caller (the prober passes ``1e-8·scale`` so
    that roundoff in a null experiment never crosses).
    """
    trace.sort()
    s = trace.samples
    acc = [x for x in s if x.accepted]
    if len(acc) == 0:
        raise TraceUnusable(f"trace of needle {trace.needle_id} is unusable: every sample was rejected")
    notes: list[str] = []
    if len(acc) < 5:
        notes.append(f"only {len(acc)} accepted samples")
    lo, hi = t_range if t_range is not None else (s[0].t, s[-1].t)
    tau = max(settings.tau_abs, tau_floor, settings.kappa * _baseline(s, lo, hi))
    k = _first_detection(s, tau, settings.rule)
    if k is None:
        return ImpactEstimate(1.0, tau, None, float("nan"), notes + ["no detection"])
    pre = [x for x in s[:k] if x.accepted][-5:]
    slope = float("nan")
    if len(pre) >= 3:
        tt = np.array([x.t for x in pre])
        vv = np.abs([x.value for x in pre])
        dist = np.maximum(s[k].t - tt, 1e-12)
        slope = float(np.polyfit(np.log(1 / dist), vv, 1)[0])
    t_hat = float(min(1.0, s[k].t + settings.offset))
    return ImpactEstimate(t_hat, tau, k, slope, notes)


# ----------------------------------------------------------------------------
# scanning


class Prober:
    """Runs indicator scans for one measurement setup.

    Only the oracle, the mesh, γ₀ and Γ enter; the interior conductivity and
    the inclusion are never consulted.
    """

    def __init__(self, mesh: Mesh2D, gamma0, oracle: GapOracle, settings: ProbeSettings = ProbeSettings(),
                 solver: ForwardSolver | None = None, basis: RungeBasis | None = None):
        self.mesh = mesh
        self.gamma0 = gamma0
        self.oracle = oracle
        self.settings = settings
        self.solver = solver or ForwardSolver(mesh, gamma0)
        self.basis = basis or RungeBasis.for_mesh(mesh, gamma0, solver=self.solver)
        self.arc_weight = None if settings.ramp_deg is None else arc_cutoff(mesh, settings.ramp_deg)
        self.tau_floor = 1e-8 * oracle.scale

    def estimate(self, trace: IndicatorTrace, needle: Needle, settings: ProbeSettings | None = None) -> ImpactEstimate:
        t0, t1, _ = self.t_range(needle)
        return estimate_impact_parameter(trace, settings or self.settings, (t0, t1), self.tau_floor)

    def sample(self, needle: Needle, t: float) -> tuple[IndicatorSample, SingularSolution, RungeResult]:
        st = self.settings
        r, sol, _ = runge_for_needle(
            self.basis,
            self.gamma0,
            needle,
            t,
            st.delta,
            schedule=st.schedule,
            widen=st.widen,
            boundary_margin=st.boundary_margin,
            max_radius=st.max_radius,
            arc_weight=self.arc_weight,
        )
        return compute_indicator(self.oracle, r, t, st.error_cap, st.spread_cap), sol, r

    def t_range(self, needle: Needle) -> tuple[float, float, float]:
        st = self.settings
        h = self.mesh.h
        step = (st.spacing or h) / needle.length
        t0 = (st.start if st.start is not None else 2 * h) / needle.length
        t1 = 1.0 - 2 * h / needle.length
        return t0, t1, step

    def scan(self, needle: Needle, needle_id: int = 0) -> tuple[IndicatorTrace, ImpactEstimate]:
        """Coarse scan until the first detection, then a refined pass over the bracket."""
        st = self.settings
        t0, t1, step = self.t_range(needle)
        trace = IndicatorTrace(needle_id)
        grid = np.arange(t0, t1 + 1e-12, step)
        est = None
        for t in grid:
            trace.samples.append(self.sample(needle, float(t))[0])
            est = self.estimate(trace, needle)
            if est.index is not None:
                break
        if est is None or est.index is None:
            return trace, self.estimate(trace, needle)
        hit = trace.samples[est.index].t
        lo = max(t0, hit - step)
        for t in np.linspace(lo, hit, st.refine + 1)[1:-1]:
            trace.samples.append(self.sample(needle, float(t))[0])
        trace.sort()
        return trace, self.estimate(trace, needle)

    def full_trace(self, needle: Needle, needle_id: int = 0, stop: float = 1.0) -> IndicatorTrace:
        """Samples on the whole coarse grid up to parameter ``stop`` (no early exit)."""
        t0, t1, step = self.t_range(needle)
        trace = IndicatorTrace(needle_id)
        for t in np.arange(t0, min(t1, stop) + 1e-12, step):
            trace.samples.append(self.sample(needle, float(t))[0])
        return trace

    def scan_all(self, needles: list[Needle], jobs: int = 1) -> list[tuple[IndicatorTrace, ImpactEstimate]]:
        work = list(enumerate(needles))
        if jobs <= 1:
            return [self.scan(n, i) for i, n in work]
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(lambda p: self.scan(p[1], p[0]), work))


@dataclass
class PointCloud:
    points: np.ndarray
    needle_ids: list[int]
    t_hats: list[float]
    hausdorff: float | None = None  # validation only

    def to_json(self) -> list[dict]:
        return [
            {"x": float(p[0]), "y": float(p[1]), "needle_id": int(i), "t_hat": float(t)}
            for p, i, t in zip(self.points, self.needle_ids, self.t_hats)
        ]


def reconstruct_boundary(
    estimates: list[ImpactEstimate], needles: list[Needle], truth: Shape | None = None, ids: list[int] | None = None
) -> PointCloud:
    """Points c(t̂) for every needle with t̂ < 1; Hausdorff error to ``truth`` in validation mode."""
    ids = list(range(len(needles))) if ids is None else ids
    pts, nid, th = [], [], []
    for i, e, n in zip(ids, estimates, needles):
        if e.t_hat < 1.0:
            pts.append(n(e.t_hat))
            nid.append(i)
            th.append(e.t_hat)
    P = np.array(pts).reshape(-1, 2)
    hd = None
    if truth is not None and len(P):
        ref = truth.boundary_samples(truth.perimeter / 2000)
        hd = hausdorff(P, ref)
    return PointCloud(P, nid, th, hd)


def calibrate_kappa(
    prober: Prober,
    traces: list[IndicatorTrace],
    needles: list[Needle],
    impacts: list[float],
    grid=(2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0, 10.0),
) -> tuple[float, dict[float, float]]:
    """Pick κ minimising the worst arclength error of t̂ on a reference inclusion (validation).

    ``traces`` must be full traces (see :meth:`Prober.full_trace`) recorded
    against a synthetic reference scenario whose impact parameters
    ``impacts`` are known.  Returns the best κ and the error for every κ.
    """
    table = {}
    for kappa in grid:
        st = replace(prober.settings, kappa=float(kappa))
        worst = 0.0
        for tr, nd, ti in zip(traces, needles, impacts):
            est = prober.estimate(tr, nd, st)
            worst = max(worst, abs(est.t_hat - ti) * nd.length)
        table[float(kappa)] = worst
    best = min(table, key=lambda k: (table[k], k))
    return best, table


def one_sided_distance(cloud: PointCloud, truth: Shape) -> float:
    """Max distance from cloud points to ∂D (validation)."""
    if len(cloud.points) == 0:
        return 0.0
    return float(np.max(np.abs(truth.signed_distance(cloud.points))))


# ----------------------------------------------------------------------------
# validation helpers


def sandwich_bounds(mesh: Mesh2D, scenario, sol: SingularSolution) -> tuple[float, float]:
    """Lower and upper bounds ``∫_D (γ₀⁻¹ − γ⁻¹)γ₀²|∇G|²`` and ``∫_D (γ − γ₀)|∇G|²`` (validation)."""
    inD = mesh.cells_inside(scenario.inclusion)
    cells = np.flatnonzero(inD)
    g = cell_conductivity(mesh, scenario)[cells]
    g0 = cell_conductivity(mesh, scenario.gamma0)[cells]
    grad = gradient_on_cells(sol, cells, min_distance=0.0)
    sq = np.einsum("md,md->m", grad, grad) * mesh.areas[cells]
    lower = float(np.sum((1 / g0 - 1 / g) * g0**2 * sq))
    upper = float(np.sum((g - g0) * sq))
    return lower, upper


def oracle_distances(needle: Needle, ts, inclusion: Shape | None) -> np.ndarray:
    """Distance from c(t) to ∂D for each t (validation)."""
    if inclusion is None:
        return np.full(len(ts), np.inf)
    return np.abs(inclusion.signed_distance(needle(np.asarray(ts))))
