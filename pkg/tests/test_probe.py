import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inclusion_probe.fem import GapOracle, SupportError
from inclusion_probe.geometry import Needle, impact_parameter_oracle
from inclusion_probe.probe import (
    ImpactEstimate,
    IndicatorSample,
    IndicatorTrace,
    ProbeSettings,
    Prober,
    TraceUnusable,
    calibrate_kappa,
    compute_indicator,
    estimate_impact_parameter,
    one_sided_distance,
    oracle_distances,
    reconstruct_boundary,
    sandwich_bounds,
)
from inclusion_probe.runge import RungeResult
from inclusion_probe.scenario import CoefficientField, ConductivityScenario

from conftest import PHANTOM_DISK, UNIT_DISK, disk_phantom

SCHEDULE = tuple(10.0 ** -np.arange(1, 15))
SETTINGS = ProbeSettings(kappa=4.0, schedule=SCHEDULE)
DIAMETER = Needle(np.array([[1.0, 0.0], [-1.0, 0.0]]), "diameter")


def sample(t, value, accepted=True, converged=True):
    return IndicatorSample(t, np.array([value]), value, 0.0, 0, 0.0, converged, accepted)


def synthetic_trace(values, ts=None):
    ts = np.linspace(0.05, 0.95, len(values)) if ts is None else ts
    return IndicatorTrace(0, [sample(t, v) for t, v in zip(ts, values)])


@pytest.fixture(scope="module")
def prober_factory(phantom_mesh):
    cache = {}

    def make(gamma_inside=3.0, null=False):
        key = (gamma_inside, null)
        if key not in cache:
            sc = ConductivityScenario(UNIT_DISK, CoefficientField.constant(1.0)) if null else disk_phantom(gamma_inside)
            cache[key] = Prober(phantom_mesh, 1.0, GapOracle.from_scenario(phantom_mesh, sc), SETTINGS)
        return cache[key]

    return make


def test_threshold_detection_on_synthetic_trace():
    vals = [1.0] * 10 + [2.0, 3.0, 50.0, 80.0]
    tr = synthetic_trace(vals)
    est = estimate_impact_parameter(tr, ProbeSettings(kappa=10.0))
    assert est.index == 12
    assert est.t_hat == pytest.approx(tr.t[12])
    assert est.tau == pytest.approx(10.0)
    assert np.isfinite(est.slope)


def test_flat_trace_gives_one():
    est = estimate_impact_parameter(synthetic_trace([1.0] * 12), ProbeSettings(kappa=2.0))
    assert est.t_hat == 1.0 and est.index is None


def test_all_rejected_trace_is_unusable():
    tr = IndicatorTrace(3, [sample(t, 1.0, accepted=False) for t in (0.1, 0.2, 0.3)])
    with pytest.raises(TraceUnusable, match="unusable"):
        estimate_impact_parameter(tr)


def test_divergence_rule_uses_convergence_loss():
    s = [sample(t, 1.0) for t in (0.1, 0.2, 0.3)] + [sample(0.4, 1.1, converged=False)]
    est = estimate_impact_parameter(IndicatorTrace(0, s), ProbeSettings(rule="divergence"))
    assert est.t_hat == pytest.approx(0.4)


@settings(max_examples=50, deadline=None)
@given(
    vals=st.lists(st.floats(1e-3, 1e3), min_size=6, max_size=30),
    c=st.floats(1e-3, 1e3),
    k1=st.floats(1.5, 20.0),
    k2=st.floats(1.5, 20.0),
)
def test_estimator_scale_invariant_and_monotone_in_kappa(vals, c, k1, k2):
    lo, hi = sorted((k1, k2))
    a = estimate_impact_parameter(synthetic_trace(vals), ProbeSettings(kappa=lo))
    b = estimate_impact_parameter(synthetic_trace([c * v for v in vals]), ProbeSettings(kappa=lo))
    assert a.index == b.index
    c_hi = estimate_impact_parameter(synthetic_trace(vals), ProbeSettings(kappa=hi))
    assert c_hi.t_hat >= a.t_hat


def test_compute_indicator_needs_three_stable_stages():
    class StubOracle:
        scale = 1.0

        def quadratic(self, f):
            return float(np.sum(f))

    coeffs = np.ones((4, 5))
    res = RungeResult(
        rhos=np.array([1e-1, 1e-2, 1e-3, 1e-4]), coefficients=coeffs, errors=np.ones(4), relative_errors=np.full(4, 0.1),
        objective=np.ones(4), condition=np.ones(4), target_norm=1.0, breach_index=2,
    )
    s = compute_indicator(StubOracle(), res, 0.5)
    assert not s.accepted and s.stage == -1
    res.breach_index = None
    s = compute_indicator(StubOracle(), res, 0.5)
    assert s.accepted and s.converged and s.value == 5.0 and s.spread == 0.0


def test_settings_validation():
    with pytest.raises(ValueError):
        ProbeSettings(rule="guess")
    with pytest.raises(ValueError):
        ProbeSettings.from_config({"kappa": 4, "bogus": 1})
    assert ProbeSettings.from_config({"schedule": [1e-1, 1e-2]}).schedule == (0.1, 0.01)


def test_null_scenario(prober_factory):
    pr = prober_factory(null=True)
    tr, est = pr.scan(DIAMETER)
    assert est.t_hat == 1.0
    assert np.all(np.abs(tr.values[tr.accepted]) <= 1e-8 * pr.oracle.scale)
    cloud = reconstruct_boundary([est], [DIAMETER], truth=None)
    assert len(cloud.points) == 0 and cloud.to_json() == []


def test_diameter_needle_impact(prober_factory, phantom_mesh):
    pr = prober_factory()
    _, est = pr.scan(DIAMETER)
    truth = impact_parameter_oracle(DIAMETER, PHANTOM_DISK)
    assert truth == pytest.approx(0.3)
    assert abs(est.t_hat - truth) * DIAMETER.length <= 2 * phantom_mesh.h


def test_needle_missing_inclusion(prober_factory):
    y = 0.55  # distance 0.25 > 4·delta from the phantom
    x = np.sqrt(1 - y * y)
    nd = Needle(np.array([[x, y], [-x, y]]))
    assert impact_parameter_oracle(nd, PHANTOM_DISK) == 1.0
    _, est = prober_factory().scan(nd)
    assert est.t_hat == 1.0


@pytest.mark.parametrize("gamma_inside, sign", [(3.0, 1.0), (0.3, -1.0)])
def test_sign_law_before_impact(prober_factory, gamma_inside, sign):
    pr = prober_factory(gamma_inside)
    tr = pr.full_trace(DIAMETER, stop=0.29)
    tol = np.array([s.spread for s in tr.samples]) + 1e-8 * pr.oracle.scale
    assert np.all(sign * tr.values[tr.accepted] >= -tol[tr.accepted])


def test_sandwich_away_from_inclusion(prober_factory, phantom_mesh):
    pr = prober_factory()
    for t in (0.05, 0.1, 0.15, 0.2):
        s, sol, _ = pr.sample(DIAMETER, t)
        lo, up = sandwich_bounds(phantom_mesh, disk_phantom(), sol)
        tol = s.spread + 1e-8 * pr.oracle.scale
        assert lo - tol <= s.value <= up + tol


def test_reconstruct_and_distances():
    needles = [DIAMETER, Needle(np.array([[0.0, 1.0], [0.0, -1.0]]))]
    ests = [ImpactEstimate(0.3, 1.0, 3, 0.0, []), ImpactEstimate(1.0, 1.0, None, 0.0, [])]
    cloud = reconstruct_boundary(ests, needles, truth=PHANTOM_DISK)
    assert cloud.points.shape == (1, 2)
    assert cloud.points[0] == pytest.approx([0.4, 0.0])
    assert cloud.hausdorff == pytest.approx(0.6, abs=1e-3)
    assert one_sided_distance(cloud, PHANTOM_DISK) <= 1e-12
    assert cloud.to_json() == [{"x": 0.4, "y": 0.0, "needle_id": 0, "t_hat": 0.3}]
    d = oracle_distances(DIAMETER, [0.0, 0.3], PHANTOM_DISK)
    assert d == pytest.approx([0.6, 0.0], abs=1e-12)
    assert np.all(np.isinf(oracle_distances(DIAMETER, [0.1], None)))


def test_calibrate_kappa_prefers_accurate_threshold(prober_factory):
    pr = prober_factory()
    ts = np.linspace(0.05, 0.95, 19)
    vals = np.where(ts < 0.5, 1.0, 100.0)
    vals[ts < 0.25] = 0.5
    vals[(ts >= 0.4) & (ts < 0.5)] = 3.0
    tr = synthetic_trace(list(vals), ts)
    best, table = calibrate_kappa(pr, [tr], [DIAMETER], [0.5], grid=(2.0, 10.0))
    assert best == 10.0
    assert table[10.0] < table[2.0]


def test_oracle_rejects_data_off_gamma(prober_factory, phantom_mesh):
    pr = prober_factory()
    with pytest.raises(SupportError):
        pr.oracle.quadratic(np.ones(len(phantom_mesh.boundary_nodes)))


def test_trace_rows(prober_factory):
    pr = prober_factory()
    tr = pr.full_trace(DIAMETER, stop=0.1)
    tr.oracle_distance = oracle_distances(DIAMETER, tr.t, PHANTOM_DISK)
    rows = tr.rows()
    assert set(rows[0]) == {"t", "n", "gap", "runge_error", "accepted", "oracle_distance"}
    assert sum(r["accepted"] for r in rows) == int(tr.accepted.sum())
