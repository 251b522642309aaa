import json

import numpy as np
import pytest

from ecrflow.custom import DEFAULT_PIECEWISE_CONSTANT, custom_nonlinear_model, piecewise_constant_model
from ecrflow.errors import NoImpact, SectionOnDiscontinuity
from ecrflow.flow import IntegratorConfig
from ecrflow.model import EventModel
from ecrflow.oscillators import Sync1Params, sync1_local_model, sync1_model, sync1_orbit, sync1_section
from ecrflow.poincare import (
    PerturbationTooLarge,
    Section,
    flowbox_chart,
    impact_map,
    orbit_from_anchor,
    perturbation_experiment,
    poincare_derivative,
    poincare_fd,
    poincare_map,
    return_time,
    stability_test,
    time_to_impact,
)
from ecrflow.variational import enumerate_words


def hopf_model():
    """Limit cycle r = 1 with radial rate -2; the single surface is never reached."""

    def F(b, x):
        r2 = x @ x
        return np.array([x[0] * (1 - r2) - x[1], x[1] * (1 - r2) + x[0]])

    fields = {(-1,): lambda x: F(None, x), (1,): lambda x: F(None, x)}
    return EventModel.from_fields(lambda x: np.array([x[0] - 10.0]), fields, [10.0, 0.0], 0.5)


def test_smooth_orbit_matches_classical_monodromy(tight):
    m = hopf_model()
    sec = Section.linear([0.0, 1.0], [1.0, 0.0])
    orbit = orbit_from_anchor(m, sec, 2 * np.pi, tight)
    assert orbit.period == pytest.approx(2 * np.pi, abs=1e-8)
    pd = poincare_derivative(m, orbit, sec, tight)
    assert list(pd.matrices) == ["smooth"]
    assert pd.matrices["smooth"][0, 0] == pytest.approx(np.exp(-4 * np.pi), rel=1e-5)
    assert poincare_fd(m, orbit, sec, 1e-5, tight)[0, 0] == pytest.approx(np.exp(-4 * np.pi), rel=1e-4)


def test_time_to_impact_on_constant_field():
    m = piecewise_constant_model(**DEFAULT_PIECEWISE_CONSTANT)
    sec = Section.linear([1.0, 0.0], [1.0, 0.0])
    # after the surfaces the field is (0.6, 0.6); x_1 = 0.5 -> 1 takes 0.5 / 0.6
    assert time_to_impact(m, [0.5, 0.5], sec) == pytest.approx(0.5 / 0.6, abs=1e-10)
    np.testing.assert_allclose(impact_map(m, [0.5, 0.5], sec), [1.0, 0.5 + 0.5], atol=1e-10)
    # from beyond the section the signed time is negative
    assert time_to_impact(m, [1.3, 0.5], sec) == pytest.approx(-0.5, abs=1e-10)


def test_no_impact_within_horizon():
    m = piecewise_constant_model(**DEFAULT_PIECEWISE_CONSTANT)
    sec = Section.linear([1.0, 0.0], [100.0, 0.0])
    with pytest.raises(NoImpact):
        time_to_impact(m, [0.5, 0.5], sec, IntegratorConfig(horizon=1.0))


def test_section_on_a_surface_is_rejected(tight):
    p = Sync1Params(2)
    m, orbit, _ = sync1_orbit(p, tight)
    bad = sync1_section(p, level=-p.Delta)
    with pytest.raises(SectionOnDiscontinuity):
        poincare_derivative(m, orbit, bad, tight)


@pytest.mark.parametrize("nu,delta", [(1.0, 0.5), (1.0, 0.1), (2.0, 1.5)])
def test_sync1_stability_verdict(nu, delta, tight):
    p = Sync1Params(2, nu, delta)
    m, orbit, sec = sync1_orbit(p, tight)
    assert return_time(m, orbit, sec, sec.anchor, tight) == pytest.approx(p.period, abs=1e-9)
    rep = stability_test(poincare_derivative(m, orbit, sec, tight))
    assert rep.verdict == "ExponentiallyStable"
    assert rep.contraction == pytest.approx(p.contraction, abs=1e-6)


def test_poincare_fd_along_each_cone_direction(tight):
    p = Sync1Params(3, 1.0, 0.5)
    m, orbit, sec = sync1_orbit(p, tight)
    pd = poincare_derivative(m, orbit, sec, tight)
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(5, 2))
    cols = poincare_fd(m, orbit, sec, 1e-5, tight, directions=dirs)
    for u, col in zip(dirs, cols.T):
        np.testing.assert_allclose(col, p.contraction * u, rtol=1e-4)
    assert len(pd.matrices) == len(enumerate_words(3)) ** len(pd.clusters)


def test_report_serialization(tight):
    p = Sync1Params(2)
    m, orbit, sec = sync1_orbit(p, tight)
    rep = stability_test(poincare_derivative(m, orbit, sec, tight), tolerances={"event_tol": 1e-10})
    doc = json.loads(rep.to_text())
    assert doc["verdict"] == "ExponentiallyStable" and doc["norm"] == "euclidean"
    assert doc["tolerances"] == {"event_tol": 1e-10}
    assert all(len(w["singular_values"]) == 1 for w in doc["words"])
    assert stability_test(poincare_derivative(m, orbit, sec, tight), margin=0.9).verdict == "Inconclusive"


def test_iterated_return_map_converges(tight):
    p = Sync1Params(2, 1.0, 0.5)
    m, orbit, sec = sync1_orbit(p, tight)
    x = sec.anchor + np.array([0.03, -0.03])
    gaps = []
    for _ in range(3):
        x = poincare_map(m, orbit, sec, x, tight)
        gaps.append(abs(x[0] - x[1]))
    np.testing.assert_allclose(np.array(gaps[1:]) / gaps[:-1], p.contraction, rtol=1e-6)


def test_flowbox_chart_round_trip_and_straightening(tight):
    m = custom_nonlinear_model()
    chart = flowbox_chart(m, config=tight)
    rng = np.random.default_rng(5)
    from ecrflow.flow import flow

    for _ in range(10):
        x = m.rho + rng.uniform(-0.08, 0.08, size=2)
        z = chart.chi(x)
        np.testing.assert_allclose(chart.chi_inv(z), x, atol=1e-9)
        t = rng.uniform(-0.05, 0.05)
        np.testing.assert_allclose(chart.chi(flow(m, t, x, tight)[0]), z + [t, 0.0], atol=1e-9)


def test_perturbation_curve_and_rejection(tight):
    m = sync1_local_model(Sync1Params(2))
    curve = perturbation_experiment(m, [1e-2, 1e-3, 1e-4], trials=4, config=tight)
    assert curve.monotone and curve.worst_ratio <= 10
    with pytest.raises(PerturbationTooLarge):
        perturbation_experiment(m, [m.f_min], trials=1)


def test_closed_loop_perturbation_needs_no_sampling(tight):
    m = sync1_model(Sync1Params(2))
    curve = perturbation_experiment(m, [1e-3], trials=2, radius=0.05, config=tight)
    assert curve.deviations[0] <= 1e-2
