import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrflow.custom import custom_nonlinear_model, tangent_pair_model, two_piece_1d
from ecrflow.errors import MissingRegionField, OutOfDomain, TransversalityViolation
from ecrflow.model import (
    EventModel,
    all_corners,
    ball_samples,
    classify,
    corner_from_str,
    corner_to_str,
    fd_jacobian,
    validate_transversality,
)


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=12))
def test_corner_string_round_trip(bits):
    b = tuple(bits)
    assert corner_from_str(corner_to_str(b)) == b


def test_corner_string_format():
    assert corner_to_str((1, -1, 1)) == "+-+"
    with pytest.raises(ValueError):
        corner_from_str("+0")


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_all_corners_enumerates_the_cube(n):
    corners = all_corners(n)
    assert len(corners) == len(set(corners)) == 2**n


def test_zero_is_classified_as_plus():
    m = custom_nonlinear_model()
    assert classify(m, [0.0, 0.0]) == (1, 1)
    assert m.classify([0.0, -0.5]) == (-1, -1)


def test_offset_is_relative_to_rho():
    m = EventModel.from_fields(lambda x: np.array([x[0] ** 2]), {(-1,): lambda x: np.ones(1),
                                                                 (1,): lambda x: np.ones(1)}, [1.0], 0.5)
    assert m.offset([1.0])[0] == 0.0
    assert m.offset([2.0])[0] == pytest.approx(3.0)


def test_fd_jacobian_matches_analytic():
    f = lambda x: np.array([x[0] ** 2 * x[1], np.sin(x[1]) + x[0]])
    x = np.array([0.7, -1.3])
    J = np.array([[2 * x[0] * x[1], x[0] ** 2], [1.0, np.cos(x[1])]])
    np.testing.assert_allclose(fd_jacobian(f, x), J, atol=1e-9)


def test_event_jacobian_falls_back_to_differences():
    m = custom_nonlinear_model()
    bare = EventModel.from_fields(m.h, {b: (lambda x, b=b: m.F(b, x)) for b in all_corners(2)}, m.rho, m.f_min)
    x = np.array([0.1, -0.05])
    np.testing.assert_allclose(bare.event_jacobian(x), m.event_jacobian(x), atol=1e-9)
    np.testing.assert_allclose(bare.DF((1, -1), x), m.DF((1, -1), x), atol=1e-8)


def test_reversed_model_negates_events_and_fields():
    m = custom_nonlinear_model()
    r = m.reversed()
    x = np.array([0.03, -0.02])
    np.testing.assert_allclose(r.offset(x), -m.offset(x))
    for b in all_corners(2):
        nb = tuple(-s for s in b)
        np.testing.assert_allclose(r.F(b, x), -m.F(nb, x))


def test_ball_samples_stay_in_ball():
    pts = ball_samples(np.array([1.0, 2.0, 3.0]), 0.5, 256, seed=1)
    assert pts.shape == (256, 3)
    assert np.all(np.linalg.norm(pts - [1, 2, 3], axis=1) <= 0.5 + 1e-12)


def test_validation_passes_on_transverse_model():
    rep = validate_transversality(custom_nonlinear_model(), 0.3, 128)
    assert rep.passed and rep.worst >= 0.2


def test_validation_reports_worst_pair():
    m = two_piece_1d(2.0, 1.0)
    m = EventModel.from_fields(m.h, {(-1,): lambda x: np.array([2.0]), (1,): lambda x: np.array([1.0])},
                               [0.0], 1.5)
    with pytest.raises(TransversalityViolation) as info:
        validate_transversality(m, 0.1, 16)
    assert info.value.value == pytest.approx(1.0)
    rep = validate_transversality(m, 0.1, 16, raise_on_failure=False)
    assert not rep.passed


def test_validation_needs_a_field_for_every_visited_region():
    m = custom_nonlinear_model()
    fields = {b: (lambda x, b=b: m.F(b, x)) for b in all_corners(2) if b != (1, 1)}
    holey = EventModel.from_fields(m.h, fields, m.rho, m.f_min, Dh=m.Dh)
    with pytest.raises(MissingRegionField):
        validate_transversality(holey, 0.2, 64)


def test_tangent_pair_omits_the_empty_region():
    m = tangent_pair_model()
    rep = validate_transversality(m, 0.3, 256)
    assert (-1, 1) not in rep.corners_seen
    assert rep.passed


def test_domain_check():
    from ecrflow.oscillators import Sync1Params, sync1_model

    m = sync1_model(Sync1Params(2, lifts=1))
    m.check_domain([0.2, 0.3])
    with pytest.raises(OutOfDomain):
        m.check_domain([2.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_perturbed_fields_add(a, b):
    m = custom_nonlinear_model()
    p = m.perturbed(lambda c, x: np.array([a, b]))
    x = np.array([0.05, 0.02])
    np.testing.assert_allclose(p.F((1, -1), x), m.F((1, -1), x) + [a, b])
