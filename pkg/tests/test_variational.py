from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrflow.custom import (
    DEFAULT_PIECEWISE_CONSTANT,
    custom_nonlinear_model,
    piecewise_constant_model,
    tangent_pair_model,
    two_piece_1d,
)
from ecrflow.errors import DivisionNearZero, NotTangent
from ecrflow.flow import flow
from ecrflow.oscillators import Sync1Params, sync1_local_model
from ecrflow.variational import (
    all_word_derivatives,
    b_derivative,
    detect_word,
    enumerate_words,
    is_word,
    local_derivative,
    per_word_derivative,
    saltation_chain,
    saltation_factor,
    saltation_sign_mutation,
    sampled_field,
    single_surface_saltation,
    tangency_reduction_check,
    word_from_steps,
    word_label,
    word_steps,
)


def ordered_bell(n):
    a = [1]
    for m in range(1, n + 1):
        a.append(sum(comb(m, k) * a[m - k] for k in range(1, m + 1)))
    return a[n]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_word_count_is_ordered_bell(n):
    words = enumerate_words(n)
    assert len(words) == len(set(words)) == ordered_bell(n)
    assert all(is_word(w) for w in words)


def test_is_word_rejects_bad_chains():
    assert not is_word([(-1, -1), (1, -1)])  # does not reach +1
    assert not is_word([(-1, -1), (1, -1), (-1, 1), (1, 1)])  # not monotone
    assert not is_word([(-1, -1), (-1, -1), (1, 1)])  # repeated corner


def test_steps_round_trip_and_label():
    w = word_from_steps([(1,), (0, 2)], 3)
    assert w == ((-1, -1, -1), (-1, 1, -1), (1, 1, 1))
    assert word_steps(w) == [(1,), (0, 2)]
    assert word_label(w) == "{2}|{1,3}"
    assert word_label(w, surfaces=(4, 5, 7)) == "{6}|{5,8}"


def test_saltation_factor_formula():
    f = np.array([1.0, 2.0])
    g = np.array([0.5, 0.25])
    S = saltation_factor(f, g)
    # time row picks up g.x / g.f, state rows subtract f times it
    x = np.array([0.0, 0.3, -0.2])
    gx = g @ x[1:] / (g @ f)
    np.testing.assert_allclose(S @ x, np.concatenate([[gx], x[1:] - f * gx]))
    with pytest.raises(DivisionNearZero):
        saltation_factor(f, np.array([2.0, -1.0]), f_min=0.1)


def test_single_surface_saltation_1d():
    assert single_surface_saltation(two_piece_1d(2.0, 1.0), [0.0], 0, (-1,), (1,))[0, 0] == 0.5


def test_one_surface_local_derivative_is_classical_saltation():
    m = custom_nonlinear_model()
    x = np.array([0.0, 0.0])
    # only surface 0 is crossed, with surface 1 held at +1
    from ecrflow.variational import Cluster

    cl = Cluster(x, (0,), (-1, 1))
    D = local_derivative(m, enumerate_words(1)[0], cluster=cl)
    np.testing.assert_allclose(D[:, 1:], single_surface_saltation(m, x, 0, (-1, 1), (1, 1)), atol=1e-14)
    np.testing.assert_allclose(D[:, 0], m.F((1, 1), x))


@pytest.mark.parametrize("d", [2, 3])
def test_sync1_words_all_give_contraction(d):
    p = Sync1Params(d, 1.0, 0.5)
    m = sync1_local_model(p)
    for w in enumerate_words(d):
        np.testing.assert_allclose(local_derivative(m, w)[:, 1:], p.contraction * np.eye(d), atol=1e-14)


def test_chain_has_one_factor_per_surface():
    m = piecewise_constant_model(**DEFAULT_PIECEWISE_CONSTANT)
    w = word_from_steps([(0, 1, 2)], 3)
    ch = saltation_chain(m, w, eta=[[2, 0, 1]])
    assert len(ch.factors) == 3
    np.testing.assert_allclose(ch.product, ch.factors[2] @ ch.factors[1] @ ch.factors[0])


def _numeric_word(model, xi):
    """Order in which the sampled field crosses its surfaces, by integration."""
    sm = sampled_field(model)
    f0 = sm.F((-1,) * sm.n_events, sm.rho)
    x0 = sm.rho + 1e-3 * xi - 1e-3 * 3.0 * f0
    _, tr = flow(sm, 1e-2, x0)
    return word_from_steps([e.surfaces for e in tr.events], sm.n_events)


@pytest.mark.parametrize("model_factory", [
    custom_nonlinear_model,
    lambda: piecewise_constant_model(**DEFAULT_PIECEWISE_CONSTANT),
])
def test_word_detection_matches_integration(model_factory):
    m = model_factory()
    rng = np.random.default_rng(11)
    for _ in range(25):
        xi = rng.normal(size=m.dim)
        xi /= np.linalg.norm(xi)
        assert detect_word(m, xi).word == _numeric_word(m, xi)


def test_sampled_field_is_frozen():
    m = custom_nonlinear_model()
    sm = sampled_field(m)
    x = np.array([0.2, -0.1])
    np.testing.assert_allclose(sm.F((1, -1), x), m.F((1, -1), m.rho))
    np.testing.assert_allclose(sm.offset(x), m.event_jacobian(m.rho) @ x)


def test_sampled_flow_is_positively_homogeneous():
    sm = sampled_field(custom_nonlinear_model())
    rng = np.random.default_rng(4)
    for _ in range(5):
        v, w = rng.normal(), rng.normal(size=2)
        base = flow(sm, 0.0, sm.rho)[0]
        a = flow(sm, 0.01 * v, sm.rho + 0.01 * w)[0] - base
        b = flow(sm, 0.03 * v, sm.rho + 0.03 * w)[0] - base
        np.testing.assert_allclose(b, 3 * a, atol=1e-10)


def test_smooth_segment_b_derivative_matches_central_differences():
    m = custom_nonlinear_model()
    x = np.array([-0.2, -0.25])
    t = 0.05
    v, w = 0.4, np.array([0.3, -0.8])
    eps = 1e-6
    fd = (flow(m, t + eps * v, x + eps * w)[0] - flow(m, t - eps * v, x - eps * w)[0]) / (2 * eps)
    r = b_derivative(m, t, x, v, w)
    np.testing.assert_allclose(r, fd, rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_sync1_contracts_every_direction(w):
    p = Sync1Params(3, 1.0, 0.5)
    m = sync1_local_model(p)
    x0 = np.full(3, -0.15)
    r = b_derivative(m, 0.2, x0, 0.0, np.array(w))
    np.testing.assert_allclose(r, p.contraction * np.array(w), atol=1e-12)


def test_time_direction_after_crossing_is_the_plus_field():
    p = Sync1Params(2, 1.0, 0.5)
    m = sync1_local_model(p)
    x0 = np.full(2, -0.15)
    r = b_derivative(m, 0.1 + 1e-6, x0, 1.0, np.zeros(2))
    np.testing.assert_allclose(r, m.F((1, 1), m.rho), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 3))
def test_b_derivative_is_positively_homogeneous(v, w1, w2, lam):
    m = custom_nonlinear_model()
    x0 = flow(m.reversed(), 0.1, m.rho)[0]
    w = np.array([w1, w2])
    a = b_derivative(m, 0.2, x0, lam * v, lam * w)
    b = lam * b_derivative(m, 0.2, x0, v, w)
    np.testing.assert_allclose(a, b, atol=1e-12 * max(1.0, np.abs(b).max()))


def test_adjacent_words_agree_on_the_cone_boundary():
    m = custom_nonlinear_model()
    x0 = flow(m.reversed(), 0.1, m.rho)[0]
    _, tr = flow(m, 0.2, x0, jacobian=True)
    D = all_word_derivatives(m, 0.2, x0, trajectory=tr)
    assert len(D) == 3
    # the synchronized direction crosses both surfaces at once
    G = m.event_jacobian(m.rho)
    f = m.F((-1, -1), m.rho)
    xi = np.linalg.solve(G, G @ f)  # both offsets move at the same normalized rate
    u = np.linalg.solve(tr.jacobians[0], xi - 2 * f)
    vec = np.concatenate([[0.0], u])
    w12 = per_word_derivative(m, 0.2, x0, [word_from_steps([(0,), (1,)], 2)], trajectory=tr) @ vec
    w21 = per_word_derivative(m, 0.2, x0, [word_from_steps([(1,), (0,)], 2)], trajectory=tr) @ vec
    np.testing.assert_allclose(w12, w21, atol=1e-9)


def test_tangency_reduction_identity():
    assert tangency_reduction_check(tangent_pair_model(), [0.0, 0.0], (0, 1))
    with pytest.raises(NotTangent):
        tangency_reduction_check(custom_nonlinear_model(), [0.0, 0.0], (0, 1))


def test_mutation_flips_and_restores():
    f, g = np.array([1.0]), np.array([1.0])
    clean = saltation_factor(f, g)
    with saltation_sign_mutation():
        bad = saltation_factor(f, g)
    assert not np.allclose(clean, bad)
    np.testing.assert_array_equal(saltation_factor(f, g), clean)
