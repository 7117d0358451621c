import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commutant.errors import DomainExitError, MissingInverseError, NonFiniteError
from commutant.geometry import Flow, SmoothMap, flow_commutator_defect
from commutant.prob_measures import (
    GaussianLikelihoodFamily,
    SampleMeasure,
    compose_ordered,
    consistency_check,
    likelihood,
    likelihood_gap,
    mixture_likelihood,
    pushforward,
)
from commutant.scenarios import load_builtin


def test_sample_measure_validation():
    with pytest.raises(ValueError):
        SampleMeasure(np.empty((0, 2)))
    with pytest.raises(NonFiniteError):
        SampleMeasure([[0.0, np.nan]])
    m = SampleMeasure([0.0, 1.0, 2.0])
    assert (len(m), m.dim) == (3, 1)


# --- pushforward -------------------------------------------------------------


def test_pushforward_identity():
    m = SampleMeasure([[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_array_equal(pushforward(m, lambda x: x).samples, m.samples)


def test_pushforward_scaling():
    m = SampleMeasure([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(pushforward(m, lambda x: 2 * x).samples, [[0.0], [2.0], [4.0]])


def test_pushforward_onto_circle():
    pi = load_builtin("circle_cover").map("pi")
    m = SampleMeasure(np.arange(50) / 50.0)
    image = pushforward(m, pi)
    assert len(image) == 50
    np.testing.assert_allclose(np.linalg.norm(image.samples, axis=1), 1.0, atol=1e-12)


# --- consistency_check -------------------------------------------------------


def test_consistency_same_chart():
    g = load_builtin("se2_chart_g").map("g")
    m = SampleMeasure(g.box.scaled(0.5).low_discrepancy(20))
    assert consistency_check(m, g, g) <= 1e-15


def test_consistency_identity_and_scaling():
    ident = SmoothMap.linear([[1.0]])
    triple = SmoothMap.linear([[3.0]])
    m = SampleMeasure(np.linspace(-1, 1, 11))
    assert consistency_check(m, ident, triple) <= 1e-12


def test_consistency_chart_g_and_shift():
    sc = load_builtin("se2_chart_g")
    g, shifted = sc.map("g"), sc.map("g_shifted")
    m = SampleMeasure(g.box.scaled(0.5).low_discrepancy(30))
    assert consistency_check(m, g, shifted) <= 1e-9
    assert consistency_check(m, shifted, g) <= 1e-9


def test_consistency_requires_inverse():
    pi = load_builtin("circle_cover").map("pi")
    with pytest.raises(MissingInverseError):
        consistency_check(SampleMeasure([0.1]), pi, pi)


# --- likelihood --------------------------------------------------------------


def test_likelihood_at_mean():
    fam = GaussianLikelihoodFamily(1.0)
    assert likelihood(fam, [0.3], [0.3]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_likelihood_one_sigma_away():
    fam = GaussianLikelihoodFamily(0.5)
    at_mean = likelihood(fam, [0.0], [0.0])
    assert likelihood(fam, [0.0], [0.5]) == pytest.approx(at_mean - 0.5, abs=1e-14)


def test_likelihood_two_dims():
    fam = GaussianLikelihoodFamily(0.1)
    expected = -math.log(2 * math.pi * 0.01) - 0.5
    assert likelihood(fam, [0.0, 0.0], [0.1, 0.0]) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, -1.0, math.inf, math.nan])
def test_likelihood_family_rejects_bad_sigma(sigma):
    with pytest.raises(ValueError):
        GaussianLikelihoodFamily(sigma)


# --- likelihood_gap ----------------------------------------------------------


def test_gap_identical_charts():
    fam = GaussianLikelihoodFamily()
    inv = load_builtin("se2_chart_g").map("g").inverse
    probes = np.linspace(-0.5, 0.5, 12).reshape(4, 3)
    np.testing.assert_array_equal(likelihood_gap(fam, inv, inv, probes), np.zeros(4))


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.floats(0.05, 2.0))
def test_gap_of_translated_chart(t, sigma):
    fam = GaussianLikelihoodFamily(sigma)
    t = np.array(t)
    probes = np.array([[0.0, 0.0], [0.5, -0.5], [1.0, 2.0]])
    gaps = likelihood_gap(fam, lambda v: v, lambda v: v + t, probes)
    np.testing.assert_allclose(gaps, np.sum(t ** 2) / sigma ** 2, rtol=1e-12, atol=1e-12)


def test_gap_circle_phase_shift():
    sc = load_builtin("circle_cover")
    fam = GaussianLikelihoodFamily(0.1)
    gap = likelihood_gap(fam, sc.map("pi_restricted"), sc.map("pi_shifted"), [[0.0]])
    a = 0.2 * math.pi
    expected = ((math.cos(a) - 1.0) ** 2 + math.sin(a) ** 2) / 0.01
    assert gap[0] == pytest.approx(expected, abs=1e-12)


# --- mixtures ----------------------------------------------------------------


def test_mixture_single_factor():
    flow = load_builtin("plane_translations").flow("translation_x")
    rep = mixture_likelihood([flow], [0.3], [0.0, 0.0])
    assert rep.collapsed
    assert rep.means.shape == (1, 2)
    np.testing.assert_array_equal(rep.weights, [1.0])


def test_mixture_translations_collapse():
    sc = load_builtin("plane_translations")
    rep = mixture_likelihood([sc.flow("translation_x"), sc.flow("translation_y")], [0.4, -0.3], [0.1, 0.1])
    assert rep.collapsed
    np.testing.assert_allclose(rep.means[0], rep.means[1], atol=1e-15)
    np.testing.assert_allclose(rep.means[0], [0.5, -0.2], atol=1e-15)


def test_mixture_rotation_translation_separate():
    sc = load_builtin("plane_euclidean")
    flows = [Flow.from_field(sc.field(n), sc.box) for n in ("rotation", "translation_x")]
    rep = mixture_likelihood(flows, [0.5, 0.5], [0.0, 0.0])
    assert not rep.collapsed
    assert rep.max_separation > 0.01
    # rotation applied last vs first: R(0.5)(0.5, 0) and (0.5, 0)
    expected = {(0, 1): 0.5 * np.array([math.cos(0.5), math.sin(0.5)]), (1, 0): np.array([0.5, 0.0])}
    for order, mean in zip(rep.orderings, rep.means):
        np.testing.assert_allclose(mean, expected[order], atol=1e-9)
    np.testing.assert_allclose(rep.weights, [0.5, 0.5], atol=1e-15)


def test_mixture_prior_is_renormalized():
    sc = load_builtin("plane_translations")
    flows = [sc.flow("translation_x"), sc.flow("translation_y")]
    rep = mixture_likelihood(flows, [0.1, 0.1], [0, 0], prior=[2.0, 6.0])
    np.testing.assert_allclose(rep.weights, [0.25, 0.75], atol=1e-15)
    assert rep.prior_renormalized
    rep = mixture_likelihood(flows, [0.1, 0.1], [0, 0], prior=[0.25, 0.75])
    assert not rep.prior_renormalized
    with pytest.raises(ValueError):
        mixture_likelihood(flows, [0.1, 0.1], [0, 0], prior=[1.0, -1.0])


def test_mixture_rejects_seven_factors():
    flow = load_builtin("plane_translations").flow("translation_x")
    with pytest.raises(ValueError):
        mixture_likelihood([flow] * 7, [0.01] * 7, [0, 0])


def test_mixture_six_factors_enumerates_all_orderings():
    sc = load_builtin("plane_translations")
    flows = [sc.flow("translation_x"), sc.flow("translation_y")] * 3
    rep = mixture_likelihood(flows, [0.01] * 6, [0, 0])
    assert len(rep.orderings) == 720
    assert rep.collapsed
    assert rep.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_mixture_domain_exit():
    sc = load_builtin("plane_translations")
    with pytest.raises(DomainExitError):
        mixture_likelihood([sc.flow("translation_x"), sc.flow("translation_y")], [1.5, 0.0], [0, 0])


def test_mixture_log_likelihood_is_logsumexp():
    sc = load_builtin("plane_euclidean")
    rep = mixture_likelihood([sc.flow("rotation"), sc.flow("translation_x")], [0.5, 0.5], [0.0, 0.0])
    x = np.array([0.45, 0.1])
    fam = GaussianLikelihoodFamily(rep.sigma)
    direct = math.log(sum(w * math.exp(likelihood(fam, m, x)) for w, m in zip(rep.weights, rep.means)))
    assert rep.log_likelihood(x) == pytest.approx(direct, rel=1e-12)


def test_compose_ordered_applies_last_factor_first():
    sc = load_builtin("plane_euclidean")
    flows = [sc.flow("rotation"), sc.flow("translation_x")]
    q = compose_ordered(flows, [math.pi / 2, 1.0], (0, 1), [0.0, 0.0])
    np.testing.assert_allclose(q, [0.0, 1.0], atol=1e-15)


def test_mixture_report_json_layout():
    sc = load_builtin("plane_translations")
    rep = mixture_likelihood([sc.flow("translation_x"), sc.flow("translation_y")], [0.1, 0.2], [0, 0])
    assert set(rep.to_json()) == {"means", "weights", "collapsed", "max_separation"}


def test_collapse_matches_pairwise_defects():
    # collapse of the ordering mixture and vanishing flow commutators go together
    for sid in ("se2_generators", "se2_chart_g", "se2_frame_fields", "plane_euclidean", "torus_flows"):
        sc = load_builtin(sid)
        names = sc.field_names
        p = sc.box.center
        for a, b in itertools.combinations(names, 2):
            rep = mixture_likelihood([sc.flow(a), sc.flow(b)], [0.3, 0.2], p)
            defect = flow_commutator_defect(sc.flow(a), sc.flow(b), 0.3, 0.2, p)
            assert rep.collapsed == (defect <= rep.tolerance), (sid, a, b)
