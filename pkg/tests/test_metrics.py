import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccopt import metrics
from ccopt.metrics import ObjectiveSpec
from ccopt.radio import SinrReport

sinr_lists = st.lists(st.floats(-40.0, 60.0), min_size=1, max_size=50)


def brute_outage(v, t):
    return sum(1 for s in v if s < t) / len(v)


def brute_rate(v):
    terms = []
    for s in v:
        lin = 10.0 ** (s / 10.0)
        if lin < 1e-6:
            lin = 1e-6
        terms.append(math.log(math.log1p(lin)))
    return math.fsum(terms) / len(v)


def report(dl, ul):
    dl, ul = np.asarray(dl, float), np.asarray(ul, float)
    return SinrReport(dl, ul, np.zeros(len(dl), int), np.zeros(len(dl)))


def test_outage_examples():
    assert metrics.outage_probability([-3.0, 1.0, 5.0, -1.0], 0.0) == 0.5
    assert metrics.outage_probability([2.0, 2.0, 2.0], 2.0) == 0.0
    assert metrics.outage_probability(np.full(6, -4.25 - 1e-9), -4.25) == 1.0


def test_rate_examples():
    assert metrics.avg_sum_log_rate([10 * math.log10(math.e - 1)]) == pytest.approx(0.0, abs=1e-12)
    assert metrics.avg_sum_log_rate([10 * math.log10(math.e ** math.e - 1)]) == pytest.approx(1.0, abs=1e-12)
    # mean(log log 2, log log 11) = mean(-0.366513, 0.874591)
    assert metrics.avg_sum_log_rate([0.0, 10.0]) == pytest.approx(0.254039, abs=5e-7)


def test_rate_floor():
    # -200 dB floors to 1e-6 linear
    assert metrics.avg_sum_log_rate([-200.0]) == pytest.approx(math.log(math.log1p(1e-6)))


def test_empty_vectors_rejected():
    with pytest.raises(ValueError):
        metrics.outage_probability([], 0.0)
    with pytest.raises(ValueError):
        metrics.avg_sum_log_rate(np.zeros(0))


@given(sinr_lists, st.floats(-20.0, 20.0))
def test_against_brute_force(v, t):
    assert metrics.outage_probability(v, t) == brute_outage(v, t)
    assert metrics.avg_sum_log_rate(v) == brute_rate(v)


@given(sinr_lists, st.randoms(use_true_random=False))
def test_permutation_invariance(v, rnd):
    w = list(v)
    rnd.shuffle(w)
    assert metrics.outage_probability(w, 0.0) == metrics.outage_probability(v, 0.0)
    assert metrics.avg_sum_log_rate(w) == metrics.avg_sum_log_rate(v)


@given(sinr_lists, st.integers(0, 49), st.floats(0.0, 30.0))
def test_weak_monotonicity(v, i, bump):
    i %= len(v)
    w = list(v)
    w[i] += bump
    assert metrics.avg_sum_log_rate(w) >= metrics.avg_sum_log_rate(v) - 1e-12
    assert metrics.outage_probability(w, 0.0) <= metrics.outage_probability(v, 0.0)


def test_stacked_input_reduces_last_axis():
    a = np.array([[-3.0, 1.0, 5.0, -1.0], [1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_array_equal(metrics.outage_probability(a, 0.0), [0.5, 0.0])
    np.testing.assert_allclose(metrics.avg_sum_log_rate(a), [metrics.avg_sum_log_rate(r) for r in a])


def test_weight_collapse():
    rep = report([3.0, -2.0, 8.0], [1.0, -5.0, 0.5])
    v = metrics.objective(rep, ObjectiveSpec(alpha=0.0, beta_dl=1.0))
    assert v.f_total == v.r_dl
    v = metrics.objective(rep, ObjectiveSpec(alpha=1.0, beta_ul=0.0))
    assert v.f_total == -v.zeta_ul


def test_joint_objective_hand_value():
    dl, ul = [5.0, -1.0, 12.0, 0.0], [-3.0, 2.0, 7.0, -0.5]
    spec = ObjectiveSpec(alpha=0.5, beta_dl=0.8, beta_ul=0.2, threshold_db=0.0)
    r_dl = sum(math.log(math.log(1 + 10 ** (s / 10))) for s in dl) / 4
    r_ul = sum(math.log(math.log(1 + 10 ** (s / 10))) for s in ul) / 4
    z_dl, z_ul = 1 / 4, 2 / 4
    expected = 0.5 * (0.8 * r_dl - 0.2 * z_dl) + 0.5 * (0.2 * r_ul - 0.8 * z_ul)
    v = metrics.objective(report(dl, ul), spec)
    assert v.f_total == pytest.approx(expected, abs=1e-12)
    assert (v.zeta_dl, v.zeta_ul) == (z_dl, z_ul)
    assert v.link_component(spec, "dl") == pytest.approx(0.8 * r_dl - 0.2 * z_dl, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.lists(st.floats(-5.0, 5.0), min_size=4, max_size=4))
def test_objective_is_affine(alpha, bdl, bul, terms):
    spec = ObjectiveSpec(alpha=alpha, beta_dl=bdl, beta_ul=bul)
    r_dl, r_ul, z_dl, z_ul = terms
    f = metrics.combine(r_dl, r_ul, z_dl, z_ul, spec)
    expected = (1 - alpha) * (bdl * r_dl - (1 - bdl) * z_dl) + alpha * (bul * r_ul - (1 - bul) * z_ul)
    assert f == pytest.approx(expected, abs=1e-12)


def test_objective_from_sinr_matches_objective():
    rng = np.random.default_rng(0)
    dl, ul = rng.normal(5, 8, (6, 10)), rng.normal(0, 8, (6, 10))
    spec = ObjectiveSpec(alpha=0.3, beta_dl=0.6, beta_ul=0.4, threshold_db=1.0)
    f = metrics.objective_from_sinr(dl, ul, spec)
    for i in range(6):
        assert f[i] == pytest.approx(metrics.objective(report(dl[i], ul[i]), spec).f_total, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError):
        metrics.objective(SinrReport(np.zeros(3), np.zeros(2), np.zeros(3, int), np.zeros(3)), ObjectiveSpec())


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(beta_dl=-0.1), dict(beta_ul=2.0),
                                dict(threshold_db=float("nan"))])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ObjectiveSpec(**kw)


def test_quantiles():
    v = np.arange(10.0)
    assert metrics.quantile(v, 0.5) == pytest.approx(4.5)
    assert metrics.quantile(v, 0.1) == pytest.approx(0.9)
    assert metrics.percentile_threshold(v[::-1]) == pytest.approx(0.9)
