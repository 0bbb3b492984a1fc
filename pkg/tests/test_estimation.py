import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kriging_ae.distributions import Uniform
from kriging_ae.estimation import (
    EventSpec,
    ProbEstimate,
    crude_mc,
    estimate_prob_expected,
    estimate_prob_plugin,
    event_prob_pointwise,
)
from kriging_ae.kriging import DesignSet, KernelParams, build
from kriging_ae.streams import RandomStream
from oracles import normal_tail


class PointMass:
    """All draws at one point; lets an estimator read off a single prediction."""

    def __init__(self, x):
        self.x = np.atleast_1d(np.asarray(x, dtype=float))

    def sample(self, rng, n):
        return np.tile(self.x, (n, 1))


def test_event_prob_pointwise_examples():
    assert event_prob_pointwise(0.5, 0.3, 0.5) == 0.5
    assert event_prob_pointwise(0.0, 0.01, 0.5) == pytest.approx(normal_tail(5.0), rel=1e-10)
    assert event_prob_pointwise(0.0, 0.01, 0.5) == pytest.approx(2.866516e-7, rel=1e-6)
    assert event_prob_pointwise(1.0, 0.0, 0.5) == 1.0


def test_hard_indicator_tie_goes_to_one():
    assert event_prob_pointwise(0.5, 0.0, 0.5) == 1.0
    assert event_prob_pointwise(0.4999, 0.0, 0.5) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(1e-3, 4), st.floats(0, 1))
def test_pointwise_monotone(mu, gamma, var, step):
    assert event_prob_pointwise(mu + step, var, gamma) >= event_prob_pointwise(mu, var, gamma)
    assert event_prob_pointwise(mu, var, gamma + step) <= event_prob_pointwise(mu, var, gamma)


def test_event_spec_convention():
    np.testing.assert_array_equal(EventSpec(0.5).indicator([0.2, 0.5, 0.9]), [0.0, 1.0, 1.0])


def test_prob_estimate_standard_error():
    s = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    e = ProbEstimate.from_summands(s, "crude")
    assert e.value == pytest.approx(0.6)
    assert e.std_error == pytest.approx(np.std(s, ddof=1) / math.sqrt(5))
    with pytest.raises(ValueError):
        ProbEstimate(0.1, 0.0, 1, "made-up")


def far_model(beta=0.0):
    return build(DesignSet([[50.0]], [1.0]), KernelParams(beta, 0.01, 1.0))


def test_plugin_zero_when_prior_below_threshold():
    est = estimate_prob_plugin(far_model(), EventSpec(0.5), Uniform(0, 1), 10_000, RandomStream(1))
    assert est.value == 0.0 and est.std_error == 0.0 and est.method == "plugin"


def test_plugin_matches_analytic_crossing():
    # two design points; the mean crosses gamma where k(x)' R^-1 Y = 0.5
    m = build(DesignSet([[0.0], [1.0]], [0.0, 1.0]), KernelParams(0.0, 1.0, 2.0))
    r = math.exp(-2.0)
    # mean(x) = (e^{-2(x-1)^2} - r e^{-2x^2}) / (1 - r^2); solve mean(c) = 0.5 on [0, 1]
    from scipy.optimize import brentq

    c = brentq(lambda x: (math.exp(-2 * (x - 1) ** 2) - r * math.exp(-2 * x * x)) / (1 - r * r) - 0.5, 0, 1)
    est = estimate_prob_plugin(m, EventSpec(0.5), Uniform(0, 1), 100_000, RandomStream(2))
    assert abs(est.value - (1 - c)) <= 3 * est.std_error


def test_plugin_is_deterministic():
    m = build(DesignSet([[0.0], [1.0]], [0.0, 1.0]), KernelParams(0.0, 1.0, 2.0))
    a = estimate_prob_plugin(m, EventSpec(0.5), Uniform(0, 1), 20_000, RandomStream(4), workers=1)
    b = estimate_prob_plugin(m, EventSpec(0.5), Uniform(0, 1), 20_000, RandomStream(4), workers=4)
    assert a.value == b.value and a.std_error == b.std_error


def test_expected_equals_plugin_when_variance_vanishes():
    # every draw sits on a design row, where sigma = 0
    m = build(DesignSet([[0.2], [0.7]], [0.0, 1.0]), KernelParams(0.3, 1.0, 3.0))
    for x, y in zip(m.design.X, m.design.Y):
        p = estimate_prob_plugin(m, EventSpec(0.5), PointMass(x), 100, RandomStream(1))
        e = estimate_prob_expected(m, EventSpec(0.5), PointMass(x), 100, RandomStream(1))
        assert p.value == e.value == float(y >= 0.5)


def test_expected_single_point_reduces_to_pointwise():
    m = build(DesignSet([[0.2], [0.7]], [0.0, 1.0]), KernelParams(0.3, 1.0, 3.0))
    mean, var = m.predict([[0.45]])
    e = estimate_prob_expected(m, EventSpec(0.5), PointMass([0.45]), 1, RandomStream(1))
    assert e.value == pytest.approx(float(event_prob_pointwise(mean[0], var[0], 0.5)), abs=1e-15)


def test_crude_mc_on_known_probability():
    est = crude_mc(lambda x: (x >= 0.9).astype(float), Uniform(0, 1), 50_000, RandomStream(3))
    assert abs(est.value - 0.1) <= 3 * est.std_error
    assert est.method == "crude"
