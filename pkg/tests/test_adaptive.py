import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from kriging_ae.adaptive import (
    adaptive_loop,
    argmax_lowest,
    distribution_candidates,
    expected_objective_change,
    flip_probability,
    grid_candidates,
    select_obj,
    select_pnt1,
    select_pnt2,
)
from kriging_ae.distributions import GaussianUV
from kriging_ae.estimation import EventSpec
from kriging_ae.kriging import DesignSet, KernelParams, build
from kriging_ae.streams import RandomStream
from oracles import mc_objective_change

SPEC = EventSpec(0.5)


def toy_model(tau2=1.0, theta=5.0):
    return build(DesignSet([[0.2], [0.8]], [0.0, 1.0]), KernelParams(0.0, tau2, theta))


def test_flip_probability_examples():
    # far from the data the mean is beta and the variance tau2
    far = [[100.0]]
    assert flip_probability(build(DesignSet([[0.0]], [1.0]), KernelParams(0.5, 1.0, 1.0)), far, SPEC)[0] == 0.5
    m = build(DesignSet([[0.0]], [1.0]), KernelParams(1.0, 1.0, 1.0))
    assert flip_probability(m, far, SPEC)[0] == pytest.approx(0.3085375, abs=1e-7)
    assert flip_probability(m, far, SPEC)[0] == pytest.approx(norm.cdf(-0.5), rel=1e-12)
    assert flip_probability(toy_model(), [[0.2]], SPEC)[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_flip_probability_bounded(seed):
    rng = np.random.default_rng(seed)
    m = build(DesignSet(rng.uniform(0, 1, (4, 1)), rng.integers(0, 2, 4)), KernelParams(rng.uniform(0, 1), 0.5, 3.0))
    v = flip_probability(m, rng.uniform(-1, 2, (30, 1)), SPEC)
    assert np.all((v >= 0) & (v <= 0.5))


def test_pnt1_prefers_off_design_candidate():
    sel = select_pnt1(toy_model(), [[0.2], [0.5]], SPEC)
    assert sel.chosen_index == 1 and sel.criterion == "pnt1"


def test_pnt1_mirrored_candidates_tie_to_lowest_index():
    m = build(DesignSet([[0.5]], [1.0]), KernelParams(0.0, 1.0, 3.0))
    sel = select_pnt1(m, [[0.25], [0.75]], SPEC)
    assert sel.criterion_values[0] == sel.criterion_values[1]
    assert sel.chosen_index == 0


def test_pnt1_brute_force_four_candidates():
    m = toy_model()
    cands = np.array([[0.0], [0.35], [0.5], [1.1]])
    mean, var = m.predict(cands)
    brute = norm.cdf(-np.abs(0.5 - mean) / np.sqrt(var))
    sel = select_pnt1(m, cands, SPEC)
    np.testing.assert_allclose(sel.criterion_values, brute, rtol=1e-12)
    assert sel.chosen_index == int(np.argmax(brute))


def test_pnt2_values():
    far = build(DesignSet([[0.0]], [1.0]), KernelParams(0.5, 1.0, 1.0))
    assert select_pnt2(far, [[100.0]], SPEC).criterion_values[0] == 0.25
    assert select_pnt2(toy_model(), [[0.8]], SPEC).criterion_values[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_pnt1_pnt2_agree_at_common_sigma(seed):
    # candidates far apart in a wide kernel-free region share sigma; only the means differ
    rng = np.random.default_rng(seed)
    n = 6
    X = np.arange(n, dtype=float)[:, None] * 100.0
    m = build(DesignSet(X, rng.uniform(-1, 2, n)), KernelParams(0.3, 0.7, 1.0, nugget=0.5))
    cands = X.copy()
    _, var = m.predict(cands)
    assert np.ptp(var) < 1e-12 * var.max()
    assert select_pnt1(m, cands, SPEC).chosen_index == select_pnt2(m, cands, SPEC).chosen_index


def test_argmax_tie_and_exclusion():
    assert argmax_lowest([1.0, 3.0, 3.0]) == 1
    assert argmax_lowest([1.0, 3.0, 3.0], exclude=[False, True, False]) == 2
    with pytest.raises(ValueError):
        argmax_lowest([1.0], exclude=[True])


def test_objective_change_zero_at_design_row_and_far_away():
    m = toy_model()
    pool = np.random.default_rng(0).normal(0.5, 0.2, (200, 1))
    assert expected_objective_change(m, [0.2], SPEC, pool, "obj1") == 0.0
    assert expected_objective_change(m, [0.8], SPEC, pool, "obj2") == 0.0
    for variant in ("obj1", "obj2"):
        sel = select_obj(m, [[40.0], [60.0]], SPEC, pool, variant)
        assert np.all(sel.criterion_values < 1e-12) and sel.chosen_index == 0


def test_objective_change_matches_monte_carlo_oracle():
    m = toy_model()
    pool = np.random.default_rng(0).normal(0.5, 0.2, (200, 1))
    for x in (0.4, 0.55, 0.7):
        for variant in ("obj1", "obj2"):
            got = expected_objective_change(m, [x], SPEC, pool, variant)
            ref = mc_objective_change(m, np.array([[x]]), 0.5, pool, variant, 20_000, np.random.default_rng(1))
            assert got == pytest.approx(ref, rel=0.05)


def test_objective_change_permutation_invariant():
    m = toy_model()
    pool = np.random.default_rng(0).normal(0.5, 0.2, (200, 1))
    perm = pool[np.random.default_rng(1).permutation(200)]
    for variant in ("obj1", "obj2"):
        a = expected_objective_change(m, [0.45], SPEC, pool, variant)
        b = expected_objective_change(m, [0.45], SPEC, perm, variant)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_obj1_obj2_rank_alike_when_variance_vanishes():
    m = build(DesignSet([[0.2], [0.8]], [0.0, 1.0]), KernelParams(0.0, 1e-10, 5.0))
    pool = np.random.default_rng(2).normal(0.5, 0.2, (300, 1))
    cands = [[0.1], [0.4], [0.5], [0.65], [0.95]]
    a = select_obj(m, cands, SPEC, pool, "obj1").criterion_values
    b = select_obj(m, cands, SPEC, pool, "obj2").criterion_values
    assert np.array_equal(np.argsort(-a, kind="stable"), np.argsort(-b, kind="stable"))


def test_quadrature_nodes_must_be_at_least_three():
    with pytest.raises(ValueError):
        expected_objective_change(toy_model(), [0.5], SPEC, [[0.5]], "obj1", quad_nodes=2)


def test_loop_single_candidate_single_step():
    m = toy_model()
    res = adaptive_loop(m, lambda it, rng: np.array([[0.5]]), "pnt1", 1, lambda x: np.array([1.0]), SPEC, RandomStream(0))
    assert res.model.n == m.n + 1
    assert len(res.audit) == 1 and res.audit[0].response == 1.0


def test_loop_skips_failed_simulations_without_using_budget():
    def flaky(x):
        if abs(x[0, 0] - 0.5) < 1e-12:
            raise RuntimeError("solver diverged")
        return np.array([float(x[0, 0] >= 0.5)])

    m = toy_model()
    res = adaptive_loop(m, grid_candidates([0.0], [1.0], 11), "pnt1", 3, flaky, SPEC, RandomStream(0))
    assert res.failures == 1
    assert res.model.n == m.n + 3
    assert not np.any(np.isclose(res.chosen_points, 0.5))


def test_loop_with_objective_criterion_and_distribution_candidates(tmp_path):
    m = toy_model()
    F = GaussianUV(0.5, 0.2)
    res = adaptive_loop(m, distribution_candidates(F, 10), "obj2", 2, lambda x: (x[:, 0] >= 0.5).astype(float),
                        SPEC, RandomStream(4), F=F, F_pool_size=100)
    assert res.model.n == 4
    res.write_audit(tmp_path / "audit.csv")
    lines = (tmp_path / "audit.csv").read_text().splitlines()
    assert lines[0] == "iteration,criterion,candidate,x1,value,chosen,response,design_size"
    assert len(lines) == 1 + 20
    assert sum(line.split(",")[5] == "1" for line in lines[1:]) == 2


def test_loop_selections_match_brute_force():
    m = toy_model(tau2=0.01, theta=200.0)
    res = adaptive_loop(m, grid_candidates([0.0], [1.0], 21), "pnt1", 5, lambda x: (x[:, 0] >= 0.43).astype(float),
                        SPEC, RandomStream(0))
    model = m
    for a in res.audit:
        vals = flip_probability(model, a.candidates, SPEC)
        on_design = (a.candidates[:, None, :] == model.design.X[None]).all(-1).any(-1)
        vals = np.where(on_design, -np.inf, vals)
        assert a.chosen_index == int(np.argmax(vals))
        model = model.update(a.point, a.response)
