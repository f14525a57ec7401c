import math
import time

import numpy as np
import pytest
from scipy import stats

from edgeworth_accountant.accountant import (
    AccountantRequest,
    Delta,
    EdgeworthAccountant,
    Epsilon,
    EpsilonEstimate,
    Mode,
    SamplingRule,
    delta_at_epsilon,
    epsilon_at_delta,
    gdp_delta,
    monotonicity_violations,
    privacy_curve,
    epsilon_search_bound,
)
from edgeworth_accountant.errors import ConfigurationError
from edgeworth_accountant.mechanisms import MechanismKind, MechanismSpec, PLLRBranch, mechanism_from_sigma, pllr_moments
from edgeworth_accountant.oracle import oracle_delta

EPS_GRID = np.linspace(0.0, 8.0, 81)


def test_gdp_delta():
    assert gdp_delta(0.0, 1.0) == 0.0
    # at eps = 0 the curve is the total variation 2 Phi(mu/2) - 1
    assert gdp_delta(1.0, 0.0) == pytest.approx(2 * stats.norm.cdf(0.5) - 1)


@pytest.mark.parametrize("kwargs", [
    dict(mode=Mode.EEAI, order=2),
    dict(mode="bogus", order=1),
    dict(mode=Mode.AEA, order=4),
    dict(mode=Mode.AEA, order=1, smoothing_eps=0.4),
])
def test_request_validation(gaussian_spec, kwargs):
    with pytest.raises(ConfigurationError):
        AccountantRequest(((gaussian_spec, 10),), Epsilon(1.0), **kwargs)


def test_targets_and_composition_validation(gaussian_spec):
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(ConfigurationError):
            Epsilon(bad)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ConfigurationError):
            Delta(bad)
    with pytest.raises(ConfigurationError):
        AccountantRequest((), Epsilon(1.0))
    with pytest.raises(ConfigurationError):
        AccountantRequest(((gaussian_spec, 0),), Epsilon(1.0))


def test_clt_is_order_zero(gaussian_spec):
    req = AccountantRequest(((gaussian_spec, 10),), Epsilon(1.0), order=3, mode=Mode.CLT)
    assert req.order == 0
    clt = EdgeworthAccountant.from_request(req).delta(EPS_GRID)[1]
    aea = EdgeworthAccountant([(gaussian_spec, 10)], order=0).delta(EPS_GRID)[1]
    np.testing.assert_array_equal(clt, aea)


def test_pure_gaussian_is_exact():
    spec = mechanism_from_sigma("gaussian", mu=0.5)
    for order in (0, 1, 2, 3):
        est = EdgeworthAccountant([(spec, 16)], order=order).delta(EPS_GRID)[1]
        np.testing.assert_allclose(est, gdp_delta(2.0, EPS_GRID), atol=1e-13)


@pytest.mark.parametrize("mode", list(Mode))
def test_identity_composition(mode):
    spec = MechanismSpec(MechanismKind.SUBSAMPLED_GAUSSIAN, 1.0, 0.0)
    acc = EdgeworthAccountant([(spec, 100)], order=1, mode=mode, grid_size=2 ** 12)
    point = acc.privacy_point(1.0)
    assert point.delta_est == 0.0
    if mode is Mode.EEAI:
        assert (point.delta_lower, point.delta_upper) == (0.0, 0.0)
    assert acc.epsilon(1e-5).eps_est == 0.0


def test_eeai_sandwich(laplace_spec):
    acc = EdgeworthAccountant([(laplace_spec, 1000)], order=1, mode=Mode.EEAI)
    lower, est, upper = acc.delta(EPS_GRID)
    assert np.all(lower <= est)
    assert np.all(est <= upper)
    frame = acc.delta_curve(EPS_GRID)
    assert list(frame.columns) == ["epsilon", "delta_lower", "delta_est", "delta_upper"]
    assert (frame.delta_lower <= frame.delta_est).all()
    assert (frame.delta_est <= frame.delta_upper).all()
    assert frame.min(numeric_only=True).min() >= 0.0


def fig3_spec(m):
    return mechanism_from_sigma("subsampled-gaussian", sigma=0.8, p=0.4 / math.sqrt(m))


def test_eeai_bounds_use_probabilities():
    m = 100_000
    lower, est, upper = EdgeworthAccountant([(fig3_spec(m), m)], order=1, mode=Mode.EEAI).delta(EPS_GRID)
    # without clipping the survival bounds, delta_upper grows like e^eps here
    assert upper.max() <= 1.0
    assert np.all(lower <= est)
    assert np.all(est <= upper)
    assert upper[-1] < 0.1


def test_eeai_interval_shrinks_with_m():
    delta = 0.1
    widths = {}
    for m in (1_000, 100_000):
        est = EdgeworthAccountant([(fig3_spec(m), m)], order=1, mode=Mode.EEAI).epsilon(delta)
        assert est.eps_lower <= est.eps_est <= est.eps_upper
        widths[m] = est.eps_upper - est.eps_lower
    assert math.isfinite(widths[100_000])
    assert widths[100_000] < 0.5 * widths[1_000]


def test_aea_curve_has_no_bounds(dpsgd_spec):
    frame = EdgeworthAccountant([(dpsgd_spec, 1000)], order=2).delta_curve(EPS_GRID)
    assert frame.delta_lower.isna().all()
    assert frame.delta_upper.isna().all()
    assert frame.delta_est.between(0.0, 1.0).all()


@pytest.mark.parametrize("mode", [Mode.AEA, Mode.EEAI])
def test_branch_supremum(dpsgd_spec, mode):
    acc = EdgeworthAccountant([(dpsgd_spec, 1000)], order=1, mode=mode)
    per_branch = acc.branch_deltas(EPS_GRID)
    assert set(per_branch) == {PLLRBranch.PRIMARY, PLLRBranch.INVERSE}
    est = acc.delta(EPS_GRID)[1]
    np.testing.assert_array_equal(est, np.maximum(per_branch[PLLRBranch.PRIMARY][1], per_branch[PLLRBranch.INVERSE][1]))
    point = acc.privacy_point(2.0)
    assert set(point.per_branch) == {PLLRBranch.PRIMARY, PLLRBranch.INVERSE}


@pytest.mark.parametrize("mode", [Mode.AEA, Mode.EEAI])
def test_split_composition_is_identical(laplace_spec, mode):
    whole = EdgeworthAccountant([(laplace_spec, 1000)], mode=mode).privacy_point(1.5)
    split = EdgeworthAccountant([(laplace_spec, 300), (laplace_spec, 700)], mode=mode).privacy_point(1.5)
    assert whole == split


def test_heterogeneous_composition(dpsgd_spec, laplace_spec):
    acc = EdgeworthAccountant([(dpsgd_spec, 500), (laplace_spec, 500)], order=2)
    assert acc.m == 1000
    assert acc.homogeneous_spec is None
    point = acc.privacy_point(1.0)
    assert 0.0 <= point.delta_est <= 1.0


def test_epsilon_round_trip(dpsgd_spec):
    req = AccountantRequest(((dpsgd_spec, 1000),), Delta(1e-5), order=2)
    est = epsilon_at_delta(req)
    assert isinstance(est, EpsilonEstimate)
    assert est.eps_lower is None and est.eps_upper is None
    assert est.eps_est > 0
    point = delta_at_epsilon(AccountantRequest(((dpsgd_spec, 1000),), Epsilon(est.eps_est), order=2))
    assert point.delta_est == pytest.approx(1e-5, rel=1e-6)


def test_epsilon_is_monotone_in_delta(gaussian_spec):
    acc = EdgeworthAccountant([(gaussian_spec, 10)], order=1)
    eps = [acc.epsilon(d).eps_est for d in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert eps == sorted(eps)
    assert gdp_delta(math.sqrt(10), eps[1]) == pytest.approx(1e-4, rel=1e-8)


def test_epsilon_for_weak_composition(dpsgd_spec):
    assert EdgeworthAccountant([(dpsgd_spec, 10)]).epsilon(0.999).eps_est == 0.0


def test_eeai_epsilon_interval(laplace_spec):
    est = EdgeworthAccountant([(laplace_spec, 1000)], mode=Mode.EEAI).epsilon(0.05)
    assert est.eps_lower <= est.eps_est <= est.eps_upper


def test_epsilon_search_bound(gaussian_spec, laplace_spec, dpsgd_spec):
    assert epsilon_search_bound(laplace_spec, 100, 1e-5) is None
    for spec in (gaussian_spec, dpsgd_spec):
        value = epsilon_search_bound(spec, 1000, 1e-5)
        assert value is None or (value > 0 and math.isfinite(value))


def test_epsilon_search_bound_keeps_positive_candidate(dpsgd_spec):
    m, delta = 1000, 1e-5
    first = m * math.log(dpsgd_spec.p * delta / stats.norm.sf(stats.norm.isf(delta) + dpsgd_spec.mu))
    z_m = stats.norm.isf(delta / math.sqrt(m))
    second = math.log(delta / stats.norm.sf((z_m + dpsgd_spec.mu) / math.sqrt(m)))
    assert first > 0 >= second
    assert epsilon_search_bound(dpsgd_spec, m, delta) == pytest.approx(first)
    # both candidates vacuous
    assert epsilon_search_bound(dpsgd_spec, 10_000, 0.015) is None


def test_monotonicity_violations():
    assert monotonicity_violations(np.array([0.5, 0.4, 0.4, 0.1])) == 0
    assert monotonicity_violations(np.array([0.5, 0.4, 0.45, 0.1, -0.2, -0.1])) == 1


@pytest.mark.parametrize("order", [1, 2])
def test_clamped_aea_curve_is_monotone(dpsgd_spec, order):
    frame = EdgeworthAccountant([(dpsgd_spec, 10_000)], order=order).delta_curve(np.linspace(0.0, 8.0, 401))
    assert monotonicity_violations(frame.delta_est.to_numpy()) == 0
    assert frame.delta_est.iloc[0] > frame.delta_est.iloc[-1]


def test_rescaled(dpsgd_spec):
    acc = EdgeworthAccountant([(dpsgd_spec, 10)], order=2)
    bigger = acc.rescaled(100)
    assert bigger.m == 1000
    assert bigger.order == 2
    resampled = acc.rescaled(100, p=0.02)
    assert resampled.homogeneous_spec.p == 0.02


@pytest.mark.parametrize("text, m, expected", [
    ("fixed:0.01", 100, 0.01),
    ("0.4/sqrt(m)", 100, 0.04),
    ("1/sqrt(m*log m)", 100, 1 / math.sqrt(100 * math.log(100))),
    ("0.1*sqrt(log m/m)", 100, 0.1 * math.sqrt(math.log(100) / 100)),
])
def test_sampling_rules(text, m, expected):
    assert SamplingRule.parse(text)(m) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["", "0.4/m", "fixed:", "fixed:abc", "x/sqrt(m)"])
def test_bad_sampling_rules(text):
    with pytest.raises(ConfigurationError):
        SamplingRule.parse(text)


def test_sampling_rule_out_of_range():
    with pytest.raises(ConfigurationError):
        SamplingRule.parse("2/sqrt(m)")(1)


def test_privacy_curve_order_and_failures(dpsgd_spec):
    req = AccountantRequest(((dpsgd_spec, 1),), Epsilon(1.0), order=1)
    points = privacy_curve(req, [100, 1, 16], SamplingRule.parse("2/sqrt(m)"), threads=3)
    assert [p.m for p in points] == [100, 1, 16]
    assert points[1].result is None and "ConfigurationError" in points[1].error
    assert points[0].p == pytest.approx(0.2)
    assert all(p.error is None for p in (points[0], points[2]))
    with pytest.raises(ConfigurationError):
        privacy_curve(req, [])


def test_privacy_curve_threads_do_not_change_results(gaussian_spec):
    req = AccountantRequest(((gaussian_spec, 1),), Delta(1e-5), mode=Mode.CLT)
    serial = privacy_curve(req, [10, 100, 1000], threads=1)
    parallel = privacy_curve(req, [10, 100, 1000], threads=3)
    assert [p.result for p in serial] == [p.result for p in parallel]
    np.testing.assert_allclose([gdp_delta(math.sqrt(p.m), p.result.eps_est) for p in serial], 1e-5, rtol=1e-8)


def test_privacy_curve_reads_thread_env_per_call(monkeypatch, gaussian_spec):
    req = AccountantRequest(((gaussian_spec, 1),), Delta(1e-5), mode=Mode.CLT)
    monkeypatch.setenv("EA_NUM_THREADS", "2")
    assert len(privacy_curve(req, [10, 100])) == 2
    monkeypatch.setenv("EA_NUM_THREADS", "lots")
    with pytest.raises(ConfigurationError, match="EA_NUM_THREADS"):
        privacy_curve(req, [10, 100])
    # an explicit thread count never reads the environment
    assert len(privacy_curve(req, [10, 100], threads=1)) == 2


@pytest.mark.slow
@pytest.mark.parametrize("m", [1_000, 10_000, 100_000])
@pytest.mark.parametrize("sigma, p", [(0.8, 0.01), (1.0, 0.05), (0.8, None)])
def test_eeai_contains_oracle(sigma, p, m):
    spec = fig3_spec(m) if p is None else mechanism_from_sigma("subsampled-gaussian", sigma=sigma, p=p)
    eps = np.linspace(0.0, 10.0, 2000)
    frame = EdgeworthAccountant([(spec, m)], order=1, mode=Mode.EEAI).delta_curve(eps)
    truth = oracle_delta([(spec, m)], eps)
    assert np.all(frame.delta_lower.to_numpy() <= truth + 1e-6)
    assert np.all(truth <= frame.delta_upper.to_numpy() + 1e-6)


@pytest.mark.slow
def test_second_order_beats_clt_against_oracle(dpsgd_spec):
    delta = 0.015
    for m in (1_000, 10_000):
        truth = EdgeworthAccountant([(dpsgd_spec, m)], mode=Mode.ORACLE).epsilon(delta).eps_est
        aea = EdgeworthAccountant([(dpsgd_spec, m)], order=2).epsilon(delta).eps_est
        clt = EdgeworthAccountant([(dpsgd_spec, m)], mode=Mode.CLT).epsilon(delta).eps_est
        assert abs(aea - truth) <= abs(clt - truth)
    # at m = 10^4 the delta = 0.015 point sits ~4 sd into the X tail, where the
    # fifth-cumulant terms of order 3 still move epsilon by a few hundredths
    third = EdgeworthAccountant([(dpsgd_spec, 10_000)], order=3).epsilon(delta).eps_est
    assert abs(third - truth) <= 0.02
    assert abs(third - truth) <= abs(aea - truth)


@pytest.mark.slow
@pytest.mark.parametrize("m", [1_000, 10_000])
def test_second_order_beats_clt_in_far_tail(m):
    spec = mechanism_from_sigma("subsampled-gaussian", sigma=1.0, p=0.05)
    delta = 1e-5
    truth = EdgeworthAccountant([(spec, m)], mode=Mode.ORACLE).epsilon(delta).eps_est
    aea = EdgeworthAccountant([(spec, m)], order=2).epsilon(delta).eps_est
    clt = EdgeworthAccountant([(spec, m)], mode=Mode.CLT).epsilon(delta).eps_est
    assert abs(aea - truth) <= abs(clt - truth)


@pytest.mark.slow
def test_curve_cost_is_amortised(dpsgd_spec):
    pllr_moments.cache_clear()
    start = time.perf_counter()
    EdgeworthAccountant([(dpsgd_spec, 1000)], order=2).privacy_point(1.0)
    single = time.perf_counter() - start
    pllr_moments.cache_clear()
    start = time.perf_counter()
    EdgeworthAccountant([(dpsgd_spec, 1000)], order=2).delta_curve(np.linspace(0.05, 5.0, 100))
    curve = time.perf_counter() - start
    assert curve <= 3.0 * single


@pytest.mark.slow
def test_heterogeneous_cost_is_linear():
    counts = (100, 300, 1000)
    seconds = []
    for n in counts:
        composition = [(mechanism_from_sigma("gaussian", sigma=10.0 + k / n), 1) for k in range(n)]
        best = math.inf
        for _ in range(5):
            pllr_moments.cache_clear()
            start = time.perf_counter()
            EdgeworthAccountant(composition, order=2).privacy_point(1.0)
            best = min(best, time.perf_counter() - start)
        seconds.append(best)
    fit = stats.linregress(np.log(counts), np.log(seconds))
    assert fit.rvalue ** 2 >= 0.95
    assert fit.slope < 1.5


@pytest.mark.slow
def test_oracle_mode_inversion(gaussian_spec):
    acc = EdgeworthAccountant([(gaussian_spec, 4)], mode=Mode.ORACLE, grid_size=2 ** 16)
    est = acc.epsilon(1e-3)
    assert gdp_delta(2.0, est.eps_est) == pytest.approx(1e-3, rel=1e-2)
