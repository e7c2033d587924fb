import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from uargmin.asymptotics import LimitLaw
from uargmin.errors import ConfigError, ReplicationError
from uargmin.montecarlo import (
    EmpiricalCDF, SimConfig, ks_distance, policy_agreement, replication_rng, run,
    simulate_endpoints, two_sample_ks,
)

MEDIAN = {"loss": {"id": "check", "params": [0.5]}, "kernel": {"id": "identity"},
          "data_model": {"family": "normal", "params": [0, 1]}}
SQUARE = {"loss": {"id": "square"}, "kernel": {"id": "identity"},
          "data_model": {"family": "normal", "params": [0, 1]}}
WALSH = {**MEDIAN, "kernel": {"id": "walsh"}}


def test_single_replication_is_an_atom():
    law = LimitLaw.normal(1.0)
    for r in (-0.7, 0.0, 1.3):
        ecdf = EmpiricalCDF.from_residuals([r])
        expected = max(law.cdf_left(r), 1 - law.cdf(r))
        assert ks_distance(ecdf, law) == pytest.approx(expected, abs=1e-15)
    result = run(SimConfig(MEDIAN, n=25, reps=1, a_n="root-n", m=0.0, law={"variance": math.pi / 2}))
    r = float(result.ecdf.values[0])
    assert result.ks == pytest.approx(max(result.law.cdf_left(r), 1 - result.law.cdf(r)), abs=1e-15)


@pytest.mark.parametrize("N", [1, 10, 1000])
def test_stratified_quantiles_give_half_step(N):
    law = LimitLaw.normal(2.0)
    ecdf = EmpiricalCDF.from_residuals(law.quantile((np.arange(1, N + 1) - 0.5) / N))
    assert ks_distance(ecdf, law) == pytest.approx(1 / (2 * N), rel=1e-9)


def test_atom_at_median_is_half():
    assert ks_distance(EmpiricalCDF.from_residuals([0.0]), LimitLaw.normal(1.0)) == 0.5


def test_exact_draws_are_close():
    law = LimitLaw.normal(math.pi / 2)
    draws = law.sample(np.random.default_rng(2024), 100_000)
    assert ks_distance(EmpiricalCDF.from_residuals(draws), law) < 0.006


def test_ks_matches_scipy_for_continuous_law():
    x = np.random.default_rng(3).normal(size=500) * 1.2
    law = LimitLaw.normal(1.44)
    assert ks_distance(EmpiricalCDF.from_residuals(x), law) == \
        pytest.approx(stats.kstest(x, stats.norm(scale=1.2).cdf).statistic, abs=1e-12)


def test_ks_accounts_for_mass_at_infinity():
    sub = LimitLaw(1.0, left="zero", right="power", d=1.0)
    half = np.concatenate([np.full(500, -1e15), np.abs(np.random.default_rng(1).normal(size=500))])
    ecdf = EmpiricalCDF.from_residuals(half)
    assert (ecdf.count_minus_inf, ecdf.count_plus_inf) == (500, 0)
    assert ks_distance(ecdf, sub) < 0.06
    # the same finite draws without the tallied mass are far off
    assert ks_distance(EmpiricalCDF.from_residuals(half[500:]), sub) > 0.4


def test_ks_against_plateau_law():
    law = LimitLaw(1.0, c1=0.25, c2=0.75)
    ecdf = EmpiricalCDF.from_residuals([-0.25] * 50 + [0.75] * 50)
    assert ks_distance(ecdf, law) == 0.0
    assert ks_distance(EmpiricalCDF.from_residuals([0.0] * 100), law) == 0.5


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(-1e14, 1e14), min_size=1, max_size=60))
def test_ecdf_bookkeeping(values):
    ecdf = EmpiricalCDF.from_residuals(values)
    assert ecdf.count_minus_inf + ecdf.count_plus_inf + ecdf.values.size == len(values)
    assert np.all(np.diff(ecdf.values) >= 0)
    assert 0 <= ks_distance(ecdf, LimitLaw.normal(1.0)) <= 1


def test_replication_streams_are_fixed():
    a = replication_rng(7, 3).random(4)
    b = replication_rng(7, 3).random(4)
    c = replication_rng(7, 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    expected = np.random.default_rng(np.random.SeedSequence(7, spawn_key=(3,))).random(4)
    np.testing.assert_array_equal(a, expected)


def test_results_do_not_depend_on_worker_count():
    base = dict(problem=WALSH, n=30, reps=37, a_n="root-n", m=0.0, law={"variance": math.pi / 3},
                master_seed=99)
    runs = [simulate_endpoints(SimConfig(**base, workers=w)) for w in (1, 2, 8)]
    for other in runs[1:]:
        assert np.array_equal(runs[0], other)
    assert runs[0].tobytes() == runs[1].tobytes()


def test_seed_changes_results():
    base = dict(problem=MEDIAN, n=30, reps=20, a_n="root-n", m=0.0, law={"variance": 1.0})
    a = simulate_endpoints(SimConfig(**base, master_seed=1))
    b = simulate_endpoints(SimConfig(**base, master_seed=2))
    assert not np.array_equal(a, b)


def test_square_loss_policies_agree_exactly():
    result = run(SimConfig(SQUARE, n=50, reps=200, a_n="root-n", m=0.0, law={"variance": 1.0}))
    assert policy_agreement(result) == 0.0
    np.testing.assert_array_equal(result.residuals["smallest"], result.residuals["largest"])


def test_even_sample_median_policies_differ_at_finite_n():
    result = run(SimConfig(MEDIAN, n=4, reps=50, a_n=1.0, m=0.0, law={"variance": 1.0}))
    gap = result.residuals["largest"] - result.residuals["smallest"]
    assert np.all(gap > 0)
    assert policy_agreement(result) > 0


def test_replication_failure_reports_seed():
    ties = {"loss": {"id": "check", "params": [0.5]}, "kernel": {"id": "theil_sen"},
            "data_model": {"family": "regression", "intercept": 0, "slope": 1,
                           "design": {"family": "empirical", "values": [0, 1]},
                           "noise": {"family": "normal"}}}
    with pytest.raises(ReplicationError) as info:
        run(SimConfig(ties, n=10, reps=5, a_n=1.0, m=1.0, law={"variance": 1.0}, master_seed=5))
    err = info.value
    assert err.index == 0 and err.spawn_key == (0,) and err.seed_entropy == 5
    assert "SeedSequence(5, spawn_key=(0,))" in str(err)


@pytest.mark.parametrize("bad", [
    {"reps": 0}, {"n": 0}, {"policy": "median"}, {"workers": 0}, {"a_n": -1.0}, {"a_n": "auto"},
    {"master_seed": -1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**{"problem": MEDIAN, "n": 10, "reps": 5, **bad})


def test_config_json():
    cfg = SimConfig(MEDIAN, n=10, reps=5)
    assert SimConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        SimConfig.from_json({**cfg.to_json(), "colour": "red"})
    with pytest.raises(ConfigError, match="lacks"):
        SimConfig.from_json({"problem": MEDIAN, "n": 10})
    with pytest.raises(ConfigError):
        SimConfig({"loss": {"id": "square"}}, n=10, reps=5)


def test_result_serialization():
    result = run(SimConfig(MEDIAN, n=21, reps=40, a_n="root-n", m=0.0,
                           law={"variance": math.pi / 2}))
    obj = json.loads(json.dumps(result.to_json()))
    assert obj["reps"] == 40 and 0 <= obj["ks"] <= 1
    assert obj["policy_agreement"] == max(obj["policy_ks"].values())
    rows = list(csv.reader(io.StringIO(result.to_csv())))
    assert rows[0] == ["residual", "ecdf", "H"] and len(rows) == 41
    r, e, h = map(float, rows[-1])
    assert e == 1.0 and h == pytest.approx(stats.norm.cdf(r, scale=math.sqrt(math.pi / 2)))


def test_report_normalization_matches_explicit():
    explicit = run(SimConfig(MEDIAN, n=49, reps=30, a_n="root-n", m=0.0,
                             law={"variance": math.pi / 2}))
    derived = run(SimConfig(MEDIAN, n=49, reps=30))
    assert derived.a_n == pytest.approx(1 / 7)
    assert derived.m == pytest.approx(0.0, abs=1e-12)
    assert derived.law.sigma ** 2 == pytest.approx(0.25)
    np.testing.assert_allclose(explicit.residuals["midpoint"], derived.residuals["midpoint"],
                               atol=1e-9)


def test_two_sample_ks():
    assert two_sample_ks([1, 2, 3], [1, 2, 3]) == 0.0
    assert two_sample_ks([0, 0], [1, 1]) == 1.0
    x, y = np.random.default_rng(0).normal(size=(2, 300))
    assert two_sample_ks(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic, abs=1e-12)


SMOOTH_PROBLEMS = [
    ("median", MEDIAN, math.pi / 2),
    ("sigmoid", {**MEDIAN, "loss": {"id": "sigmoid_normal"}}, math.pi / 3),
    # the sample mean of exponential data is only asymptotically normal
    ("mean of exponentials", {**SQUARE, "data_model": {"family": "exponential", "params": [1]}}, 1.0),
]


@pytest.mark.slow
@pytest.mark.parametrize("name,problem,variance", SMOOTH_PROBLEMS, ids=[p[0] for p in SMOOTH_PROBLEMS])
def test_distance_shrinks_with_sample_size(name, problem, variance):
    m = 1.0 if name == "mean of exponentials" else 0.0

    def median_ks(n):
        return float(np.median([
            run(SimConfig(problem, n=n, reps=2000, a_n="root-n", m=m, law={"variance": variance},
                          master_seed=seed)).ks
            for seed in range(10)]))

    assert median_ks(400) < median_ks(50)
