"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.verdict``) which is
repeated in the terminal summary.  Monte Carlo runs are shared between the
criteria that use them through session-scoped fixtures.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from oracles import exact_step_derivatives, objective_on_grid, quantile_interval, walsh_zeta_quadrature
from synthetic import BORDERLINE, KNOWN, check_expected
from uargmin.asymptotics import PopulationProblem, classify, classify_profile, find_m, law_from_class
from uargmin.estimator import argmin_interval, kernel_sample, v_minus, v_plus
from uargmin.montecarlo import SimConfig, run
from uargmin.population import builtin, piecewise_cdf, smirnov_cdf
from uargmin.problem import kernel_catalog, loss_catalog

CATALOG = [("square", []), ("check", [0.5]), ("check", [0.2]), ("abs", []), ("lp", [1.5]),
           ("lp", [3.0]), ("sigmoid_normal", []), ("sigmoid_cauchy", []),
           ("three_step", [-1.0, 0.5, 2.0, 0.3])]
LOSSES = [loss_catalog(i, p) for i, p in CATALOG]
IDENTITY = {"id": "identity"}
NORMAL_DATA = {"family": "normal", "params": [0, 1]}


def random_dataset(rng, n):
    kind = rng.integers(3)
    if kind == 0:
        return rng.normal(size=n) * rng.uniform(0.1, 10)
    if kind == 1:
        return rng.standard_cauchy(size=n)
    return rng.integers(-5, 6, size=n).astype(float)  # ties


# ------------------------------------------------------------------ oracles

def normal_median_variance():
    # alpha(1 - alpha) / f(0)^2 for the standard normal median
    return 0.25 / stats.norm.pdf(0) ** 2


def walsh_median_variance():
    # l^2 zeta / V'(0)^2; the Walsh average of N(0,1) pairs is N(0, 1/2)
    slope = stats.norm(scale=math.sqrt(0.5)).pdf(0)
    return 4 * walsh_zeta_quadrature() / slope ** 2


def sigmoid_variance(mu):
    # psi = Phi - 1/2 under N(mu, 1): zeta = E(Phi(mu - X) - 1/2)^2, V'(mu) = E phi(mu - X)
    z, _ = integrate.quad(lambda x: (stats.norm.cdf(mu - x) - 0.5) ** 2 * stats.norm.pdf(x, mu), -np.inf,
                          np.inf, epsabs=1e-13)
    slope, _ = integrate.quad(lambda x: stats.norm.pdf(mu - x) * stats.norm.pdf(x, mu), -np.inf, np.inf,
                              epsabs=1e-13)
    return z / slope ** 2


def mc_configs():
    sig_mu = 1.0
    return {
        3: (SimConfig({"loss": {"id": "square"}, "kernel": IDENTITY, "data_model": NORMAL_DATA},
                      n=400, reps=5000, a_n=400 ** -0.5, m=0.0, law={"variance": 4 * 1.0 / 4}),
            0.03, 120),
        4: (SimConfig({"loss": {"id": "check", "params": [0.5]}, "kernel": IDENTITY,
                       "data_model": NORMAL_DATA},
                      n=400, reps=5000, a_n=400 ** -0.5, m=0.0, law={"variance": normal_median_variance()}),
            0.03, 120),
        5: (SimConfig({"loss": {"id": "check", "params": [0.5]}, "kernel": {"id": "walsh"},
                       "data_model": NORMAL_DATA},
                      n=100, reps=3000, a_n=100 ** -0.5, m=0.0, law={"variance": walsh_median_variance()}),
            0.05, 300),
        6: (SimConfig({"loss": {"id": "sigmoid_normal"}, "kernel": IDENTITY,
                       "data_model": {"family": "normal", "params": [sig_mu, 1]}},
                      n=200, reps=3000, a_n=200 ** -0.5, m=sig_mu, law={"variance": sigmoid_variance(sig_mu)}),
            0.05, 180),
        7: (SimConfig({"loss": {"id": "check", "params": [0.5]}, "kernel": IDENTITY,
                       "data_model": {"family": "smirnov", "params": [0.05]}},
                      n=10_000, reps=2000, a_n=10_000 ** -0.5 / math.log(math.sqrt(10_000)) ** 2, m=0.0,
                      law={"variance": 0.25}),
            0.10, 300),
    }


@pytest.fixture(scope="session")
def mc_runs():
    return {k: run(cfg) for k, (cfg, _, _) in mc_configs().items()}


# ---------------------------------------------------------------- criteria

def test_criterion_01_argmin_characterization(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    failures = []
    for i in range(1000):
        loss = LOSSES[i % len(LOSSES)]
        l = 1 + int(rng.integers(2))
        n = int(rng.integers(max(l, 2), 51))
        kernel = kernel_catalog("identity") if l == 1 else kernel_catalog("walsh")
        ks = kernel_sample(random_dataset(rng, n), kernel)
        iv = argmin_interval(ks, loss)
        if loss.is_step:
            plus_lo, minus_lo = exact_step_derivatives(ks.values, loss, iv.smallest)
            plus_hi, minus_hi = exact_step_derivatives(ks.values, loss, iv.largest)
            below = exact_step_derivatives(ks.values, loss, np.nextafter(iv.smallest, -np.inf))[1]
            # a one-point answer may stand for a minimiser between two adjacent floats
            ok = plus_lo >= 0 and plus_hi >= 0 and (minus_lo <= 0 or below <= 0) and \
                (minus_hi <= 0 or iv.smallest == iv.largest)
        else:
            # the bisection certifies a sign change within tol of each endpoint
            d = 4 * iv.tol * max(1.0, abs(iv.smallest), abs(iv.largest))
            ok = v_minus(ks, loss, iv.smallest - d) <= 0 <= v_plus(ks, loss, iv.largest + d)
        lo, hi = ks.values[0], ks.values[-1]
        grid = np.concatenate([np.linspace(lo - 1, hi + 1, 1001),
                               np.linspace(iv.smallest - 1e-3, iv.largest + 1e-3, 101)])
        best = float(np.mean(loss.phi(iv.selected - ks.values)))
        scan = objective_on_grid(ks.values, loss, grid)
        if not ok or scan.min() < best - 1e-9:
            failures.append((i, loss.id, n, l, float(best - scan.min())))
    elapsed = time.perf_counter() - start
    verdict(1, not failures and elapsed < 60,
            f"1000 instances, {len(failures)} violations, {elapsed:.1f}s (limit 60s)")


def test_criterion_02_quantile_identity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    kernels = [kernel_catalog(k) for k in ("identity", "walsh", "abs_diff")]
    mismatches = 0
    for i in range(1000):
        kernel = kernels[i % 3]
        n = int(rng.integers(kernel.degree, 51))
        alpha = float(rng.uniform(0.01, 0.99)) if i % 4 else float(rng.integers(1, 10)) / 10
        ks = kernel_sample(random_dataset(rng, n), kernel)
        iv = argmin_interval(ks, loss_catalog("check", [alpha]))
        if (iv.smallest, iv.largest) != quantile_interval(ks.values.tolist(), alpha):
            mismatches += 1
    elapsed = time.perf_counter() - start
    verdict(2, mismatches == 0 and elapsed < 10,
            f"1000 instances, {mismatches} mismatches, {elapsed:.1f}s (limit 10s)")


@pytest.mark.parametrize("number,label", [
    (3, "sample mean, N(0,1)"), (4, "sample median, N(0, pi/2)"),
    (5, "Hodges-Lehmann, N(0, pi/3)"), (6, "sigmoid loss, N(0, pi/3)"),
    (7, "log-rate median, N(0, 1/4)"),
])
def test_criteria_03_to_07_limit_laws(verdict, mc_runs, number, label):
    cfg, tol, limit = mc_configs()[number]
    result = mc_runs[number]
    detail = f"{label}: KS {result.ks:.4f} (tol {tol}), {result.runtime:.1f}s (limit {limit}s)"
    if number == 7:
        # same data, population-derived a_n instead of the closed-form rate
        derived = run(SimConfig(cfg.problem, cfg.n, cfg.reps, a_n="report", m=0.0,
                                law={"variance": 0.25}))
        detail += f"; with the numerically inverted a_n the KS is {derived.ks:.4f}"
    verdict(number, result.ks <= tol and result.runtime < limit, detail)


def classification_cases():
    cases = [(name, V, m, exp) for name, V, m, exp in KNOWN]
    normal = PopulationProblem(builtin("normal", [0, 1]))
    median = loss_catalog("check", [0.5])
    real = [
        ("normal median", normal, median, 0.0, {"tag": "SmoothNormal", "alpha": 1.0}),
        ("plateau CDF", PopulationProblem(piecewise_cdf([(-2, 0), (-1, 0.5), (2, 0.5), (3, 1)])),
         median, 0.0, {"tag": "Class4", "c1": 1.0, "c2": 2.0}),
        ("cube / root CDF", PopulationProblem(piecewise_cdf(
            [(-0.25, 0.0), (0.0, 0.5), (0.5 ** (1 / 3), 1.0)], ["rpower:0.5", "power:3"])),
         median, 0.0, {"tag": "Class1", "alpha": 3.0}),
        ("root / cube CDF", PopulationProblem(piecewise_cdf(
            [(-(0.5 ** (1 / 3)), 0.0), (0.0, 0.5), (0.25, 1.0)], ["rpower:3", "power:0.5"])),
         median, 0.0, {"tag": "Class2", "alpha": 3.0}),
        ("log-squared CDF", PopulationProblem(smirnov_cdf(0.05)), median, 0.0,
         {"tag": "Class3", "alpha": 1.0}),
    ]
    return cases, real


def test_criterion_08_classification_suite(verdict):
    start = time.perf_counter()
    synthetic, real = classification_cases()
    wrong = []
    for name, V, m, expected in synthetic:
        problems = check_expected(classify_profile(V, m), expected)
        if problems:
            wrong.append(f"{name}: {problems}")
    for name, prob, loss, m, expected in real:
        problems = check_expected(classify(prob, loss, m), expected)
        if problems:
            wrong.append(f"{name}: {problems}")
    borderline_wrong = [name for name, V, m in BORDERLINE if classify_profile(V, m).tag != "Unclassified"]
    elapsed = time.perf_counter() - start
    total = len(synthetic) + len(real)
    verdict(8, not wrong and not borderline_wrong and elapsed < 30,
            f"{total - len(wrong)}/{total} known classes, "
            f"{len(BORDERLINE) - len(borderline_wrong)}/{len(BORDERLINE)} borderline Unclassified, "
            f"{elapsed:.1f}s (limit 30s) {wrong + borderline_wrong or ''}")


def test_criterion_09_functional_equation(verdict):
    start = time.perf_counter()
    synthetic, real = classification_cases()
    attractions = [classify_profile(V, m) for _, V, m, _ in synthetic]
    attractions += [classify(prob, loss, m) for _, prob, loss, m, _ in real]
    worst, tags = 0.0, set()
    for attraction in attractions:
        if attraction.tag in ("Unclassified", "Degenerate"):
            continue
        law = law_from_class(attraction, 0.7)
        tags.add(attraction.tag)
        for k in (2, 3, 4):
            worst = max(worst, law.functional_equation_residual(k, grid=np.linspace(-3, 3, 100)))
    elapsed = time.perf_counter() - start
    verdict(9, worst < 1e-9 and elapsed < 5,
            f"{len(attractions)} laws over {sorted(tags)}, max residual {worst:.2e}, {elapsed:.1f}s")


def test_criterion_10_policy_agreement(verdict, mc_runs):
    gaps = {k: max(mc_runs[k].policy_ks.values()) for k in (4, 5)}
    verdict(10, all(g <= 0.05 for g in gaps.values()),
            f"max pairwise policy KS: median {gaps[4]:.4f}, Hodges-Lehmann {gaps[5]:.4f} (tol 0.05)")


def test_criterion_11_determinism(verdict, mc_runs):
    differing = []
    for k, (cfg, _, _) in mc_configs().items():
        cfg.workers = 4
        again = run(cfg)
        for policy, values in mc_runs[k].residuals.items():
            if values.tobytes() != again.residuals[policy].tobytes():
                differing.append((k, policy))
    verdict(11, not differing,
            f"criteria 3-7 residuals with 4 workers vs 1: "
            f"{'bit-identical' if not differing else differing}")


def test_criterion_12_left_right_second_moments(verdict):
    laws = [builtin("normal", [0, 1]), builtin("exponential", [1]), builtin("uniform", [-1, 2]),
            builtin("cauchy", [0, 1]), smirnov_cdf(0.05),
            piecewise_cdf([(-1, 0), (0, 0.3), (2, 1)], ["power:2", "linear"])]
    bounded = ("check", "abs", "sigmoid_normal", "sigmoid_cauchy", "three_step")
    # the minimiser is an input to the comparison, so locating it is untimed setup
    setup = time.perf_counter()
    pairs = [(loss, law, find_m(PopulationProblem(law), loss)[0]) for loss in LOSSES for law in laws
             if law.family != "cauchy" or loss.id in bounded]  # otherwise the moment is infinite
    setup = time.perf_counter() - setup
    start = time.perf_counter()
    worst = 0.0
    for loss, law, m in pairs:
        cuts = [m - s for s, _ in loss.jumps] + [m - s for s in loss.cont_kinks]
        right = law.expect(lambda x: float(loss.psi_plus(m - x)) ** 2, points=cuts)
        left = law.expect(lambda x: float(loss.psi_minus(m - x)) ** 2, points=cuts)
        worst = max(worst, abs(right - left))
    elapsed = time.perf_counter() - start
    verdict(12, worst <= 1e-8 and elapsed < 5,
            f"{len(pairs)} loss/law pairs, max |difference| {worst:.2e}, {elapsed:.1f}s (limit 5s; "
            f"root finding {setup:.1f}s untimed)")
