"""Seeded replication harness for the normalised minimiser.

Each replication draws a fresh dataset, computes the minimiser interval and
records the residual (estimate - m) / a_n for all three selection policies.
Replication i always uses the generator seeded by (master_seed, i), so the
output does not depend on how replications are spread over processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .asymptotics import LimitLaw, PopulationProblem, analyze, normalizing_sequence
from .errors import ConfigError, ReplicationError
from .estimator import DEFAULT_CAP, POLICIES, argmin_interval, kernel_sample
from .population import from_json, kernel_law, model_from_json
from .problem import kernel_from_json, loss_from_json

DEFAULT_SEED = 20240601
CLIP = 1e12


@dataclass
class SimConfig:
    """Plain-data description of a simulation run.

    ``problem`` holds the JSON descriptions ``loss``, ``kernel`` and
    ``data_model`` (plus an optional ``kernel_law``).  ``a_n`` is a positive
    number, ``"root-n"`` for n^-1/2, or ``"report"`` to take it from the
    population analysis; ``m`` and ``law`` default to the analysis as well.
    """

    problem: dict
    n: int
    reps: int
    policy: str = "midpoint"
    a_n: float | str = "report"
    m: float | None = None
    law: dict | None = None
    master_seed: int = DEFAULT_SEED
    workers: int = 1
    clip: float = CLIP
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if int(self.reps) < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if int(self.n) < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {list(POLICIES)}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        for key in ("loss", "kernel", "data_model"):
            if key not in self.problem:
                raise ConfigError(f"simulation problem lacks {key!r}")
        if isinstance(self.a_n, str) and self.a_n not in ("report", "root-n"):
            raise ConfigError(f"a_n must be a number, 'root-n' or 'report', got {self.a_n!r}")
        if not isinstance(self.a_n, str) and not float(self.a_n) > 0:
            raise ConfigError("a_n must be positive")
        self.n, self.reps, self.workers = int(self.n), int(self.reps), int(self.workers)
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        self.master_seed = int(self.master_seed)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known - {"schema"}
        if unknown:
            raise ConfigError(f"unknown simulation keys {sorted(unknown)}")
        missing = {"problem", "n", "reps"} - set(obj)
        if missing:
            raise ConfigError(f"simulation config lacks {sorted(missing)}")
        return cls(**{k: v for k, v in obj.items() if k in known})


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


# ------------------------------------------------------------------ workers

_BUILT: dict[str, tuple] = {}


def _build(problem: dict):
    key = json.dumps(problem, sort_keys=True)
    if key not in _BUILT:
        _BUILT[key] = (loss_from_json(problem["loss"]), kernel_from_json(problem["kernel"]),
                       model_from_json(problem["data_model"]))
    return _BUILT[key]


def _run_chunk(problem: dict, n: int, master_seed: int, cap: int, start: int, stop: int):
    loss, kernel, model = _build(problem)
    out = np.empty((stop - start, 2))
    for i in range(start, stop):
        try:
            rng = replication_rng(master_seed, i)
            ks = kernel_sample(model.sample(rng, n), kernel, cap)
            interval = argmin_interval(ks, loss, "smallest")
        except Exception as exc:  # replayed in the parent with the seed
            return None, (i, f"{type(exc).__name__}: {exc}")
        out[i - start] = interval.smallest, interval.largest
    return out, None


def simulate_endpoints(config: SimConfig) -> np.ndarray:
    """Smallest and largest minimiser per replication, shape (reps, 2)."""
    reps = config.reps
    chunks = max(1, min(reps, config.workers * 4))
    bounds = np.linspace(0, reps, chunks + 1).astype(int)
    jobs = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    args = (config.problem, config.n, config.master_seed, config.cap)
    if config.workers == 1:
        results = [_run_chunk(*args, a, b) for a, b in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_chunk, *args, a, b) for a, b in jobs]
            results = [f.result() for f in futures]
    parts = []
    for part, error in results:
        if error is not None:
            index, message = error
            raise ReplicationError(
                f"replication {index} failed ({message}); replay with "
                f"SeedSequence({config.master_seed}, spawn_key=({index},))",
                index, config.master_seed, (index,))
        parts.append(part)
    return np.concatenate(parts)


# ------------------------------------------------------------ empirical law

@dataclass(frozen=True)
class EmpiricalCDF:
    """ECDF of residuals; entries beyond the clip bound are tallied at +-inf."""

    values: np.ndarray
    count_minus_inf: int = 0
    count_plus_inf: int = 0

    @classmethod
    def from_residuals(cls, residuals, clip: float = CLIP) -> "EmpiricalCDF":
        r = np.asarray(residuals, dtype=float)
        if np.any(np.isnan(r)):
            raise ConfigError("residuals contain NaN")
        lo, hi = r < -clip, r > clip
        return cls(np.sort(r[~(lo | hi)]), int(lo.sum()), int(hi.sum()))

    @property
    def total(self) -> int:
        return int(self.values.size) + self.count_minus_inf + self.count_plus_inf

    def __call__(self, x):
        return (self.count_minus_inf + np.searchsorted(self.values, x, side="right")) / self.total

    def left(self, x):
        return (self.count_minus_inf + np.searchsorted(self.values, x, side="left")) / self.total


def ks_distance(ecdf: EmpiricalCDF, law: LimitLaw) -> float:
    """Exact sup-distance between the ECDF and the law's CDF.

    Both functions are monotone between the data points and the law's own
    jump points, so the supremum is attained at one of those points from the
    left or the right, or in the limits at -inf and +inf.
    """
    if ecdf.total == 0:
        raise ConfigError("empty ECDF")
    pts = np.unique(np.concatenate([ecdf.values, law.jump_points()]))
    right = np.abs(ecdf(pts) - law.cdf(pts))
    left = np.abs(ecdf.left(pts) - law.cdf_left(pts))
    p_minus, p_plus = law.mass_at_infinity()
    ends = [abs(ecdf.count_minus_inf / ecdf.total - p_minus),
            abs(1.0 - ecdf.count_plus_inf / ecdf.total - (1.0 - p_plus))]
    return float(max(right.max(initial=0.0), left.max(initial=0.0), *ends))


def cramer_von_mises(ecdf: EmpiricalCDF, law: LimitLaw) -> float:
    """CvM statistic of the finite residuals (a secondary diagnostic)."""
    x = ecdf.values
    N = x.size
    if N == 0:
        return math.nan
    i = np.arange(1, N + 1)
    return float(1.0 / (12 * N) + np.sum((law.cdf(x) - (2 * i - 1) / (2 * N)) ** 2))


def two_sample_ks(a, b) -> float:
    a, b = np.sort(np.asarray(a, dtype=float)), np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# ------------------------------------------------------------------- runner

@dataclass
class SimResult:
    config: SimConfig
    m: float
    a_n: float
    law: LimitLaw
    residuals: dict
    ecdf: EmpiricalCDF
    ks: float
    cvm: float
    policy_ks: dict = field(default_factory=dict)
    runtime: float = 0.0

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "m": self.m, "a_n": self.a_n, "law": self.law.to_json(),
            "policy": self.config.policy,
            "reps": self.config.reps,
            "ks": self.ks, "cvm": self.cvm,
            "count_minus_inf": self.ecdf.count_minus_inf,
            "count_plus_inf": self.ecdf.count_plus_inf,
            "policy_ks": self.policy_ks,
            "policy_agreement": max(self.policy_ks.values()) if self.policy_ks else None,
            "runtime_seconds": self.runtime,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["residual", "ecdf", "H"])
        e = self.ecdf
        for x in e.values:
            w.writerow([repr(float(x)), repr(float(e(x))), repr(float(self.law.cdf(x)))])
        return buf.getvalue()


def _population_setup(config: SimConfig):
    problem = config.problem
    loss = loss_from_json(problem["loss"])
    kernel = kernel_from_json(problem["kernel"])
    model = model_from_json(problem["data_model"])
    R = from_json(problem["kernel_law"]) if "kernel_law" in problem else kernel_law(model, kernel)
    prob = PopulationProblem(R, kernel.degree, model if kernel.degree > 1 else None,
                             kernel if kernel.degree > 1 else None)
    return prob, loss


def resolve(config: SimConfig) -> tuple[float, float, LimitLaw]:
    """m, a_n and the limit law, analysing the population only if needed."""
    need_report = config.m is None or config.law is None or config.a_n == "report"
    report = None
    if need_report:
        prob, loss = _population_setup(config)
        report = analyze(prob, loss, m=config.m, seed=config.master_seed)
        if report.law is None:
            raise ConfigError(f"problem classified as {report.attraction.tag}; "
                              "supply m, a_n and law explicitly")
    m = float(config.m) if config.m is not None else report.m
    if config.a_n == "report":
        a_n = normalizing_sequence(report, config.n)
    elif config.a_n == "root-n":
        a_n = 1.0 / math.sqrt(config.n)
    else:
        a_n = float(config.a_n)
    if config.law is None:
        law = report.law
    elif "variance" in config.law:
        law = LimitLaw.normal(float(config.law["variance"]))
    else:
        law = LimitLaw.from_json(config.law)
    return m, a_n, law


def run(config: SimConfig) -> SimResult:
    """Replicate the estimator and compare the residual law with the limit."""
    start = time.perf_counter()
    m, a_n, law = resolve(config)
    ends = simulate_endpoints(config)
    residuals = {
        "smallest": (ends[:, 0] - m) / a_n,
        "largest": (ends[:, 1] - m) / a_n,
        "midpoint": (0.5 * (ends[:, 0] + ends[:, 1]) - m) / a_n,
    }
    ecdf = EmpiricalCDF.from_residuals(residuals[config.policy], config.clip)
    policy_ks = {}
    names = list(POLICIES)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            policy_ks[f"{a}-{b}"] = two_sample_ks(residuals[a], residuals[b])
    return SimResult(config, m, a_n, law, residuals, ecdf, ks_distance(ecdf, law),
                     cramer_von_mises(ecdf, law), policy_ks, time.perf_counter() - start)


def policy_agreement(result: SimResult) -> float:
    """Largest pairwise two-sample KS distance among the policy residuals."""
    return max(result.policy_ks.values())
