"""Population-side analysis of a (loss, kernel law) pair.

Given the law R of the kernel value and a convex loss, this module computes
the population derivative V(t) = E psi(t - k), its root m, the variance
constant zeta, the one-sided derivatives of V at m, and the shape of V near
m.  The shape decides which of the four possible limit laws the normalised
minimiser follows, how fast it converges, and what the limit CDF is.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import AnalysisError, ConfigError
from .population import Distribution, MultivariateModel
from .problem import ConvexLoss, Kernel

V_TOL = 1e-12
M_TOL = 1e-12
UNIQUE_TOL = 1e-10
ZETA_FLOOR = 1e-12
DEFAULT_ZETA_BUDGET = 4_000_000
BRACKET_DOUBLINGS = 80


class DegenerateError(AnalysisError):
    """The variance constant vanishes, so the root-n scaling has no
    non-degenerate limit."""


@dataclass(frozen=True)
class PopulationProblem:
    """Law ``R`` of the kernel value, plus the raw model when the kernel has
    degree above one (needed for the variance constant)."""

    R: Distribution
    l: int = 1
    raw: MultivariateModel | None = None
    kernel: Kernel | None = None

    def __post_init__(self):
        if self.l < 1:
            raise ConfigError("kernel degree must be >= 1")
        if self.l >= 2 and (self.raw is None or self.kernel is None):
            raise ConfigError("degree >= 2 needs the raw-data model and the kernel")


# ------------------------------------------------------------------ V and m

def population_V(prob: PopulationProblem, loss: ConvexLoss, t: float) -> float:
    """E psi_plus(t - k) under the kernel law."""
    return _population_V(prob, loss, float(t), left=False)


def population_V_minus(prob: PopulationProblem, loss: ConvexLoss, t: float) -> float:
    """E psi_minus(t - k) under the kernel law."""
    return _population_V(prob, loss, float(t), left=True)


def _population_V(prob, loss, t, left):
    R = prob.R
    if loss.id == "square":
        return 2.0 * (t - R.mean())
    total = loss.base
    for shift, height in loss.jumps:
        # psi jump at `shift` contributes height * P(k <= t - shift)
        total += height * float(R.left_cdf(t - shift) if left else R.cdf(t - shift))
    if loss.psi_cont is not None:
        cont = loss.psi_cont
        kinks = [t - s for s in loss.cont_kinks] + [t - s for s, _ in loss.jumps]
        total += R.expect(lambda x: float(cont(t - x)), points=kinks)
    return float(total)


class VFunction:
    """Memoised population derivative, with the left version on demand."""

    def __init__(self, prob: PopulationProblem, loss: ConvexLoss):
        self.prob, self.loss = prob, loss
        self._cache: dict[float, float] = {}

    def __call__(self, t: float) -> float:
        t = float(t)
        if t not in self._cache:
            self._cache[t] = population_V(self.prob, self.loss, t)
        return self._cache[t]

    def left(self, t: float) -> float:
        return population_V_minus(self.prob, self.loss, t)


def _bracket(V: Callable[[float], float], center: float, width: float, level: float = 0.0):
    lo, hi = center - width, center + width
    for _ in range(BRACKET_DOUBLINGS):
        if V(lo) < level and V(hi) >= level:
            return lo, hi
        width *= 2.0
        lo, hi = center - width, center + width
    raise AnalysisError(f"no sign change of V - {level} found within +-{width:.3g} of {center}; "
                        "the pair has no interior minimiser")


def first_crossing(V: Callable[[float], float], lo: float, hi: float, level: float = 0.0,
                   strict: bool = False) -> float:
    """Leftmost t in (lo, hi] with V(t) >= level (> level when strict), to
    relative precision 2e-16."""
    test = (lambda v: v > level) if strict else (lambda v: v >= level)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 2e-16 * max(1.0, abs(lo), abs(hi)):
            return hi
        if test(V(mid)):
            hi = mid
        else:
            lo = mid


def find_m(prob: PopulationProblem, loss: ConvexLoss, V: Callable | None = None) -> tuple[float, bool]:
    """Leftmost root of V and whether the root is unique."""
    V = V or VFunction(prob, loss)
    center = float(prob.R.quantile(0.5))
    lo, hi = _bracket(V, center, 1.0)
    if loss.jumps or prob.R.atoms:
        # V may jump; bisection keeps the V(m-) <= 0 <= V(m) convention exact
        m = first_crossing(V, lo, hi)
    else:
        # continuous V, where each evaluation is a quadrature: Brent needs far fewer
        m = optimize.brentq(V, lo, hi, xtol=M_TOL * max(1.0, abs(center)), rtol=4 * np.finfo(float).eps)
        back = M_TOL * max(1.0, abs(m))
        if V(m - back) >= 0:
            # V vanishes on a stretch left of m; fall back to the leftmost crossing
            m = first_crossing(V, lo, m)
    return m, is_unique_root(V, m)


def is_unique_root(V: Callable[[float], float], m: float, scale: float = 1.0) -> bool:
    for k in range(1, 5):
        eta = scale * 10.0 ** (-k)
        if not (V(m - eta) < -UNIQUE_TOL and V(m + eta) > UNIQUE_TOL):
            return False
    return True


# ---------------------------------------------------------------------- zeta

@dataclass(frozen=True)
class ZetaEstimate:
    value: float
    se: float
    method: str
    budget: int = 0
    seed: int | None = None


def _step_second_moment(R: Distribution, loss: ConvexLoss, m: float, left: bool) -> float:
    # psi(m - x) is a step function of x; integrate its square cell by cell
    cuts = sorted({m - s for s, _ in loss.jumps})
    F = R.left_cdf if left else R.cdf
    probs = [float(F(c)) for c in cuts]

    def value_at(x):
        return float((loss.psi_minus if left else loss.psi_plus)(m - x))

    total = 0.0
    edges = [-math.inf, *cuts, math.inf]
    cum = [0.0, *probs, 1.0]
    for j in range(len(edges) - 1):
        a, b = edges[j], edges[j + 1]
        mass = cum[j + 1] - cum[j]
        if mass <= 0:
            continue
        # probe strictly inside the cell; m - cut can round across the jump
        if not np.isfinite(a):
            probe = b - 1.0
        elif not np.isfinite(b):
            probe = a + 1.0
        else:
            probe = 0.5 * (a + b)
        total += mass * value_at(probe) ** 2
    return total


def second_moment(prob: PopulationProblem, loss: ConvexLoss, m: float, left: bool = False) -> float:
    """E psi(m - k)^2 under the kernel law (right or left derivative)."""
    R = prob.R
    if loss.is_step:
        return _step_second_moment(R, loss, m, left)
    if loss.id == "square":
        return 4.0 * (R.var() + (R.mean() - m) ** 2)
    psi = loss.psi_minus if left else loss.psi_plus
    kinks = [m - s for s in loss.cont_kinks] + [m - s for s, _ in loss.jumps]
    return R.expect(lambda x: float(psi(m - x)) ** 2, points=kinks)


def zeta(prob: PopulationProblem, loss: ConvexLoss, m: float,
         mc_budget: int = DEFAULT_ZETA_BUDGET, seed: int = 0) -> ZetaEstimate:
    """Variance constant of the first Hoeffding projection of psi(m - k).

    Degree one integrates against the kernel law.  Higher degrees use nested
    Monte Carlo: an outer sample of first arguments, and for each an inner
    sample estimating the conditional mean; squared inner means are
    corrected by their sampling variance so the estimate is unbiased.
    """
    if prob.l == 1:
        value = second_moment(prob, loss, m)
        est = ZetaEstimate(value, 0.0, "quadrature")
    else:
        est = _nested_zeta(prob, loss, m, mc_budget, seed)
    if not est.value > ZETA_FLOOR:
        raise DegenerateError(f"zeta = {est.value:.3g} is not positive; "
                              "the first projection of psi(m - k) vanishes")
    return est


def _nested_zeta(prob, loss, m, budget, seed) -> ZetaEstimate:
    outer = inner = max(2, math.ceil(math.sqrt(budget)))
    kernel, raw, l = prob.kernel, prob.raw, prob.l
    ss = np.random.SeedSequence(seed)
    rng_outer, rng_inner = (np.random.default_rng(s) for s in ss.spawn(2))
    first = raw.sample(rng_outer, outer)
    sums = np.zeros(outer)
    sq = np.zeros(outer)
    chunk = max(1, 2_000_000 // inner)
    for start in range(0, outer, chunk):
        stop = min(outer, start + chunk)
        size = (stop - start) * inner
        x1 = np.repeat(first[start:stop], inner, axis=0)
        rest = [raw.sample(rng_inner, size) for _ in range(l - 1)]
        vals = np.asarray(loss.psi_plus(m - kernel.batch([x1, *rest])), dtype=float)
        vals = vals.reshape(stop - start, inner)
        sums[start:stop] = vals.mean(axis=1)
        sq[start:stop] = vals.var(axis=1, ddof=1)
    terms = sums ** 2 - sq / inner
    value = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(outer))
    return ZetaEstimate(value, se, "nested-mc", outer * inner, seed)


# ------------------------------------------------------- one-sided slopes

def _limit_of_quotients(q: Sequence[float]) -> float | None:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        return math.inf
    d = np.diff(q)
    scale = max(1.0, abs(q[-1]))
    if abs(d[-1]) <= 1e-12 * scale:
        return float(q[-1])
    if q[-1] > 1e8:
        return math.inf
    tail = d[-3:]
    if np.all(tail > 0) and abs(tail[-1]) >= abs(tail[-2]) * 0.999 and abs(tail[-2]) >= abs(tail[-3]) * 0.999:
        return math.inf
    ratios = d[-3:] / d[-4:-1]
    rho = ratios[-1]
    if not np.isfinite(rho) or abs(rho) >= 0.95:
        return None
    if np.max(np.abs(ratios - rho)) > 0.2 * max(abs(rho), 0.05):
        return None
    limit = q[-1] + d[-1] * rho / (1.0 - rho)
    if abs(limit) < 1e-9 * scale:
        limit = 0.0
    return float(limit)


def slopes_from_profile(V: Callable[[float], float], m: float, h0: float = 1e-2,
                        levels: int = 8) -> tuple[float | None, float | None]:
    """Extrapolated left and right difference quotients of V at m.

    Returns inf when the quotients grow without bound and None when they
    do not settle.
    """
    hs = h0 * 0.5 ** np.arange(levels)
    vm = V(m)
    right = [(V(m + h) - vm) / h for h in hs]
    left = [(vm - V(m - h)) / h for h in hs]
    return _limit_of_quotients(left), _limit_of_quotients(right)


def one_sided_derivatives(prob: PopulationProblem, loss: ConvexLoss, m: float,
                          V: Callable | None = None) -> tuple[float | None, float | None]:
    return slopes_from_profile(V or VFunction(prob, loss), m)


def delta_n(prob: PopulationProblem, loss: ConvexLoss, m: float, a_n: float, n: int, x: float,
            V: Callable | None = None) -> float:
    """sqrt(n) V(m + a_n x)."""
    if not a_n > 0:
        raise ConfigError("a_n must be positive")
    V = V or VFunction(prob, loss)
    return math.sqrt(n) * V(m + a_n * x)


# ------------------------------------------------------------ classification

TAGS = ("Class1", "Class2", "Class3", "Class4", "SmoothNormal", "SubDistribution",
        "Degenerate", "Unclassified")


@dataclass(frozen=True)
class ClassifyGrid:
    t0: float = 1e-2
    ratio: float = 0.5
    levels: int = 20
    escalated_levels: int = 30
    fit_levels: int = 8
    tail: int = 5
    zero_threshold: float = 1e-3
    spread: float = 0.02
    min_r2: float = 0.999
    plateau_tol: float = 1e-12
    v_floor: float = 1e-13

    def points(self, levels: int | None = None) -> np.ndarray:
        return self.t0 * self.ratio ** np.arange(levels or self.levels)


@dataclass(frozen=True)
class AttractionClass:
    tag: str
    alpha: float | None = None
    c: float | None = None
    d: float | None = None
    c1: float | None = None
    c2: float | None = None
    slopes: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"tag": self.tag, "alpha": self.alpha, "c": self.c, "d": self.d,
               "c1": self.c1, "c2": self.c2,
               "slopes": list(self.slopes) if self.slopes is not None else None,
               "diagnostics": self.diagnostics}
        return _jsonable(out)


def _power_fit(ts: np.ndarray, vs: np.ndarray) -> dict:
    # log|V| = alpha log t + b log|log t| + const absorbs slowly varying factors
    x = np.log(ts)
    y = np.log(np.abs(vs))
    plain = np.polyfit(x, y, 1)
    design = np.column_stack([x, np.log(np.abs(x)), np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    alpha = float(coef[0])
    snapped = round(alpha * 2) / 2
    if abs(alpha - snapped) < 1e-6:
        alpha = snapped
    return {"alpha": alpha, "log_log_coef": float(coef[1]), "plain_slope": float(plain[0]),
            "r2": r2, "coef": [float(c) for c in coef]}


def _tau_check(V, m, t, fit, sign: float) -> float:
    # worst relative deviation of V(m+-tau t)/V(m+-t) from the fitted model
    alpha, b = fit["coef"][0], fit["coef"][1]
    worst = 0.0
    for tau in (0.5, 2.0):
        observed = V(m + sign * tau * t) / V(m + sign * t)
        model = tau ** alpha * (abs(math.log(tau * t)) / abs(math.log(t))) ** b
        worst = max(worst, abs(observed / model - 1.0))
    return worst


def _plateau(V, m, grid: ClassifyGrid):
    probe = grid.t0
    right_flat = abs(V(m + probe)) <= grid.plateau_tol
    left_flat = abs(V(m - probe)) <= grid.plateau_tol
    if not (right_flat or left_flat):
        return None
    # leftmost point with V >= 0 and first point with V > 0
    lo, hi = _bracket(V, m, 1.0)
    left_end = first_crossing(V, lo, hi, 0.0)
    width = max(1.0, hi - m)
    for _ in range(BRACKET_DOUBLINGS):
        if V(m + width) > 0:
            break
        width *= 2.0
    right_end = first_crossing(V, left_end, m + width, 0.0, strict=True)
    c1 = max(0.0, m - left_end)
    c2 = max(0.0, right_end - m)
    # V tiny at the probe but nonzero closer in: a flat spot, not a plateau
    shallow = (right_flat and c2 < probe) or (left_flat and c1 < probe)
    return left_end, right_end, c1, c2, shallow


def _tail_to_zero(trace, grid: ClassifyGrid) -> bool:
    tail = np.abs(np.asarray(trace[-grid.tail:]))
    return bool(np.all(tail < grid.zero_threshold) and np.all(np.diff(tail) < 0))


def _tail_constant(trace, grid: ClassifyGrid) -> float | None:
    tail = np.asarray(trace[-grid.tail:])
    med = float(np.median(tail))
    if med < 0 and np.all(np.abs(tail - med) <= grid.spread * abs(med)):
        return med
    return None


def classify_profile(V: Callable[[float], float], m: float, grid: ClassifyGrid | None = None,
                     slopes: tuple[float | None, float | None] | None = None) -> AttractionClass:
    """Classify the shape of V around its root m.

    ``V`` is any non-decreasing callable with V(m-) <= 0 <= V(m).  The
    decision runs a plateau check, then ratio tests of V(m+t)/V(m-t) on a
    geometric grid of t, then one-sided slope tests.
    """
    grid = grid or ClassifyGrid()
    diag: dict = {"grid": {"t0": grid.t0, "ratio": grid.ratio, "levels": grid.levels}}
    if slopes is None:
        slopes = slopes_from_profile(V, m)
    dminus, dplus = slopes
    diag["slopes"] = [dminus, dplus]

    plateau = _plateau(V, m, grid)
    if plateau is not None:
        left_end, right_end, c1, c2, shallow = plateau
        diag["plateau"] = [left_end, right_end]
        if shallow:
            return AttractionClass("Unclassified", diagnostics={
                **diag, "reason": f"V vanishes to {grid.plateau_tol:g} at distance {grid.t0:g} "
                                  "from m without a plateau of that width"})
        if max(c1, c2) > 0:
            return AttractionClass("Class4", c1=c1, c2=c2, slopes=(dminus, dplus), diagnostics=diag)
        return AttractionClass("Unclassified", diagnostics={**diag, "reason": "plateau of zero width"})

    for levels in (grid.levels, grid.escalated_levels):
        ts = grid.points(levels)
        right = np.array([V(m + t) for t in ts])
        left = np.array([V(m - t) for t in ts])
        diag["levels"] = levels
        diag["t"] = ts.tolist()
        diag["V_right"] = right.tolist()
        diag["V_left"] = left.tolist()
        if np.any(right < 0) or np.any(left > 0):
            diag["reason"] = "V is not monotone around m on the grid"
            break
        # levels where V is lost in rounding carry no shape information
        resolved = (np.abs(right) >= grid.v_floor) & (np.abs(left) >= grid.v_floor)
        keep = int(np.argmin(resolved)) if not resolved.all() else levels
        diag["resolved_levels"] = keep
        if keep < grid.fit_levels:
            diag["reason"] = f"only {keep} grid levels above the resolution floor {grid.v_floor:g}"
            break
        ts, right, left = ts[:keep], right[:keep], left[:keep]
        ratio = right / left
        mirror = left / right
        diag["ratio"] = ratio.tolist()
        tail = slice(-grid.fit_levels, None)
        if _tail_to_zero(ratio, grid):
            fit = _power_fit(ts[tail], right[tail])
            diag["fit"] = fit
            if _fit_ok(V, m, ts[-2], fit, grid, +1.0, diag):
                return AttractionClass("Class1", alpha=fit["alpha"], c=1.0,
                                       slopes=(dminus, dplus), diagnostics=diag)
            break
        if _tail_to_zero(mirror, grid):
            fit = _power_fit(ts[tail], left[tail])
            diag["fit"] = fit
            if _fit_ok(V, m, ts[-2], fit, grid, -1.0, diag):
                return AttractionClass("Class2", alpha=fit["alpha"], c=1.0,
                                       slopes=(dminus, dplus), diagnostics=diag)
            break
        A = _tail_constant(ratio, grid)
        if A is not None:
            fit = _power_fit(ts[tail], right[tail])
            diag["fit"] = fit
            diag["A"] = A
            if not _fit_ok(V, m, ts[-2], fit, grid, +1.0, diag):
                break
            if _smooth(dminus, dplus):
                return AttractionClass("SmoothNormal", alpha=1.0, c=1.0, d=1.0,
                                       slopes=(dminus, dplus), diagnostics=diag)
            return AttractionClass("Class3", alpha=fit["alpha"], c=-1.0 / A, d=1.0,
                                   slopes=(dminus, dplus), diagnostics=diag)
        diag["reason"] = "ratio trace has no detectable limit"
        if keep < levels:
            break

    if _finite(dminus) and _finite(dplus) and min(dminus, dplus) == 0 and max(dminus, dplus) > 0:
        return AttractionClass("SubDistribution", alpha=1.0, slopes=(dminus, dplus), diagnostics=diag)
    return AttractionClass("Unclassified", slopes=(dminus, dplus), diagnostics=diag)


def _finite(x) -> bool:
    return x is not None and math.isfinite(x)


def _smooth(dminus, dplus) -> bool:
    return (_finite(dminus) and _finite(dplus) and dminus > 0
            and abs(dminus - dplus) <= 1e-6 * max(dminus, dplus))


def _fit_ok(V, m, t_last, fit, grid, sign, diag) -> bool:
    if fit["r2"] < grid.min_r2 or not fit["alpha"] > 0:
        diag["reason"] = f"power fit rejected (r2={fit['r2']:.6f}, alpha={fit['alpha']:.4g})"
        return False
    dev = _tau_check(V, m, t_last, fit, sign)
    fit["tau_deviation"] = dev
    if dev > grid.spread:
        diag["reason"] = f"tau-ratio test deviates by {dev:.3g} from the fitted power"
        return False
    return True


def classify(prob: PopulationProblem, loss: ConvexLoss, m: float,
             grid: ClassifyGrid | None = None, V: Callable | None = None) -> AttractionClass:
    V = V or VFunction(prob, loss)
    return classify_profile(V, m, grid, one_sided_derivatives(prob, loss, m, V))


# ---------------------------------------------------------------- limit laws

BRANCH_KINDS = ("-inf", "+inf", "zero", "power")


@dataclass(frozen=True)
class LimitLaw:
    """H(x) = Phi(delta(x) / sigma), with delta a branchwise power.

    For x < 0 the left branch is -inf, zero or -c|x|^alpha; for x > 0 the
    right branch is +inf, zero or d x^alpha.  A plateau law (``c1``/``c2``
    set) has delta = -inf left of -c1, zero on [-c1, c2) and +inf from c2
    on.  Values at branch switches follow right-continuity.
    """

    sigma: float
    alpha: float = 1.0
    left: str = "power"
    right: str = "power"
    c: float = 1.0
    d: float = 1.0
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("limit law needs sigma > 0")
        if self.left not in ("-inf", "zero", "power") or self.right not in ("+inf", "zero", "power"):
            raise ConfigError(f"bad branch kinds {self.left!r}, {self.right!r}")

    @property
    def plateau(self) -> bool:
        return self.c1 is not None

    def delta(self, x, left_limit: bool = False):
        """delta(x), or its left limit delta(x-)."""
        x = np.asarray(x, dtype=float)
        if self.plateau:
            if left_limit:
                out = np.where(x <= -self.c1, -np.inf, np.where(x <= self.c2, 0.0, np.inf))
            else:
                out = np.where(x < -self.c1, -np.inf, np.where(x < self.c2, 0.0, np.inf))
            return out if out.ndim else float(out)
        ax = np.abs(x)
        with np.errstate(over="ignore"):
            power = ax ** self.alpha
        lval = {"-inf": np.full_like(x, -np.inf), "zero": np.zeros_like(x),
                "power": -self.c * power}[self.left]
        rval = {"+inf": np.full_like(x, np.inf), "zero": np.zeros_like(x),
                "power": self.d * power}[self.right]
        zero_val = ({"-inf": -np.inf, "zero": 0.0, "power": 0.0}[self.left] if left_limit
                    else {"+inf": np.inf, "zero": 0.0, "power": 0.0}[self.right])
        out = np.where(x < 0, lval, np.where(x > 0, rval, zero_val))
        return out if out.ndim else float(out)

    def cdf(self, x):
        return _phi(self.delta(x), self.sigma)

    def cdf_left(self, x):
        return _phi(self.delta(x, left_limit=True), self.sigma)

    def mass_at_infinity(self) -> tuple[float, float]:
        if self.plateau:
            return 0.0, 0.0
        p_minus = 0.5 if self.left == "zero" else 0.0
        p_plus = 0.5 if self.right == "zero" else 0.0
        return p_minus, p_plus

    def jump_points(self) -> list[float]:
        if self.plateau:
            return [-self.c1, self.c2]
        return [0.0]

    def scaling_constant(self, k: int) -> float:
        """alpha_k with delta(x) = sqrt(k) delta(alpha_k x)."""
        return 1.0 if self.plateau else k ** (-1.0 / (2.0 * self.alpha))

    def functional_equation_residual(self, k: int, alpha_k: float | None = None,
                                     grid: Sequence[float] | None = None) -> float:
        """Max over the grid of |delta(x) - sqrt(k) delta(alpha_k x)|;
        matching infinities count as zero, mismatched ones as inf."""
        a = self.scaling_constant(k) if alpha_k is None else alpha_k
        xs = np.linspace(-3.0, 3.0, 100) if grid is None else np.asarray(grid, dtype=float)
        lhs = np.asarray(self.delta(xs), dtype=float)
        rhs = math.sqrt(k) * np.asarray(self.delta(a * xs), dtype=float)
        both_inf = np.isinf(lhs) & np.isinf(rhs) & (np.sign(lhs) == np.sign(rhs))
        diff = np.where(both_inf, 0.0, np.abs(np.where(both_inf, 0.0, lhs) - np.where(both_inf, 0.0, rhs)))
        diff = np.where(np.isnan(diff), np.inf, diff)
        return float(np.max(diff))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws from H by inverse transform (plateau and atom aware)."""
        u = rng.random(size)
        return self.quantile(u)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        z = self.sigma * special.ndtri(u)  # delta value
        out = np.empty_like(z)
        if self.plateau:
            out = np.where(u <= 0.5, -self.c1, self.c2)
            return out
        neg = z < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = {"-inf": np.zeros_like(z), "zero": np.full_like(z, -np.inf),
                  "power": -(np.abs(z) / self.c) ** (1.0 / self.alpha)}[self.left]
            rx = {"+inf": np.zeros_like(z), "zero": np.full_like(z, np.inf),
                  "power": (np.abs(z) / self.d) ** (1.0 / self.alpha)}[self.right]
        out = np.where(neg, lx, np.where(z > 0, rx, 0.0))
        return out

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "alpha": self.alpha, "left": self.left, "right": self.right,
                "c": self.c, "d": self.d, "c1": self.c1, "c2": self.c2}

    @classmethod
    def from_json(cls, obj: dict) -> "LimitLaw":
        keys = ("sigma", "alpha", "left", "right", "c", "d", "c1", "c2")
        return cls(**{k: obj[k] for k in keys if k in obj and obj[k] is not None})

    @classmethod
    def normal(cls, variance: float) -> "LimitLaw":
        """Centred normal law with the given variance."""
        return cls(sigma=math.sqrt(variance))


def _phi(z, sigma):
    z = np.asarray(z, dtype=float)
    out = special.ndtr(z / sigma)
    return out if out.ndim else float(out)


def law_from_class(attraction: AttractionClass, sigma: float) -> LimitLaw:
    """Limit law matching the normalising sequence of :func:`normalizing_sequence`."""
    tag = attraction.tag
    if tag == "Class1":
        return LimitLaw(sigma, attraction.alpha, left="-inf", right="power", d=attraction.c)
    if tag == "Class2":
        return LimitLaw(sigma, attraction.alpha, left="power", right="+inf", c=attraction.c)
    if tag == "Class3":
        return LimitLaw(sigma, attraction.alpha, c=attraction.c, d=attraction.d)
    if tag == "Class4":
        total = attraction.c1 + attraction.c2
        return LimitLaw(sigma, 1.0, c1=attraction.c1 / total, c2=attraction.c2 / total)
    if tag in ("SmoothNormal", "SubDistribution"):
        dminus, dplus = attraction.slopes
        return LimitLaw(sigma, 1.0,
                        left="power" if dminus > 0 else "zero",
                        right="power" if dplus > 0 else "zero",
                        c=dminus if dminus > 0 else 1.0, d=dplus if dplus > 0 else 1.0)
    raise AnalysisError(f"no limit law for tag {tag}")


# ----------------------------------------------------- normalising sequence

def inverse_offset(V: Callable[[float], float], m: float, level: float) -> float:
    """V^{-1}(level) - m with V^{-1} the leftmost generalised inverse."""
    sign = 1.0 if level > 0 else -1.0
    if sign > 0:
        width = 1.0
        for _ in range(BRACKET_DOUBLINGS):
            if V(m + width) >= level:
                break
            width *= 2.0
        else:
            raise AnalysisError(f"V stays below {level:.3g}; n is too small for the asymptotic window")
        lo, hi = 0.0, width
    else:
        width = 1.0
        for _ in range(BRACKET_DOUBLINGS):
            if V(m - width) < level:
                break
            width *= 2.0
        else:
            raise AnalysisError(f"V stays above {level:.3g}; n is too small for the asymptotic window")
        lo, hi = -width, 0.0
    while hi - lo > 1e-14 * max(abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if V(m + mid) >= level:
            hi = mid
        else:
            lo = mid
    return hi


A_N_RULES = {
    "Class1": "V^-1(1/sqrt(n)) - m",
    "Class3": "V^-1(1/sqrt(n)) - m",
    "Class2": "m - V^-1(-1/sqrt(n))",
    "Class4": "(V^-1(1/sqrt(n)) - V^-1(-1/sqrt(n))) / (c1 + c2)",
    "SmoothNormal": "n^-1/2",
    "SubDistribution": "n^-1/2",
}


def normalizing_a_n(V: Callable[[float], float], m: float, attraction: AttractionClass, n: int) -> float:
    tag = attraction.tag
    level = 1.0 / math.sqrt(n)
    if tag in ("SmoothNormal", "SubDistribution"):
        return level
    if tag in ("Class1", "Class3"):
        return inverse_offset(V, m, level)
    if tag == "Class2":
        return -inverse_offset(V, m, -level)
    if tag == "Class4":
        width = inverse_offset(V, m, level) - inverse_offset(V, m, -level)
        return width / (attraction.c1 + attraction.c2)
    raise AnalysisError(f"no normalising sequence for tag {tag}")


def normalizing_sequence(report: "AsymptoticReport", n: int) -> float:
    if report.V is None:
        raise AnalysisError("report carries no V function (was it loaded from JSON?)")
    return normalizing_a_n(report.V, report.m, report.attraction, n)


# ------------------------------------------------------------------- report

@dataclass
class AsymptoticReport:
    m: float
    m_unique: bool
    zeta: float
    zeta_se: float
    zeta_method: str
    sigma2: float
    dminus_V: float | None
    dplus_V: float | None
    attraction: AttractionClass
    law: LimitLaw | None
    a_n_rule: str | None
    a_n_samples: dict
    limit_variance: float | None
    settings: dict
    profile: list[tuple[float, float]]
    V: Callable | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return _jsonable({
            "m": self.m, "m_unique": self.m_unique,
            "zeta": self.zeta, "zeta_se": self.zeta_se, "zeta_method": self.zeta_method,
            "sigma2": self.sigma2, "dminus_V": self.dminus_V, "dplus_V": self.dplus_V,
            "attraction": self.attraction.to_json(),
            "law": self.law.to_json() if self.law else None,
            "a_n_rule": self.a_n_rule, "a_n": self.a_n_samples,
            "limit_variance": self.limit_variance,
            "settings": self.settings,
        })

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def profile_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "V(m+t)"])
        for t, v in self.profile:
            w.writerow([repr(t), repr(v)])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def analyze(prob: PopulationProblem, loss: ConvexLoss, *, m: float | None = None,
            grid: ClassifyGrid | None = None, zeta_budget: int = DEFAULT_ZETA_BUDGET,
            seed: int = 0, a_n_at: Sequence[int] = (100, 1000, 10_000)) -> AsymptoticReport:
    """Full population analysis of a problem."""
    grid = grid or ClassifyGrid()
    V = VFunction(prob, loss)
    if m is None:
        m, unique = find_m(prob, loss, V)
    else:
        m = float(m)
        if not (V.left(m) <= V_TOL and V(m) >= -V_TOL):
            raise AnalysisError(f"supplied m = {m} is not a root: V(m-) = {V.left(m)}, V(m) = {V(m)}")
        unique = is_unique_root(V, m)
    settings = {"grid": grid.__dict__, "zeta_budget": zeta_budget, "seed": seed,
                "v_tol": V_TOL, "unique_tol": UNIQUE_TOL, "zeta_floor": ZETA_FLOOR,
                "derivative_steps": {"h0": 1e-2, "levels": 8}}
    dminus, dplus = one_sided_derivatives(prob, loss, m, V)
    profile_ts = np.concatenate([-grid.points()[::-1], [0.0], grid.points()])
    profile = [(float(t), V(m + t)) for t in profile_ts]
    try:
        z = zeta(prob, loss, m, zeta_budget, seed)
    except DegenerateError as exc:
        attraction = AttractionClass("Degenerate", slopes=(dminus, dplus),
                                     diagnostics={"reason": str(exc)})
        return AsymptoticReport(m, unique, 0.0, 0.0, "", 0.0, dminus, dplus, attraction, None,
                                None, {}, None, settings, profile, V)
    sigma2 = prob.l ** 2 * z.value
    attraction = classify_profile(V, m, grid, (dminus, dplus))
    law = rule = None
    samples: dict = {}
    limit_variance = None
    if attraction.tag not in ("Unclassified", "Degenerate"):
        law = law_from_class(attraction, math.sqrt(sigma2))
        rule = A_N_RULES[attraction.tag]
        for n in a_n_at:
            try:
                samples[str(n)] = normalizing_a_n(V, m, attraction, n)
            except AnalysisError as exc:
                samples[str(n)] = f"error: {exc}"
        if attraction.tag == "SmoothNormal":
            limit_variance = sigma2 / dplus ** 2
    return AsymptoticReport(m, unique, z.value, z.se, z.method, sigma2, dminus, dplus,
                            attraction, law, rule, samples, limit_variance, settings, profile, V)
