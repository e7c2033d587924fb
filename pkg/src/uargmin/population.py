"""Distributions of kernel values and of raw observations.

A :class:`Distribution` bundles a vectorised CDF, its generalised inverse,
an optional density, a seeded sampler and an expectation routine.  The
catalogue covers the families that appear in the worked examples (normal,
Cauchy, exponential, uniform, half-normal) plus two constructions used to
build non-standard test cases: the log-squared median CDF
(:func:`smirnov_cdf`) and piecewise CDFs with plateaus (:func:`piecewise_cdf`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .errors import AnalysisError, ConfigError

QUANTILE_TOL = 1e-12
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-11
QUAD_MAX_ABSERR = 1e-8

ArrayFn = Callable[[Any], Any]


@dataclass(frozen=True)
class Distribution:
    """Law of a real random variable.

    ``cdf``, ``cdf_left``, ``quantile`` and ``pdf`` accept scalars or arrays.
    ``sample(rng, size)`` draws from the law with a caller-owned
    :class:`numpy.random.Generator`.  ``atoms`` lists point masses as
    ``(location, mass)`` pairs; the density covers the remaining mass.
    """

    family: str
    cdf: ArrayFn
    quantile: ArrayFn
    sample: Callable[[np.random.Generator, int], np.ndarray]
    pdf: ArrayFn | None = None
    cdf_left: ArrayFn | None = None
    support: tuple[float, float] = (-math.inf, math.inf)
    atoms: tuple[tuple[float, float], ...] = ()
    breakpoints: tuple[float, ...] = ()
    spec: dict = field(default_factory=dict)
    moments: tuple[float, float] | None = None

    def left_cdf(self, x):
        """F(x-), the probability of the open half-line (-inf, x)."""
        if self.cdf_left is not None:
            return self.cdf_left(x)
        return self.cdf(x)

    def expect(self, g: Callable[[float], float], points: Sequence[float] = ()) -> float:
        """Integral of ``g`` against the law.

        ``points`` are locations where ``g`` is non-smooth; they are passed to
        the quadrature as break points.  Raises :class:`AnalysisError` when the
        integral does not converge, which for the V-function of a loss is the
        numerical signature of a non-integrable generating function.
        """
        total = 0.0
        for loc, mass in self.atoms:
            total += mass * float(g(loc))
        if self.pdf is None:
            return total
        lo, hi = self.support
        cuts = {float(p) for p in self.breakpoints}
        cuts.update(float(p) for p in points if np.isfinite(p))
        if not (np.isfinite(lo) and np.isfinite(hi)):
            cuts.update(float(q) for q in self.quantile(np.array([0.001, 0.25, 0.5, 0.75, 0.999])))
        inner = sorted(c for c in cuts if lo < c < hi)
        edges = [lo, *inner, hi]
        pdf = self.pdf

        def integrand(x):
            d = pdf(x)
            return 0.0 if d == 0.0 else float(g(x)) * d

        for a, b in zip(edges[:-1], edges[1:]):
            # slivers a few ulps wide come from cut points that differ only by rounding
            if np.isfinite(a) and np.isfinite(b) and b - a <= 1e-14 * max(1.0, abs(a), abs(b)):
                continue
            total += _quad(integrand, a, b)
        return total

    def mean(self) -> float:
        if self.moments is not None:
            mu = self.moments[0]
        else:
            mu = self.expect(lambda x: x)
        if not np.isfinite(mu):
            raise AnalysisError(f"{self.family} has no finite mean")
        return float(mu)

    def var(self) -> float:
        if self.moments is not None:
            v = self.moments[1]
        else:
            mu = self.mean()
            v = self.expect(lambda x: (x - mu) ** 2)
        if not np.isfinite(v):
            raise AnalysisError(f"{self.family} has no finite variance")
        return float(v)

    def to_json(self) -> dict:
        return dict(self.spec)


def _quad(f, a, b) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                             limit=400, full_output=1)
    value, abserr = out[0], out[1]
    # a fourth element is quadpack's warning text; it is absent on success
    message = out[3].splitlines()[0].strip() if len(out) > 3 else ""
    suspect = "divergent" in message or "bad integrand" in message
    if not np.isfinite(value) or abserr > QUAD_MAX_ABSERR * max(1.0, abs(value)) or suspect:
        raise AnalysisError(f"quadrature on [{a}, {b}] did not converge (value={value}, "
                            f"abserr={abserr:.2e}): {message or 'error estimate too large'}")
    return float(value)


def generalized_inverse(cdf: ArrayFn, u, lo: float, hi: float, tol: float = QUANTILE_TOL):
    """Leftmost x with cdf(x) >= u, by vectorised bisection.

    Requires cdf(lo) < u <= cdf(hi) for every entry of ``u``.
    """
    u = np.asarray(u, dtype=float)
    a = np.full(u.shape, float(lo))
    b = np.full(u.shape, float(hi))
    steps = max(1, math.ceil(math.log2(max(hi - lo, tol) / tol)) + 1)
    for _ in range(steps):
        mid = 0.5 * (a + b)
        right = cdf(mid) >= u
        b = np.where(right, mid, b)
        a = np.where(right, a, mid)
    return b if b.ndim else float(b)


# ----------------------------------------------------------------- catalogue

def _scipy_family(name: str, frozen, params, draw) -> Distribution:
    lo, hi = frozen.support()
    mean, var = frozen.mean(), frozen.var()
    return Distribution(
        family=name,
        cdf=frozen.cdf,
        quantile=frozen.ppf,
        pdf=frozen.pdf,
        sample=draw,
        support=(float(lo), float(hi)),
        spec={"family": name, "params": list(params)},
        moments=(float(mean), float(var)) if np.isfinite(var) else None,
    )


def _positive(name, value, what="scale"):
    if not (np.isfinite(value) and value > 0):
        raise ConfigError(f"{name}: {what} must be positive, got {value}")


def builtin(name: str, params: Sequence[float] = ()) -> Distribution:
    """Catalogue distribution by id.

    ``normal [mu, sigma]``, ``cauchy [loc, scale]``, ``exponential [rate]``,
    ``uniform [a, b]`` and ``halfnormal [scale]``.  Missing parameters take
    the standard values.
    """
    p = [float(v) for v in params]
    if name == "normal":
        mu, sigma = (p + [0.0, 1.0][len(p):])[:2]
        _positive(name, sigma)
        return _scipy_family(name, stats.norm(mu, sigma), [mu, sigma],
                             lambda rng, size: rng.normal(mu, sigma, size))
    if name == "cauchy":
        loc, scale = (p + [0.0, 1.0][len(p):])[:2]
        _positive(name, scale)
        return _scipy_family(name, stats.cauchy(loc, scale), [loc, scale],
                             lambda rng, size: loc + scale * rng.standard_cauchy(size))
    if name == "exponential":
        rate = p[0] if p else 1.0
        _positive(name, rate, "rate")
        return _scipy_family(name, stats.expon(scale=1.0 / rate), [rate],
                             lambda rng, size: rng.exponential(1.0 / rate, size))
    if name == "uniform":
        a, b = (p + [0.0, 1.0][len(p):])[:2]
        if not b > a:
            raise ConfigError(f"uniform: need a < b, got [{a}, {b}]")
        return _scipy_family(name, stats.uniform(a, b - a), [a, b],
                             lambda rng, size: rng.uniform(a, b, size))
    if name == "halfnormal":
        scale = p[0] if p else 1.0
        _positive(name, scale)
        return _scipy_family(name, stats.halfnorm(scale=scale), [scale],
                             lambda rng, size: np.abs(rng.normal(0.0, scale, size)))
    raise ConfigError(f"unknown distribution id {name!r}; "
                      f"choose from {sorted(BUILTIN_IDS | {'smirnov', 'piecewise', 'empirical'})}")


BUILTIN_IDS = frozenset({"normal", "cauchy", "exponential", "uniform", "halfnormal"})

SMIRNOV_EPS_MAX = math.exp(-2.0)


def _xlog2(y):
    # y (log y)^2 for y >= 0, with the continuous value 0 at y = 0
    y = np.asarray(y, dtype=float)
    safe = np.where(y > 0, y, 1.0)
    return np.where(y > 0, safe * np.log(safe) ** 2, 0.0)


def smirnov_cdf(epsilon: float, clamp: str = "linear") -> Distribution:
    """Median-zero CDF with F(x) = 1/2 + sign(x)|x|(log|x|)^2 near zero.

    The formula is used on [-epsilon, epsilon].  Outside the window the
    ``linear`` clamp continues with the one-sided slope at +-epsilon until
    the CDF reaches 0 or 1.  For epsilon above ~0.0728 the formula itself
    reaches 1 inside the window; the CDF is then flat from that point on.
    """
    if clamp != "linear":
        raise ConfigError(f"smirnov: unknown clamp rule {clamp!r} (only 'linear')")
    if not (0.0 < epsilon < SMIRNOV_EPS_MAX):
        raise ConfigError(f"smirnov: epsilon must lie in (0, e^-2) = (0, {SMIRNOV_EPS_MAX:.6f}), "
                          f"got {epsilon}")
    g_eps = float(_xlog2(epsilon))
    if g_eps >= 0.5:
        edge = optimize.brentq(lambda y: float(_xlog2(y)) - 0.5, 1e-6, epsilon, xtol=1e-15)
        core, slope, end = edge, 0.0, edge
    else:
        le = math.log(epsilon)
        slope = le * (le + 2.0)
        core, end = epsilon, epsilon + (0.5 - g_eps) / slope

    def half(y):
        inner = _xlog2(np.minimum(y, core))
        outer = g_eps + slope * (y - epsilon)
        return np.where(y <= core, inner, np.where(y < end, outer, 0.5))

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = 0.5 + np.sign(x) * half(np.abs(x))
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    def pdf(x):
        y = abs(float(x))
        if y == 0.0:
            return math.inf
        if y <= core:
            ly = math.log(y)
            return ly * (ly + 2.0)
        if y < end:
            return slope
        return 0.0

    def quantile(u):
        return generalized_inverse(cdf, u, -end - 1.0, end)

    def sample(rng, size):
        return quantile(rng.random(size))

    cuts = tuple(sorted({-end, -core, -epsilon, 0.0, epsilon, core, end}))
    return Distribution(
        family="smirnov",
        cdf=cdf,
        quantile=quantile,
        pdf=pdf,
        sample=sample,
        support=(-end, end),
        breakpoints=cuts,
        spec={"family": "smirnov", "params": [epsilon], "clamp": clamp},
        moments=None,
    )


def _parse_rule(rule: str) -> tuple[str, float]:
    if rule in ("linear", "step"):
        return rule, 1.0
    kind, _, value = rule.partition(":")
    if kind in ("power", "rpower"):
        try:
            beta = float(value)
        except ValueError:
            raise ConfigError(f"piecewise: bad exponent in {rule!r}") from None
        if not beta > 0:
            raise ConfigError(f"piecewise: exponent must be positive in {rule!r}")
        return kind, beta
    raise ConfigError(f"piecewise: unknown segment rule {rule!r} "
                      "(linear, step, power:<b>, rpower:<b>)")


def piecewise_cdf(knots: Sequence[Sequence[float]], interp: str | Sequence[str] = "linear") -> Distribution:
    """CDF through the given ``(x, F(x))`` knots.

    Segment rules, one per gap between knots (a single string applies to
    all): ``linear``; ``power:b`` rising like s**b from the left knot;
    ``rpower:b`` approaching the right knot like 1-(1-s)**b; ``step`` which
    stays at the left value and jumps at the right knot.  F is 0 left of the
    first knot (a positive first value is an atom there) and the last value
    must be 1.
    """
    pts = [(float(x), float(f)) for x, f in knots]
    if len(pts) < 2:
        raise ConfigError("piecewise: need at least two knots")
    xs = np.array([p[0] for p in pts])
    fs = np.array([p[1] for p in pts])
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("piecewise: knot abscissae must be strictly increasing")
    if np.any(np.diff(fs) < 0) or fs[0] < 0 or fs[-1] > 1:
        raise ConfigError("piecewise: CDF values must be non-decreasing within [0, 1]")
    if fs[-1] != 1.0:
        raise ConfigError("piecewise: last knot must carry F = 1")
    rules = [interp] * (len(pts) - 1) if isinstance(interp, str) else list(interp)
    if len(rules) != len(pts) - 1:
        raise ConfigError(f"piecewise: need {len(pts) - 1} segment rules, got {len(rules)}")
    parsed = [_parse_rule(r) for r in rules]
    kinds = [k for k, _ in parsed]
    betas = np.array([b for _, b in parsed])
    widths = np.diff(xs)
    rises = np.diff(fs)

    atoms = []
    if fs[0] > 0:
        atoms.append((float(xs[0]), float(fs[0])))
    for j, kind in enumerate(kinds):
        if kind == "step" and rises[j] > 0:
            atoms.append((float(xs[j + 1]), float(rises[j])))
    atom_map = dict(atoms)

    def shape(j, s, rest):
        # s and rest = 1 - s are both measured from the nearer knot for accuracy
        kind, beta = kinds[j], betas[j]
        if kind == "linear":
            return s
        if kind == "power":
            return s ** beta
        if kind == "rpower":
            return 1.0 - rest ** beta
        return np.zeros_like(s)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        seg = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(pts) - 2)
        s = np.clip((x - xs[seg]) / widths[seg], 0.0, 1.0)
        rest = np.clip((xs[seg + 1] - x) / widths[seg], 0.0, 1.0)
        out = np.empty_like(s)
        for j in np.unique(seg):
            mask = seg == j
            out[mask] = fs[j] + rises[j] * shape(j, s[mask], rest[mask])
        out = np.where(x < xs[0], 0.0, np.where(x >= xs[-1], 1.0, out))
        return out if out.ndim else float(out)

    def cdf_left(x):
        x = np.asarray(x, dtype=float)
        jump = np.zeros_like(x)
        for loc, mass in atom_map.items():
            jump = jump + np.where(x == loc, mass, 0.0)
        out = cdf(x) - jump
        return out if np.ndim(out) else float(out)

    def pdf(x):
        x = float(x)
        if x < xs[0] or x >= xs[-1]:
            return 0.0
        j = min(int(np.searchsorted(xs, x, side="right")) - 1, len(pts) - 2)
        kind, beta = kinds[j], betas[j]
        s = (x - xs[j]) / widths[j]
        scale = rises[j] / widths[j]
        if kind == "linear":
            return float(scale)
        if kind == "power":
            return float(scale * beta * s ** (beta - 1.0)) if s > 0 or beta >= 1 else math.inf
        if kind == "rpower":
            rest = (xs[j + 1] - x) / widths[j]
            return float(scale * beta * rest ** (beta - 1.0)) if rest > 0 or beta >= 1 else math.inf
        return 0.0

    def quantile(u):
        return generalized_inverse(cdf, u, float(xs[0]) - 1.0, float(xs[-1]))

    def sample(rng, size):
        return quantile(rng.random(size))

    return Distribution(
        family="piecewise",
        cdf=cdf,
        cdf_left=cdf_left,
        quantile=quantile,
        pdf=pdf,
        sample=sample,
        support=(float(xs[0]), float(xs[-1])),
        atoms=tuple(atoms),
        breakpoints=tuple(float(x) for x in xs),
        spec={"family": "piecewise", "knots": [list(p) for p in pts],
              "interp": interp if isinstance(interp, str) else list(interp)},
    )


def from_json(obj: dict) -> Distribution:
    """Build a distribution from ``{"family": ..., "params": [...]}``.

    Piecewise laws use ``{"family": "piecewise", "knots": [[x, F], ...],
    "interp": ...}``, discrete ones ``{"family": "empirical", "values": [...]}``;
    the log-squared law takes ``"clamp"`` as an option.
    """
    if not isinstance(obj, dict) or "family" not in obj:
        raise ConfigError(f"distribution description needs a 'family' key: {obj!r}")
    family = obj["family"]
    if family == "piecewise":
        if "knots" not in obj:
            raise ConfigError("piecewise distribution needs 'knots'")
        return piecewise_cdf(obj["knots"], obj.get("interp", "linear"))
    if family == "empirical":
        if "values" not in obj:
            raise ConfigError("empirical distribution needs 'values'")
        return empirical(obj["values"])
    params = obj.get("params", [])
    if family == "smirnov":
        if len(params) != 1:
            raise ConfigError("smirnov distribution takes params [epsilon]")
        return smirnov_cdf(float(params[0]), obj.get("clamp", "linear"))
    return builtin(family, params)


# ------------------------------------------------------------ raw-data models

@dataclass(frozen=True)
class MultivariateModel:
    """Sampler for raw observations as rows of an ``(n, dim)`` array."""

    dim: int
    draw: Callable[[np.random.Generator, int], np.ndarray]
    spec: dict
    marginal: Distribution | None = None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.asarray(self.draw(rng, n), dtype=float).reshape(n, self.dim)
        return out


def univariate_model(dist: Distribution) -> MultivariateModel:
    return MultivariateModel(dim=1, draw=dist.sample, spec=dist.to_json(), marginal=dist)


def model_from_json(obj: dict) -> MultivariateModel:
    """Raw-data model.

    Any distribution description gives one-dimensional observations.
    ``{"family": "iid", "dim": d, "marginal": {...}}`` stacks independent
    copies; ``{"family": "regression", "intercept": a, "slope": b,
    "design": {...}, "noise": {...}}`` draws pairs (Y, a + bY + e).
    """
    if not isinstance(obj, dict) or "family" not in obj:
        raise ConfigError(f"model description needs a 'family' key: {obj!r}")
    family = obj["family"]
    if family == "iid":
        dim = int(obj.get("dim", 1))
        if dim < 1:
            raise ConfigError("iid model: dim must be >= 1")
        marginal = from_json(obj["marginal"])
        return MultivariateModel(
            dim=dim,
            draw=lambda rng, n: marginal.sample(rng, n * dim).reshape(n, dim),
            spec=dict(obj),
            marginal=marginal if dim == 1 else None,
        )
    if family == "regression":
        design = from_json(obj["design"])
        noise = from_json(obj["noise"])
        a = float(obj.get("intercept", 0.0))
        b = float(obj.get("slope", 1.0))

        def draw(rng, n):
            y = design.sample(rng, n)
            z = a + b * y + noise.sample(rng, n)
            return np.column_stack([y, z])

        return MultivariateModel(dim=2, draw=draw, spec=dict(obj))
    return univariate_model(from_json(obj))


def empirical(values, spec: dict | None = None) -> Distribution:
    """Discrete law putting equal mass on each of ``values``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ConfigError("empirical law needs at least one value")
    n = v.size
    locs, counts = np.unique(v, return_counts=True)

    def cdf(x):
        out = np.searchsorted(v, np.asarray(x, dtype=float), side="right") / n
        return out if np.ndim(out) else float(out)

    def cdf_left(x):
        out = np.searchsorted(v, np.asarray(x, dtype=float), side="left") / n
        return out if np.ndim(out) else float(out)

    def quantile(u):
        idx = np.clip(np.ceil(np.asarray(u, dtype=float) * n).astype(int) - 1, 0, n - 1)
        out = v[idx]
        return out if np.ndim(out) else float(out)

    return Distribution(
        family="empirical",
        cdf=cdf,
        cdf_left=cdf_left,
        quantile=quantile,
        sample=lambda rng, size: v[rng.integers(0, n, size)],
        support=(float(v[0]), float(v[-1])),
        atoms=tuple(zip(locs.tolist(), (counts / n).tolist())),
        spec=spec or {"family": "empirical", "values": v.tolist()},
        moments=(float(v.mean()), float(v.var())),
    )


def kernel_law(model: MultivariateModel, kernel, *, mc_size: int = 20_000, seed: int = 0) -> Distribution:
    """Law of the kernel value k(X1, ..., Xl) under i.i.d. draws from ``model``.

    Closed forms cover the identity kernel, averages of normal or Cauchy
    observations and absolute differences of normal observations.  Anything
    else falls back to the empirical law of a seeded Monte Carlo sample.
    """
    marg = model.marginal
    fam = marg.family if marg is not None else None
    params = marg.spec.get("params", []) if marg is not None else []
    l = kernel.degree
    if kernel.id == "identity" and marg is not None:
        return marg
    if kernel.id in ("mean", "walsh") and fam == "normal":
        mu, sigma = params
        return builtin("normal", [mu, sigma / math.sqrt(l)])
    if kernel.id in ("mean", "walsh") and fam == "cauchy":
        return marg
    if kernel.id == "abs_diff" and fam == "normal":
        return builtin("halfnormal", [params[1] * math.sqrt(2.0)])
    rng = np.random.default_rng(seed)
    cols = [model.sample(rng, mc_size) for _ in range(l)]
    values = kernel.batch(cols)
    return empirical(values, {"family": "empirical", "kernel": kernel.id,
                              "mc_size": mc_size, "seed": seed})
