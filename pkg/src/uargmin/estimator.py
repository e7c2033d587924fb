"""Kernel samples, empirical derivative processes and the minimiser interval.

For a step derivative every quantity is computed exactly: the empirical
derivative is a rational number built from counts, and the ends of the
minimiser interval are located to the exact floating-point transition.
Continuous derivatives are handled by bisection on the monotone empirical
derivative.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, EnumerationCapError, NonCoerciveLossError
from .problem import ConvexLoss, Kernel

DEFAULT_CAP = 2_000_000
ROOT_TOL = 1e-12
POLICIES = ("smallest", "largest", "midpoint")


@dataclass(frozen=True)
class KernelSample:
    """All C(n, l) kernel values of a sample, sorted ascending."""

    values: np.ndarray
    n: int
    l: int

    @property
    def N(self) -> int:
        return int(self.values.size)


def kernel_sample(data, kernel: Kernel, cap: int = DEFAULT_CAP) -> KernelSample:
    """Evaluate ``kernel`` on every index subset i1 < ... < il."""
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != kernel.dim:
        raise ConfigError(f"kernel {kernel.id} needs {kernel.dim}-dimensional observations, "
                          f"got data of shape {np.shape(data)}")
    n, l = x.shape[0], kernel.degree
    if n < l:
        raise ConfigError(f"need at least {l} observations for a degree-{l} kernel, got {n}")
    total = math.comb(n, l)
    if total > cap:
        raise EnumerationCapError(
            f"C({n},{l}) = {total} kernel evaluations exceeds the cap of {cap}; "
            "raise the cap or use a smaller sample"
        )
    if l == 1:
        idx = [np.arange(n)]
    elif l == 2:
        idx = list(np.triu_indices(n, 1))
    else:
        combos = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), l)),
                             dtype=np.intp, count=total * l).reshape(total, l)
        idx = [combos[:, j] for j in range(l)]
    values = np.sort(np.asarray(kernel.batch([x[i] for i in idx]), dtype=float))
    values.setflags(write=False)
    return KernelSample(values=values, n=n, l=l)


def from_values(values, n: int | None = None, l: int = 1) -> KernelSample:
    """Wrap precomputed kernel values (mainly for tests and the CLI)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    v.setflags(write=False)
    if v.size == 0:
        raise ConfigError("kernel sample is empty")
    return KernelSample(values=v, n=n if n is not None else v.size, l=l)


# ------------------------------------------------------ empirical derivatives

def _count(values: np.ndarray, t: float, shift: float, strict: bool) -> int:
    # number of kernel values k with fl(t - k) >= shift (> shift when strict)
    if shift == 0.0:
        return int(np.searchsorted(values, t, side="left" if strict else "right"))
    d = t - values
    return int(np.count_nonzero(d > shift if strict else d >= shift))


def _step_value(ks: KernelSample, loss: ConvexLoss, t: float, strict: bool) -> Fraction:
    total = Fraction(loss.base)
    for shift, height in loss.jumps:
        total += Fraction(height) * Fraction(_count(ks.values, t, shift, strict), ks.N)
    return total


def v_plus(ks: KernelSample, loss: ConvexLoss, t: float) -> float:
    """Mean of psi_plus(t - k) over the kernel sample."""
    if loss.is_step:
        return float(_step_value(ks, loss, float(t), strict=False))
    return float(np.mean(loss.psi_plus(t - ks.values)))


def v_minus(ks: KernelSample, loss: ConvexLoss, t: float) -> float:
    """Mean of psi_minus(t - k) over the kernel sample."""
    if loss.is_step:
        return float(_step_value(ks, loss, float(t), strict=True))
    return float(np.mean(loss.psi_minus(t - ks.values)))


def u_value(ks: KernelSample, loss: ConvexLoss, t: float, t0: float = 0.0) -> float:
    """Mean of phi(t - k) - phi(t0 - k)."""
    return float(np.mean(loss.phi(t - ks.values) - loss.phi(t0 - ks.values)))


# --------------------------------------------------------- minimiser interval

@dataclass(frozen=True)
class MinimizerInterval:
    smallest: float
    largest: float
    selected: float
    policy: str
    n: int
    l: int
    N: int
    tol: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _ordered(x: float) -> int:
    b = int(np.float64(x).view(np.int64))
    return b if b >= 0 else -(b & 0x7FFFFFFFFFFFFFFF)


def _unordered(i: int) -> float:
    b = i if i >= 0 else (-i) | -0x8000000000000000
    return float(np.int64(b).view(np.float64))


def first_float(pred: Callable[[float], bool], lo: float, hi: float) -> float:
    """Smallest double x in (lo, hi] with pred(x), for pred monotone,
    pred(lo) false and pred(hi) true."""
    a, b = _ordered(lo), _ordered(hi)
    while b - a > 1:
        mid = (a + b) // 2
        if pred(_unordered(mid)):
            b = mid
        else:
            a = mid
    return _unordered(b)


def _step_interval(ks: KernelSample, loss: ConvexLoss) -> tuple[float, float]:
    top = loss.base + sum(h for _, h in loss.jumps)
    if not (loss.base < 0 < top):
        raise NonCoerciveLossError(f"{loss.id}: step derivative runs from {loss.base} to {top}; "
                                   "it must change sign for the objective to have a minimiser")
    values = ks.values
    if all(s == 0.0 for s, _ in loss.jumps):
        # candidates are the kernel values themselves
        def first_index(pred):
            lo, hi = 0, values.size - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if pred(float(values[mid])):
                    hi = mid
                else:
                    lo = mid + 1
            return float(values[lo])

        smallest = first_index(lambda t: _step_value(ks, loss, t, strict=False) >= 0)
        largest = first_index(lambda t: _step_value(ks, loss, t, strict=False) > 0)
        return smallest, largest
    shifts = [s for s, _ in loss.jumps]
    lo = float(values[0]) + min(shifts) - 1.0
    hi = float(values[-1]) + max(shifts) + 1.0
    smallest = first_float(lambda t: _step_value(ks, loss, t, strict=False) >= 0, lo, hi)
    past = first_float(lambda t: _step_value(ks, loss, t, strict=True) > 0, lo, hi)
    largest = float(np.nextafter(past, -np.inf))
    # the exact minimiser can fall strictly between two adjacent floats; report the upper one
    return smallest, max(largest, smallest)


def _bisect(pred: Callable[[float], bool], lo: float, hi: float, tol: float) -> tuple[float, float]:
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def _continuous_interval(ks: KernelSample, loss: ConvexLoss, tol: float) -> tuple[float, float]:
    lo, hi = float(ks.values[0]) - 1.0, float(ks.values[-1]) + 1.0
    width = 1.0
    for _ in range(200):
        if v_plus(ks, loss, lo) < 0 and v_minus(ks, loss, hi) > 0:
            break
        width *= 2.0
        lo, hi = float(ks.values[0]) - width, float(ks.values[-1]) + width
    else:
        raise NonCoerciveLossError(f"{loss.id}: no sign change of the empirical derivative found")
    smallest = _bisect(lambda t: v_plus(ks, loss, t) >= 0, lo, hi, tol)[1]
    largest = _bisect(lambda t: v_minus(ks, loss, t) > 0, lo, hi, tol)[0]
    if largest < smallest:
        # strictly increasing derivative: both searches bracket the same root
        smallest = largest = 0.5 * (smallest + largest)
    return smallest, largest


def argmin_interval(ks: KernelSample, loss: ConvexLoss, policy: str = "midpoint",
                    tol: float = ROOT_TOL) -> MinimizerInterval:
    """Interval of minimisers of the empirical objective and the selected point.

    ``smallest`` is the first t with mean psi_plus(t - k) >= 0 and
    ``largest`` the last t with mean psi_minus(t - k) <= 0.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; choose from {list(POLICIES)}")
    if loss.is_step:
        smallest, largest = _step_interval(ks, loss)
        used_tol = 0.0
    else:
        smallest, largest = _continuous_interval(ks, loss, tol)
        used_tol = tol
    selected = {"smallest": smallest, "largest": largest,
                "midpoint": 0.5 * (smallest + largest)}[policy]
    return MinimizerInterval(smallest=smallest, largest=largest, selected=selected,
                             policy=policy, n=ks.n, l=ks.l, N=ks.N, tol=used_tol)


# ------------------------------------------------------------------------ I/O

def read_csv(path: str | Path) -> np.ndarray:
    """Observations as an ``(n, d)`` array; a non-numeric first row is a header."""
    rows = []
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                cells = [c.strip() for c in row if c.strip() != ""]
                if not cells:
                    continue
                try:
                    rows.append([float(c) for c in cells])
                except ValueError:
                    if lineno == 1:
                        continue
                    raise ConfigError(f"{path}:{lineno}: non-numeric value in {row}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: rows have differing numbers of columns")
    return np.array(rows, dtype=float)
