"""Convex losses and symmetric kernels.

A loss is stored through its convex function ``phi`` and the two one-sided
derivatives.  Every catalogue loss also records the decomposition of its
right derivative into a constant, a finite list of upward jumps and a
continuous remainder; the population side uses that split to integrate jump
parts exactly against a CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, NonCoerciveLossError

SMOOTHNESS_TAGS = ("differentiable-everywhere", "differentiable-off-zero", "jump-at-zero", "step")
COERCIVITY_PROBE = 1e12

ArrayFn = Callable[[Any], Any]


def _arr(t):
    return np.asarray(t, dtype=float)


def _out(x):
    return x if np.ndim(x) else float(x)


@dataclass(frozen=True)
class ConvexLoss:
    """Convex loss phi with phi(0) = 0 and its one-sided derivatives.

    The right derivative equals ``base + sum(h * 1[t >= s] for s, h in jumps)
    + psi_cont(t)``, with ``psi_cont`` continuous (``None`` means zero).
    ``cont_kinks`` lists points where ``psi_cont`` is not smooth, used as
    quadrature break points.
    """

    id: str
    params: tuple[float, ...]
    phi: ArrayFn
    psi_plus: ArrayFn
    psi_minus: ArrayFn
    smoothness_tag: str
    base: float = 0.0
    jumps: tuple[tuple[float, float], ...] = ()
    psi_cont: ArrayFn | None = None
    cont_kinks: tuple[float, ...] = ()

    @property
    def is_step(self) -> bool:
        return self.psi_cont is None

    def to_json(self) -> dict:
        if self.id == "step":
            return {"id": "step", "base": self.base, "jumps": [list(j) for j in self.jumps]}
        return {"id": self.id, "params": list(self.params)}


@dataclass(frozen=True)
class JumpDecomposition:
    kappa_plus: float
    kappa_minus: float
    kappa: float
    psi_c: ArrayFn


def _check_loss(alpha: float) -> ConvexLoss:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"check loss: alpha must lie in (0, 1), got {alpha}")
    return ConvexLoss(
        id="check",
        params=(alpha,),
        phi=lambda t: _out(_arr(t) * (np.where(_arr(t) >= 0, 1.0, 0.0) - alpha)),
        psi_plus=lambda t: _out(np.where(_arr(t) >= 0, 1.0, 0.0) - alpha),
        psi_minus=lambda t: _out(np.where(_arr(t) > 0, 1.0, 0.0) - alpha),
        smoothness_tag="jump-at-zero",
        base=-alpha,
        jumps=((0.0, 1.0),),
    )


def _abs_loss() -> ConvexLoss:
    return ConvexLoss(
        id="abs",
        params=(),
        phi=lambda t: _out(np.abs(_arr(t))),
        psi_plus=lambda t: _out(np.where(_arr(t) >= 0, 1.0, -1.0)),
        psi_minus=lambda t: _out(np.where(_arr(t) > 0, 1.0, -1.0)),
        smoothness_tag="jump-at-zero",
        base=-1.0,
        jumps=((0.0, 2.0),),
    )


def _square_loss() -> ConvexLoss:
    psi = lambda t: _out(2.0 * _arr(t))  # noqa: E731
    return ConvexLoss(
        id="square",
        params=(),
        phi=lambda t: _out(_arr(t) ** 2),
        psi_plus=psi,
        psi_minus=psi,
        smoothness_tag="differentiable-everywhere",
        psi_cont=psi,
    )


def _lp_loss(p: float) -> ConvexLoss:
    if p <= 1.0:
        raise ConfigError(f"lp loss needs p > 1 (got {p}); for p = 1 use 'abs', "
                          "or 'check' with alpha = 0.5 for the median")
    if p == 2.0:
        tag = "differentiable-everywhere"
    elif p < 2.0:
        tag = "differentiable-off-zero"
    else:
        tag = "differentiable-everywhere"

    def psi(t):
        t = _arr(t)
        return _out(p * np.sign(t) * np.abs(t) ** (p - 1.0))

    return ConvexLoss(
        id="lp",
        params=(p,),
        phi=lambda t: _out(np.abs(_arr(t)) ** p),
        psi_plus=psi,
        psi_minus=psi,
        smoothness_tag=tag,
        psi_cont=psi,
        cont_kinks=(0.0,),
    )


_PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


def _sigmoid_normal() -> ConvexLoss:
    def psi(t):
        return _out(special.ndtr(_arr(t)) - 0.5)

    def phi(t):
        t = _arr(t)
        return _out(t * special.ndtr(t) + np.exp(-0.5 * t * t) * _PHI0 - _PHI0 - 0.5 * t)

    return ConvexLoss(id="sigmoid_normal", params=(), phi=phi, psi_plus=psi, psi_minus=psi,
                      smoothness_tag="differentiable-everywhere", psi_cont=psi)


def _sigmoid_cauchy() -> ConvexLoss:
    def psi(t):
        return _out(np.arctan(_arr(t)) / math.pi)

    def phi(t):
        t = _arr(t)
        return _out((t * np.arctan(t) - 0.5 * np.log1p(t * t)) / math.pi)

    return ConvexLoss(id="sigmoid_cauchy", params=(), phi=phi, psi_plus=psi, psi_minus=psi,
                      smoothness_tag="differentiable-everywhere", psi_cont=psi)


def _three_step(low: float, mid: float, high: float, r: float) -> ConvexLoss:
    if not (low < 0.0 < mid < high and r > 0.0):
        raise ConfigError("three_step loss needs params [low, mid, high, r] with "
                          f"low < 0 < mid < high and r > 0, got {[low, mid, high, r]}")

    def psi_plus(t):
        t = _arr(t)
        return _out(np.where(t < 0, low, np.where(t < r, mid, high)))

    def psi_minus(t):
        t = _arr(t)
        return _out(np.where(t <= 0, low, np.where(t <= r, mid, high)))

    def phi(t):
        t = _arr(t)
        return _out(np.where(t < 0, low * t, np.where(t < r, mid * t, mid * r + high * (t - r))))

    return ConvexLoss(
        id="three_step",
        params=(low, mid, high, r),
        phi=phi,
        psi_plus=psi_plus,
        psi_minus=psi_minus,
        smoothness_tag="step",
        base=low,
        jumps=((0.0, mid - low), (r, high - mid)),
    )


LOSS_IDS = ("square", "check", "abs", "lp", "sigmoid_normal", "sigmoid_cauchy", "three_step")


def loss_catalog(loss_id: str, params: Sequence[float] = ()) -> ConvexLoss:
    """Catalogue loss by id.

    ``square``; ``check [alpha]``; ``abs``; ``lp [p]`` with p > 1;
    ``sigmoid_normal`` and ``sigmoid_cauchy`` whose derivatives are the
    centred normal and Cauchy CDFs; ``three_step [low, mid, high, r]`` with a
    piecewise-constant derivative taking the three values on
    (-inf, 0), [0, r) and [r, inf).
    """
    p = [float(v) for v in params]

    def need(k):
        if len(p) != k:
            raise ConfigError(f"loss {loss_id!r} takes {k} parameter(s), got {len(p)}")

    if loss_id == "square":
        need(0)
        return _square_loss()
    if loss_id == "check":
        need(1)
        return _check_loss(p[0])
    if loss_id == "abs":
        need(0)
        return _abs_loss()
    if loss_id == "lp":
        need(1)
        return _lp_loss(p[0])
    if loss_id == "sigmoid_normal":
        need(0)
        return _sigmoid_normal()
    if loss_id == "sigmoid_cauchy":
        need(0)
        return _sigmoid_cauchy()
    if loss_id == "three_step":
        need(4)
        return _three_step(*p)
    raise ConfigError(f"unknown loss id {loss_id!r}; choose from {list(LOSS_IDS)}")


def custom_loss(
    loss_id: str,
    phi: ArrayFn,
    psi_plus: ArrayFn,
    psi_minus: ArrayFn,
    smoothness_tag: str,
    *,
    base: float = 0.0,
    jumps: Sequence[tuple[float, float]] = (),
    psi_cont: ArrayFn | None = None,
    params: Sequence[float] = (),
) -> ConvexLoss:
    """Plug-in point for user losses.

    The caller promises convexity and the derivative decomposition.  We
    normalise phi(0) to zero and reject derivatives that do not change sign,
    since the objective would then have no bounded minimiser.
    """
    if smoothness_tag not in SMOOTHNESS_TAGS:
        raise ConfigError(f"smoothness_tag must be one of {SMOOTHNESS_TAGS}")
    check_coercive(psi_plus, psi_minus, loss_id)
    shift = float(phi(0.0))
    return ConvexLoss(
        id=loss_id,
        params=tuple(float(v) for v in params),
        phi=(lambda t: _out(_arr(phi(t)) - shift)) if shift else phi,
        psi_plus=psi_plus,
        psi_minus=psi_minus,
        smoothness_tag=smoothness_tag,
        base=float(base),
        jumps=tuple((float(s), float(h)) for s, h in jumps),
        psi_cont=psi_cont,
    )


def check_coercive(psi_plus: ArrayFn, psi_minus: ArrayFn, name: str = "loss") -> None:
    right = float(psi_plus(COERCIVITY_PROBE))
    left = float(psi_minus(-COERCIVITY_PROBE))
    if not (right > 0.0 and left < 0.0):
        raise NonCoerciveLossError(
            f"{name}: derivative must be negative far left and positive far right "
            f"(got {left} and {right}); the objective has no bounded minimiser"
        )


def step_loss(base: float, jumps: Sequence[tuple[float, float]]) -> ConvexLoss:
    """Loss whose right derivative is ``base + sum h 1[t >= s]`` over ``jumps``."""
    try:
        pairs = sorted((float(s), float(h)) for s, h in jumps)
        base = float(base)
    except (TypeError, ValueError):
        raise ConfigError("step loss needs a number 'base' and 'jumps' as [[shift, height], ...]") from None
    if not pairs or any(h <= 0 for _, h in pairs):
        raise ConfigError("step loss needs at least one jump, all with positive height")
    shifts = np.array([s for s, _ in pairs])
    heights = np.array([h for _, h in pairs])

    def psi_plus(t):
        t = _arr(t)
        return _out(base + np.sum(heights * (t[..., None] >= shifts), axis=-1))

    def psi_minus(t):
        t = _arr(t)
        return _out(base + np.sum(heights * (t[..., None] > shifts), axis=-1))

    def phi(t):
        t = _arr(t)
        ramps = np.maximum(t[..., None] - shifts, 0.0) - np.maximum(-shifts, 0.0)
        return _out(base * t + np.sum(heights * ramps, axis=-1))

    return custom_loss("step", phi, psi_plus, psi_minus, "step", base=base, jumps=pairs)


def loss_from_json(obj: dict) -> ConvexLoss:
    """Catalogue loss ``{"id", "params"}``, or ``{"id": "step", "base", "jumps"}``."""
    if not isinstance(obj, dict) or "id" not in obj:
        raise ConfigError(f"loss description needs an 'id' key: {obj!r}")
    if obj["id"] == "step":
        return step_loss(obj.get("base", 0.0), obj.get("jumps", []))
    return loss_catalog(obj["id"], obj.get("params", []))


def jump_decompose(loss: ConvexLoss) -> JumpDecomposition:
    """Split the right derivative into its jump at zero and the rest."""
    kp = float(loss.psi_plus(0.0))
    km = float(loss.psi_minus(0.0))

    def psi_c(t):
        t = _arr(t)
        return _out(_arr(loss.psi_plus(t)) - np.where(t >= 0, kp, km))

    return JumpDecomposition(kappa_plus=kp, kappa_minus=km, kappa=kp - km, psi_c=psi_c)


def cr_constant(r: float) -> float:
    """Smallest c with |u + v|^r <= c (|u|^r + |v|^r) for all real u, v."""
    if r <= 0:
        raise ConfigError("c_r constant needs r > 0")
    return 1.0 if r <= 1.0 else 2.0 ** (r - 1.0)


# -------------------------------------------------------------------- kernels

Batch = Callable[[Sequence[np.ndarray]], np.ndarray]


class KernelEvaluationError(ConfigError):
    """Kernel undefined at the given arguments."""


@dataclass(frozen=True)
class Kernel:
    """Symmetric kernel of ``degree`` arguments, each a ``dim``-vector.

    ``batch`` receives ``degree`` arrays of shape ``(M, dim)`` and returns the
    ``M`` kernel values.
    """

    id: str
    degree: int
    dim: int
    batch: Batch
    params: tuple[float, ...] = field(default=())

    def eval(self, *points) -> float:
        if len(points) != self.degree:
            raise ConfigError(f"kernel {self.id} takes {self.degree} arguments, got {len(points)}")
        cols = []
        for x in points:
            v = np.atleast_1d(np.asarray(x, dtype=float))
            if v.shape != (self.dim,):
                raise ConfigError(f"kernel {self.id} expects {self.dim}-dimensional points, got {v.shape}")
            cols.append(v.reshape(1, self.dim))
        return float(self.batch(cols)[0])

    def to_json(self) -> dict:
        return {"id": self.id, "params": list(self.params), "degree": self.degree}


def _mean_batch(cols):
    return np.mean([c[:, 0] for c in cols], axis=0)


def _mws_batch(beta):
    def batch(cols):
        a, b = cols[0][:, 0], cols[1][:, 0]
        return beta * np.minimum(a, b) + (1.0 - beta) * np.maximum(a, b)
    return batch


def _theil_sen_batch(cols):
    (y1, z1), (y2, z2) = (c.T for c in cols)
    dy = y2 - y1
    if np.any(dy == 0):
        raise KernelEvaluationError("theil_sen: slope undefined for observations with equal Y")
    return (z2 - z1) / dy


KERNEL_IDS = ("identity", "mean", "walsh", "maritz_wu_staudte", "abs_diff", "theil_sen")


def kernel_catalog(kernel_id: str, params: Sequence[float] = (), degree: int | None = None) -> Kernel:
    """Catalogue kernel by id.

    ``identity`` (degree 1); ``mean [l]`` averaging l points; ``walsh``, the
    pairwise mean; ``maritz_wu_staudte [beta]``, beta*min + (1-beta)*max of a
    pair; ``abs_diff``, |x1 - x2|; ``theil_sen`` on (Y, Z) pairs, the slope
    through two points.
    """
    p = [float(v) for v in params]
    if kernel_id == "identity":
        k = Kernel("identity", 1, 1, lambda cols: cols[0][:, 0].copy())
    elif kernel_id == "mean":
        if len(p) != 1 or p[0] < 1 or p[0] != int(p[0]):
            raise ConfigError("mean kernel takes params [l] with integer l >= 1")
        k = Kernel("mean", int(p[0]), 1, _mean_batch, (p[0],))
    elif kernel_id == "walsh":
        k = Kernel("walsh", 2, 1, _mean_batch)
    elif kernel_id == "maritz_wu_staudte":
        if len(p) != 1 or not 0.0 <= p[0] <= 1.0:
            raise ConfigError("maritz_wu_staudte kernel takes params [beta] with beta in [0, 1]")
        k = Kernel("maritz_wu_staudte", 2, 1, _mws_batch(p[0]), (p[0],))
    elif kernel_id == "abs_diff":
        k = Kernel("abs_diff", 2, 1, lambda cols: np.abs(cols[0][:, 0] - cols[1][:, 0]))
    elif kernel_id == "theil_sen":
        k = Kernel("theil_sen", 2, 2, _theil_sen_batch)
    else:
        raise ConfigError(f"unknown kernel id {kernel_id!r}; choose from {list(KERNEL_IDS)}")
    if degree is not None and int(degree) != k.degree:
        raise ConfigError(f"kernel {kernel_id} has degree {k.degree}, config says {degree}")
    return k


def kernel_from_json(obj: dict) -> Kernel:
    if not isinstance(obj, dict) or "id" not in obj:
        raise ConfigError(f"kernel description needs an 'id' key: {obj!r}")
    return kernel_catalog(obj["id"], obj.get("params", []), obj.get("degree"))
