"""Multi-task loss functions with analytic gradients.

Every scalar loss returns a :class:`LossValue` whose gradient matches the
input parameterization noted in the docstring; the test suite verifies
each against central finite differences. Map-level reductions average
over the applicable cell masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Branch weights plus the focal-loss parameters.

    ``loc``/``angle``/``shape`` weight the anchor-branch terms of the
    combined objective; ``focal_alpha``/``focal_gamma`` shape the location
    loss itself and are unrelated to the branch weights.
    """

    loc: float = 1.0
    angle: float = 1.0
    shape: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("loc", "angle", "shape", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError(f"focal_alpha must lie in (0, 1), got {self.focal_alpha}")


@dataclass(frozen=True)
class LossValue:
    """A loss and its gradient with respect to the stated inputs."""

    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"loss value must be finite and non-negative, got {self.value!r}")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("gradient must be finite")


def _check_prob(p: float, name: str) -> None:
    if not (0.0 < p < 1.0):
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {p!r}")


def focal_loss(y: int, y_prime: float, focal_alpha: float = 0.25, focal_gamma: float = 2.0) -> LossValue:
    """Focal loss for a binary label; gradient is with respect to y_prime.

    y = 1: -alpha (1 - p)^gamma log p
    y = 0: -(1 - alpha) p^gamma log(1 - p)
    """
    _check_prob(y_prime, "y_prime")
    p = y_prime
    a, g = focal_alpha, focal_gamma
    if y == 1:
        value = -a * (1 - p) ** g * math.log(p)
        grad = a * (g * (1 - p) ** (g - 1) * math.log(p) - (1 - p) ** g / p)
    elif y == 0:
        value = -(1 - a) * p**g * math.log(1 - p)
        grad = -(1 - a) * (g * p ** (g - 1) * math.log(1 - p) - p**g / (1 - p))
    else:
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    return LossValue(value, np.array([grad]))


def conf_loss(y: int, p: float) -> LossValue:
    """Binary cross entropy; gradient with respect to p."""
    _check_prob(p, "p")
    if y == 1:
        return LossValue(-math.log(p), np.array([-1.0 / p]))
    if y == 0:
        return LossValue(-math.log(1 - p), np.array([1.0 / (1 - p)]))
    raise ValueError(f"label must be 0 or 1, got {y!r}")


def angle_loss(theta_hat: float, theta_g: float) -> LossValue:
    """Cosine orientation loss 1 - cos(th_hat - th_g), in [0, 2].

    Gradient is with respect to theta_hat. The raw form is 2 (not 0) at a
    difference of pi; canonicalize inputs first when a direction and its
    opposite should count as equal.
    """
    if not (math.isfinite(theta_hat) and math.isfinite(theta_g)):
        raise ValueError("angles must be finite")
    d = theta_hat - theta_g
    return LossValue(max(0.0, 1.0 - math.cos(d)), np.array([math.sin(d)]))


def smooth_l1(x: float) -> LossValue:
    """Smooth L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside; gradient wrt x."""
    if not math.isfinite(x):
        raise ValueError(f"input must be finite, got {x!r}")
    if abs(x) < 1.0:
        return LossValue(0.5 * x * x, np.array([x]))
    return LossValue(abs(x) - 0.5, np.array([math.copysign(1.0, x)]))


def shape_loss(w: float, h: float, wg: float, hg: float) -> LossValue:
    """Bounded-IoU shape loss over the two side ratios.

    SmoothL1(1 - min(w/wg, wg/w)) + SmoothL1(1 - min(h/hg, hg/h)); symmetric
    in (w, wg) and in (h, hg). The gradient is expressed in the log-size
    parameterization (dL/d dw, dL/d dh) where w = base e^dw, so
    dL/d dw = dL/dw * w.
    """
    for name, v in (("w", w), ("h", h), ("wg", wg), ("hg", hg)):
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def term(a: float, b: float) -> tuple[float, float]:
        # returns (loss, dloss/da)
        if a <= b:
            x = 1.0 - a / b
            dx_da = -1.0 / b
        else:
            x = 1.0 - b / a
            dx_da = b / (a * a)
        sl = smooth_l1(x)
        return sl.value, float(sl.gradient[0]) * dx_da

    lw, dlw_dw = term(w, wg)
    lh, dlh_dh = term(h, hg)
    return LossValue(lw + lh, np.array([dlw_dw * w, dlh_dh * h]))


def total_loss(components, weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of (conf, reg, loc, angle, shape) loss components."""
    l_conf, l_reg, l_loc, l_angle, l_shape = components
    for v in components:
        if v < 0:
            raise ValueError("loss components must be non-negative")
    return l_conf + l_reg + weights.loc * l_loc + weights.angle * l_angle + weights.shape * l_shape


@dataclass(frozen=True)
class MapLosses:
    """Reduced per-branch losses over prediction/target map pairs."""

    loc: float
    angle: float
    shape: float
    weighted: float


def map_losses(pred, target, weights: LossWeights = LossWeights()) -> MapLosses:
    """Mean anchor-branch losses between prediction maps and target maps.

    Location: focal loss over non-ignore cells (positive cells labeled 1).
    Orientation: cosine loss over covered cells, both maps converted from
    [0, 1] back to radians first. Shape: bounded-IoU loss over cells with
    a shape target, comparing the decoded (w, h) pairs. Empty masks
    contribute 0. Sums use float64 pairwise reduction, so results do not
    depend on evaluation order.
    """
    from .targets import LOC_IGNORE, LOC_NEGATIVE, LOC_POSITIVE

    if pred.location_prob.shape != target.location.shape:
        raise ValueError(
            f"grid mismatch: predictions {pred.location_prob.shape} vs targets {target.location.shape}"
        )

    loc_mask = target.location != LOC_IGNORE
    if loc_mask.any():
        p = np.clip(pred.location_prob[loc_mask].astype(np.float64), PROB_EPS, 1.0 - PROB_EPS)
        pos = (target.location[loc_mask] == LOC_POSITIVE).astype(np.float64)
        a, g = weights.focal_alpha, weights.focal_gamma
        per_cell = -(
            pos * a * (1.0 - p) ** g * np.log(p)
            + (1.0 - pos) * (1.0 - a) * p**g * np.log(1.0 - p)
        )
        l_loc = float(np.mean(per_cell))
    else:
        l_loc = 0.0

    ang_mask = target.location != LOC_NEGATIVE
    if ang_mask.any():
        t_hat = np.clip(pred.orientation[ang_mask].astype(np.float64), 0.0, 1.0)
        t_gt = target.orientation[ang_mask].astype(np.float64)
        diff = np.pi * (t_hat - t_gt)  # affine map to radians cancels the shift
        l_angle = float(np.mean(1.0 - np.cos(diff)))
    else:
        l_angle = 0.0

    shp_mask = target.shape_valid
    if shp_mask.any():
        base = target.level.base_size
        w_p = base * np.exp(pred.shape_dw[shp_mask].astype(np.float64))
        h_p = base * np.exp(pred.shape_dh[shp_mask].astype(np.float64))
        w_g = base * np.exp(target.shape_dw[shp_mask].astype(np.float64))
        h_g = base * np.exp(target.shape_dh[shp_mask].astype(np.float64))

        def bounded(a, b):
            x = 1.0 - np.minimum(a / b, b / a)
            return np.where(np.abs(x) < 1.0, 0.5 * x * x, np.abs(x) - 0.5)

        l_shape = float(np.mean(bounded(w_p, w_g) + bounded(h_p, h_g)))
    else:
        l_shape = 0.0

    weighted = weights.loc * l_loc + weights.angle * l_angle + weights.shape * l_shape
    return MapLosses(loc=l_loc, angle=l_angle, shape=l_shape, weighted=weighted)
