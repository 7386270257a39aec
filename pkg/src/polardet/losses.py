"""The three training losses with analytic gradients, plus the combined objectives.

Pole-point classification uses a penalty-reduced focal loss over the heatmap;
regression couples Smooth-L1 terms on (rho, theta1, theta2) with a ring-area
penalty that ties radius and angle errors together. Every loss returns its
value and the gradient with respect to each differentiated input, so the
trainer needs no autodiff.

Angle errors enter as raw differences: targets live in [0, pi) and the
network's angle head is range-bounded to (0, pi), so wrap-around cannot occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyImage, InvalidRadius, ShapeError

# focal-loss probabilities are clamped to [CLAMP_EPS, 1 - CLAMP_EPS] before
# the logarithms; gradients are evaluated at the clamped values
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters (focal exponents, ring weight, total-loss weight)."""

    alpha_focal: float = 2.0
    beta_focal: float = 4.0
    lambda_ring: float = 0.01
    reg_weight: float = 0.1
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        for name in ("alpha_focal", "beta_focal", "lambda_ring", "reg_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be positive")


@dataclass
class LossValue:
    """A scalar loss and the gradients w.r.t. its differentiated inputs."""

    value: float
    gradients: dict


def pole_focal_loss(pred: np.ndarray, target: np.ndarray, cfg: LossConfig,
                    num_objects: int) -> LossValue:
    """Penalty-reduced focal loss over a predicted heatmap.

    Cells where the target is exactly 1 are positives; every other cell is a
    negative whose penalty is damped by (1 - target)^beta. The sum is
    normalized by the image's object count.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if num_objects < 1:
        raise EmptyImage("num_objects must be >= 1")

    a, b = cfg.alpha_focal, cfg.beta_focal
    p = np.clip(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    pos = target == 1.0

    log_p = np.log(p)
    log_1p = np.log1p(-p)
    pos_term = (1.0 - p) ** a * log_p
    damp = (1.0 - target) ** b
    neg_term = damp * p ** a * log_1p
    value = -(pos_term[pos].sum() + neg_term[~pos].sum()) / num_objects

    grad = np.where(
        pos,
        -(-a * (1.0 - p) ** (a - 1.0) * log_p + (1.0 - p) ** a / p),
        -damp * (a * p ** (a - 1.0) * log_1p - p ** a / (1.0 - p)),
    ) / num_objects
    return LossValue(float(value), {"pred": grad})


def smooth_l1(u: float, u_star: float, beta: float = 1.0) -> LossValue:
    """Smooth-L1 distance between a prediction and its target.

    Quadratic within ``beta`` of the target, linear outside; the gradient is
    w.r.t. ``u``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    r = u - u_star
    if abs(r) < beta:
        return LossValue(0.5 * r * r / beta, {"u": r / beta})
    return LossValue(abs(r) - 0.5 * beta, {"u": math.copysign(1.0, r)})


def ring_area(rho: float, rho_star: float, theta: float, theta_star: float) -> float:
    """Area of the ring sector swept between predicted and true (rho, theta).

    Zero exactly when the radii agree or the angles agree.
    """
    if rho <= 0 or rho_star <= 0:
        raise InvalidRadius(f"radii must be positive, got {rho} and {rho_star}")
    return 0.5 * abs((rho * rho - rho_star * rho_star) * (theta - theta_star))


def polar_ring_loss(rho: float, rho_star: float, theta: float, theta_star: float,
                    beta: float = 1.0) -> LossValue:
    """Smooth-L1 of the ring-sector product magnitude against zero.

    The product |(rho^2 - rho*^2)(theta - theta*)| is used as defined for the
    loss, i.e. without the 1/2 factor of the plain ring area; the difference
    is absorbed by the ring weight. Gradients are w.r.t. ``rho`` and ``theta``.
    """
    if rho <= 0 or rho_star <= 0:
        raise InvalidRadius(f"radii must be positive, got {rho} and {rho_star}")
    dr2 = rho * rho - rho_star * rho_star
    dt = theta - theta_star
    g = abs(dr2 * dt)
    sl1 = smooth_l1(g, 0.0, beta)
    dl_dg = sl1.gradients["u"]

    def sign(v):
        return 0.0 if v == 0.0 else math.copysign(1.0, v)

    dg_drho = sign(dr2) * 2.0 * rho * abs(dt)
    dg_dtheta = abs(dr2) * sign(dt)
    return LossValue(sl1.value, {"rho": dl_dg * dg_drho,
                                 "theta": dl_dg * dg_dtheta})


def total_regression_loss(pred: tuple[float, float, float],
                          target: tuple[float, float, float],
                          cfg: LossConfig) -> LossValue:
    """Ring-area terms for both angles plus Smooth-L1 on all three values.

    ``pred`` and ``target`` are (rho, theta1, theta2) triples; gradients are
    returned for all three predictions.
    """
    rho, t1, t2 = pred
    rho_s, t1_s, t2_s = target
    lam, beta = cfg.lambda_ring, cfg.smooth_l1_beta

    ring1 = polar_ring_loss(rho, rho_s, t1, t1_s, beta)
    ring2 = polar_ring_loss(rho, rho_s, t2, t2_s, beta)
    sl_rho = smooth_l1(rho, rho_s, beta)
    sl_t1 = smooth_l1(t1, t1_s, beta)
    sl_t2 = smooth_l1(t2, t2_s, beta)

    value = lam * (ring1.value + ring2.value) + sl_rho.value + sl_t1.value + sl_t2.value
    grads = {
        "rho": lam * (ring1.gradients["rho"] + ring2.gradients["rho"]) + sl_rho.gradients["u"],
        "theta1": lam * ring1.gradients["theta"] + sl_t1.gradients["u"],
        "theta2": lam * ring2.gradients["theta"] + sl_t2.gradients["u"],
    }
    return LossValue(value, grads)


def total_loss(pole_loss: float, reg_loss: float, cfg: LossConfig) -> float:
    """Combined objective: pole loss plus weighted regression loss."""
    if pole_loss < 0 or reg_loss < 0:
        raise ValueError("loss components must be nonnegative")
    return pole_loss + cfg.reg_weight * reg_loss
