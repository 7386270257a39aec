"""Finite-difference validation of every analytic gradient in the package.

Central differences with a fixed step, compared by relative error with a
floored denominator so near-zero gradients do not blow the ratio up. The
samplers keep a margin around the genuinely non-differentiable loci (sign
flips inside absolute values) but otherwise roam the loss domains freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (LossConfig, pole_focal_loss, polar_ring_loss, smooth_l1,
                     total_regression_loss)
from .toynet import ToyNet, compute_batch_loss

DEFAULT_STEP = 1e-5
ERROR_FLOOR = 1e-3


@dataclass(frozen=True)
class GradCheckSummary:
    name: str
    num_points: int
    max_rel_error: float
    mean_rel_error: float


def central_difference(f, x: float, step: float = DEFAULT_STEP) -> float:
    return (f(x + step) - f(x - step)) / (2.0 * step)


def relative_error(analytic: float, numeric: float,
                   floor: float = ERROR_FLOOR) -> float:
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale


def _summarize(name: str, errors: list[float]) -> GradCheckSummary:
    arr = np.asarray(errors)
    return GradCheckSummary(name, len(errors), float(arr.max()), float(arr.mean()))


def check_focal_gradients(rng: np.random.Generator, num_points: int = 1000,
                          step: float = DEFAULT_STEP,
                          cfg: LossConfig | None = None) -> GradCheckSummary:
    """Perturb one heatmap cell at a time on random positive/negative mixes."""
    cfg = cfg or LossConfig()
    errors = []
    for _ in range(num_points):
        shape = (1, 4, 4)
        target = rng.uniform(0.0, 0.999, shape)
        pole = (0, int(rng.integers(4)), int(rng.integers(4)))
        target[pole] = 1.0
        # keep pred away from the clamp bounds so the step cannot cross them
        pred = rng.uniform(0.01, 0.99, shape)
        num_objects = int(rng.integers(1, 4))
        cell = (0, int(rng.integers(4)), int(rng.integers(4)))

        analytic = pole_focal_loss(pred, target, cfg, num_objects).gradients["pred"][cell]

        def value_at(v):
            probe = pred.copy()
            probe[cell] = v
            return pole_focal_loss(probe, target, cfg, num_objects).value

        fd = central_difference(value_at, pred[cell], step)
        errors.append(relative_error(analytic, fd))
    return _summarize("pole_focal_loss", errors)


def check_smooth_l1_gradients(rng: np.random.Generator, num_points: int = 1000,
                              step: float = DEFAULT_STEP,
                              beta: float = 1.0) -> GradCheckSummary:
    errors = []
    while len(errors) < num_points:
        u = rng.uniform(-4.0, 4.0)
        u_star = rng.uniform(-4.0, 4.0)
        if abs(abs(u - u_star) - beta) < 1e-3:  # second-derivative seam
            continue
        analytic = smooth_l1(u, u_star, beta).gradients["u"]
        fd = central_difference(lambda v: smooth_l1(v, u_star, beta).value, u, step)
        errors.append(relative_error(analytic, fd))
    return _summarize("smooth_l1", errors)


def _ring_sample(rng: np.random.Generator, beta: float):
    """(rho, rho*, theta, theta*) away from sign flips and the SL1 seam."""
    while True:
        rho = rng.uniform(0.5, 3.5)
        rho_star = rng.uniform(0.5, 3.5)
        theta = rng.uniform(0.05, np.pi - 0.05)
        theta_star = rng.uniform(0.05, np.pi - 0.05)
        dr2 = rho * rho - rho_star * rho_star
        dt = theta - theta_star
        if abs(dr2) < 0.02 or abs(dt) < 0.02:
            continue
        if abs(abs(dr2 * dt) - beta) < 1e-3:
            continue
        return rho, rho_star, theta, theta_star


def check_ring_gradients(rng: np.random.Generator, num_points: int = 1000,
                         step: float = DEFAULT_STEP,
                         beta: float = 1.0) -> GradCheckSummary:
    errors = []
    for i in range(num_points):
        rho, rho_star, theta, theta_star = _ring_sample(rng, beta)
        loss = polar_ring_loss(rho, rho_star, theta, theta_star, beta)
        if i % 2 == 0:
            fd = central_difference(
                lambda v: polar_ring_loss(v, rho_star, theta, theta_star, beta).value,
                rho, step)
            errors.append(relative_error(loss.gradients["rho"], fd))
        else:
            fd = central_difference(
                lambda v: polar_ring_loss(rho, rho_star, v, theta_star, beta).value,
                theta, step)
            errors.append(relative_error(loss.gradients["theta"], fd))
    return _summarize("polar_ring_loss", errors)


def check_total_regression_gradients(rng: np.random.Generator,
                                     num_points: int = 1000,
                                     step: float = DEFAULT_STEP,
                                     cfg: LossConfig | None = None) -> GradCheckSummary:
    cfg = cfg or LossConfig()
    names = ("rho", "theta1", "theta2")
    errors = []
    for i in range(num_points):
        rho, rho_star, t1, t1_star = _ring_sample(rng, cfg.smooth_l1_beta)
        _, _, t2, t2_star = _ring_sample(rng, cfg.smooth_l1_beta)
        pred = [rho, t1, t2]
        truth = (rho_star, t1_star, t2_star)
        coord = i % 3
        analytic = total_regression_loss(tuple(pred), truth, cfg).gradients[names[coord]]

        def value_at(v):
            probe = list(pred)
            probe[coord] = v
            return total_regression_loss(tuple(probe), truth, cfg).value

        fd = central_difference(value_at, pred[coord], step)
        errors.append(relative_error(analytic, fd))
    return _summarize("total_regression_loss", errors)


LOSS_CHECKERS = {
    "focal": check_focal_gradients,
    "smooth_l1": check_smooth_l1_gradients,
    "ring": check_ring_gradients,
    "total_reg": check_total_regression_gradients,
}


def check_all_losses(seed: int = 0, num_points: int = 1000,
                     losses=None) -> list[GradCheckSummary]:
    """Run the named loss checkers (all four by default) on one rng stream."""
    rng = np.random.default_rng(seed)
    names = list(LOSS_CHECKERS) if losses is None else list(losses)
    unknown = [n for n in names if n not in LOSS_CHECKERS]
    if unknown:
        raise ValueError(f"unknown loss checkers {unknown}")
    return [LOSS_CHECKERS[n](rng, num_points) for n in names]


def check_net_gradients(net: ToyNet, x: np.ndarray, targets, cfg: LossConfig,
                        rng: np.random.Generator, num_coords: int = 50,
                        step: float = DEFAULT_STEP) -> GradCheckSummary:
    """End-to-end check: perturb random weights, compare d(total loss)."""
    net.zero_grads()
    compute_batch_loss(net, x, targets, cfg, backward=True)
    params = net.parameters()
    analytic = [p.grad.copy() for p in params]
    errors = []
    attempts = 0
    while len(errors) < num_coords and attempts < 20 * num_coords:
        attempts += 1
        pi = int(rng.integers(len(params)))
        flat = params[pi].value.reshape(-1)
        ci = int(rng.integers(flat.size))
        orig = flat[ci]
        flat[ci] = orig + step
        up = compute_batch_loss(net, x, targets, cfg, backward=False).total
        signs_up = net.relu_signs()
        flat[ci] = orig - step
        down = compute_batch_loss(net, x, targets, cfg, backward=False).total
        signs_down = net.relu_signs()
        flat[ci] = orig
        if not np.array_equal(signs_up, signs_down):
            # the perturbation pushed a unit across zero; the central
            # difference straddles a kink there, so the sample is invalid
            continue
        fd = (up - down) / (2.0 * step)
        errors.append(relative_error(analytic[pi].reshape(-1)[ci], fd))
    return _summarize("toynet_backward", errors)
