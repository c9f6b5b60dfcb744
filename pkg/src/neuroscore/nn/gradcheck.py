"""Finite-difference verification of the analytic loss gradients.

The network is piecewise smooth: ReLU gates and max-pool winners switch at
kinks. A central difference is only a valid derivative estimate when no
switch happens inside [w - h, w + h]. When one does, the one-sided
difference taken on the side whose activation pattern equals the pattern
at w is used instead (second order when w +- 2h is still on that side), so
every coordinate is still checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .model import ModelParams


def _pool_winners(o: np.ndarray) -> np.ndarray:
    n, h, w, c = o.shape
    h2, w2 = h // 2, w // 2
    win = o[:, :2 * h2, :2 * w2].reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    return win.reshape(n, h2, w2, c, 4).argmax(axis=-1)


def activation_pattern(params: ModelParams, images) -> bytes:
    """Every ReLU gate and pool winner of the trunk, packed for comparison."""
    x = M.as_batch(images, params.arch.image_size)
    _, cache = M.trunk_forward(params.tensors, M.conv1_cols(x), params.arch)
    _, o1, m1, _, _, o2, m2, _, _, a1, a2 = cache
    parts = [m1 > 0, m2 > 0, a1 > 0, a2 > 0, _pool_winners(o1), _pool_winners(o2)]
    return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


@dataclass
class CheckResult:
    max_rel_error: float
    n_coords: int
    n_one_sided: int


def _loss_fn(which: str):
    if which == "loss1":
        return M.loss1
    if which == "loss2":
        return M.loss2
    raise ValueError(f"unknown loss {which!r}")


def numeric_grad(params: ModelParams, images, targets, which: str, name: str,
                 h: float = 1e-5) -> tuple[np.ndarray, int]:
    """Finite-difference gradient of one tensor and the number of kink coordinates."""
    f = _loss_fn(which)
    t = params.tensors[name]
    g = np.zeros_like(t)
    base_pattern = activation_pattern(params, images)
    f0 = f(params, images, targets)
    one_sided = 0
    for i in np.ndindex(t.shape):
        old = t[i]
        t[i] = old + h
        up, up_same = f(params, images, targets), activation_pattern(params, images) == base_pattern
        t[i] = old - h
        dn, dn_same = f(params, images, targets), activation_pattern(params, images) == base_pattern
        t[i] = old
        if up_same and dn_same:
            g[i] = (up - dn) / (2 * h)
            continue
        if not (up_same or dn_same):
            raise ArithmeticError(f"{name}{i}: kinks on both sides within h={h}")
        side, near = (1.0, up) if up_same else (-1.0, dn)
        one_sided += 1
        t[i] = old + 2 * side * h
        far, far_same = f(params, images, targets), activation_pattern(params, images) == base_pattern
        t[i] = old
        if far_same:
            # second-order one-sided stencil, same truncation order as the central one
            g[i] = side * (4 * near - 3 * f0 - far) / (2 * h)
        else:
            g[i] = side * (near - f0) / h
    return g, one_sided


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - n| / max(|a| + |n|), a scale-aware error for a whole tensor.

    ``floor`` bounds the denominator from below so that tensors whose true
    gradient is zero are not judged on round-off alone.
    """
    scale = float(np.max(np.abs(analytic) + np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric))) / max(scale, floor)


def roundoff_floor(loss: float, h: float) -> float:
    """Gradient scale below which step ``h`` cannot reach 1e-4 relative accuracy.

    Evaluating the loss carries a few ulps of round-off, so a difference
    quotient is uncertain by about eps * |loss| / h. Resolving 1e-4 with a
    budget of 10 ulps needs a gradient of at least 1e5 times that.
    """
    return 1e5 * np.finfo(np.float64).eps * max(1.0, abs(loss)) / h


def check_batch(params: ModelParams, images, targets, which: str, h: float = 1e-5,
                names=None) -> CheckResult:
    params = params.astype(np.float64)
    g = M.grad(params, images, targets, which)
    if names is None:
        names = M.THETA1 if which == "loss1" else M.THETA1 + M.THETA2
    worst, coords, kinks = 0.0, 0, 0
    for name in names:
        num, k = numeric_grad(params, images, targets, which, name, h)
        worst = max(worst, relative_error(g.values[name], num, roundoff_floor(g.loss, h)))
        coords += num.size
        kinks += k
    return CheckResult(worst, coords, kinks)
