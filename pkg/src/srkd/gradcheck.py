"""Central finite-difference audit of analytic gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from srkd import losses


def finite_diff_audit(fn: Callable, point, epsilon: float = 1e-6, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Max gradient error of ``fn(x) -> (value, grad)`` at ``point``, relative to the gradient scale.

    The error is ``max_k |analytic_k - numeric_k| / max(|analytic|_inf, |numeric|_inf)``
    and is 0 when both gradients vanish. With ``max_coords`` only a random
    subset of coordinates is probed (at least 200 are used when available).
    """
    x = np.array(point, dtype=np.float64, copy=True)
    _, analytic = fn(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    flat = x.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max(max_coords, 200):
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=max(max_coords, 200), replace=False)
    numeric = np.zeros(len(coords))
    for n, k in enumerate(coords):
        orig = flat[k]
        flat[k] = orig + epsilon
        up = fn(x)[0]
        flat[k] = orig - epsilon
        down = fn(x)[0]
        flat[k] = orig
        numeric[n] = (up - down) / (2.0 * epsilon)
    a = analytic.reshape(-1)[coords]
    scale = max(np.max(np.abs(a)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - numeric)) / scale)


def loss_selector(name: str, **fixed) -> Callable:
    """Wrap a loss as ``x -> (value, grad)`` in its differentiable argument.

    ``clip`` / ``conf``: x is the logit matrix. ``kd`` / ``kd_decomposed``: x
    is the student logits; pass ``teacher``, ``tau_kd`` (and ``beta``).
    ``feature_kd_student`` / ``feature_kd_projection``: pass the other two
    operands as ``projection``/``student`` and ``teacher``.
    """
    if name == "clip":
        return losses.clip_loss
    if name == "conf":
        return losses.confidence_penalty
    if name == "kd":
        return lambda z: losses.kd_loss(z, fixed["teacher"], fixed.get("tau_kd", 5.0))
    if name == "kd_decomposed":
        def f(z):
            _, _, comb, g = losses.kd_loss_decomposed(
                z, fixed["teacher"], fixed.get("tau_kd", 5.0), fixed.get("beta", 1.0))
            return comb, g
        return f
    if name == "feature_kd_student":
        def f(x):
            v, gx, _ = losses.feature_kd(x, fixed["projection"], fixed["teacher"])
            return v, gx
        return f
    if name == "feature_kd_projection":
        def f(w):
            v, _, gw = losses.feature_kd(fixed["student"], w, fixed["teacher"])
            return v, gw
        return f
    if name == "zero":
        return lambda x: (0.0, np.zeros_like(x))
    raise KeyError(f"unknown loss {name!r}")
