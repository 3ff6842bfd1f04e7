from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError


def grad_check(model, batch: tuple[np.ndarray, np.ndarray], epsilon: float = 1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    ``model`` needs ``params`` (a list of arrays, perturbed in place and
    restored), ``loss(X, y)`` and ``loss_and_grads(X, y)``. The relative
    error of one coordinate is |a - f| / max(|a|, |f|, 1e-8).
    """
    X, y = batch
    loss, analytic = model.loss_and_grads(X, y)
    if not math.isfinite(loss):
        raise NumericError("loss is not finite")
    worst = 0.0
    for p, g in zip(model.params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + epsilon
            up = model.loss(X, y)
            flat[j] = saved - epsilon
            down = model.loss(X, y)
            flat[j] = saved
            fd = (up - down) / (2.0 * epsilon)
            a = gflat[j]
            denom = max(abs(a), abs(fd), 1e-8)
            worst = max(worst, abs(a - fd) / denom)
    return worst
