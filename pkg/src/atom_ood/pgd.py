"""L-infinity projected sign-gradient ascent shared by training and attacks."""

import numpy as np

from . import nn_model


def as_box(box, dim):
    """Normalize a box spec (None, (lo, hi) scalars or vectors) to two arrays."""
    if box is None:
        return np.full(dim, -np.inf), np.full(dim, np.inf)
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (dim,)).copy()
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    return lo, hi


def linf_bounds(x0, eps, box=None):
    """Per-coordinate feasible interval of the eps-ball around x0 intersected with the box.

    x0 - eps can round to a point slightly more than eps away; such endpoints
    are nudged one ulp inward so |x - x0| <= eps holds exactly for any x in
    the interval.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo = x0 - eps
    hi = x0 + eps
    lo = np.where(x0 - lo > eps, np.nextafter(lo, np.inf), lo)
    hi = np.where(hi - x0 > eps, np.nextafter(hi, -np.inf), hi)
    blo, bhi = as_box(box, x0.shape[-1])
    lo = np.maximum(lo, blo)
    hi = np.minimum(hi, bhi)
    if np.any(lo > hi):
        raise ValueError("eps-ball does not meet the box; is x inside the box?")
    return lo, hi


def uniform_in_bounds(rng, lo, hi):
    u = rng.random(lo.shape)
    return np.clip(lo + u * (hi - lo), lo, hi)


def ce_objective(target_index):
    """Cross-entropy of a fixed class (0-based), as a per-row ascent objective."""

    def fn(out):
        logp = nn_model.log_softmax(out)
        value = -logp[:, target_index]
        grad = np.exp(logp)
        grad[:, target_index] -= 1.0
        return value, grad

    return fn


def uniform_conf_objective(num_classes):
    """-(1/K) sum_{i<=K} log F_i, pushing the first K outputs towards low confidence."""

    def fn(out):
        logp = nn_model.log_softmax(out)
        p = np.exp(logp)
        value = -logp[:, :num_classes].mean(axis=1)
        # d/dz_j of -(1/K) sum_i log p_i = p_j - [j < K] / K
        grad = p.copy()
        grad[:, :num_classes] -= 1.0 / num_classes
        return value, grad

    return fn


def ascend(model, x0, objective, eps, steps, step_size, box=None, start=None):
    """Signed-gradient ascent of ``objective`` inside the eps-ball of each row.

    ``start`` (optional) is the initial iterate, e.g. a random point in the
    ball. Returns (best point, best value) per row over x0, the start and
    every iterate, so the value never falls below the value at x0.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    lo, hi = linf_bounds(x0, eps, box)
    value, grad = nn_model.input_grad_from_logits(model, x0, objective)
    x, best, best_val = x0.copy(), x0.copy(), value.copy()
    if eps == 0:
        return best, best_val
    if start is not None:
        x = np.clip(start, lo, hi)
        value, grad = nn_model.input_grad_from_logits(model, x, objective)
        better = value > best_val
        best[better] = x[better]
        best_val[better] = value[better]
    for _ in range(int(steps)):
        x = np.clip(x + step_size * np.sign(grad), lo, hi)
        value, grad = nn_model.input_grad_from_logits(model, x, objective)
        better = value > best_val
        best[better] = x[better]
        best_val[better] = value[better]
    return best, best_val
