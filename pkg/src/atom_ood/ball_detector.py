"""Ball detectors G_{u,r}(x) = +1 iff ||x - u||_2 <= r, and how to learn them.

Learning rules, from least to most auxiliary information:

* ``fit_in_dist``: u = sample mean, r = (1 + gamma / (4 sqrt(d))) * sigma_hat.
* ``fit_margin``: move u inside the s-ball around the sample mean so that as
  few auxiliary outliers as possible can be pushed (L-inf budget eps) to
  within distance t of u.
* ``fit_mined``: same, but only on outliers whose distance to the sample
  mean falls in a mining interval [a, b].
* ``fit_ideal_average``: u = plain mean of the mined outliers.

Worst-case perturbations against a ball have a closed form (see
``worst_case_min_dist``), so FPR under attack is computed exactly.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_seed, generator, normal
from .synth_data import SampleBatch, sample_in_dist


@dataclass(frozen=True)
class BallDetector:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).ravel()
        object.__setattr__(self, "center", center)
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        if not self.radius >= 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")

    @property
    def dim(self):
        return self.center.size

    def to_json(self):
        return json.dumps({"dim": self.dim, "center": [float(v) for v in self.center],
                           "radius": float(self.radius)})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        det = cls(np.array(obj["center"], dtype=np.float64), float(obj["radius"]))
        if det.dim != obj["dim"]:
            raise ValueError(f"dim field {obj['dim']} disagrees with center length {det.dim}")
        return det


@dataclass(frozen=True)
class MarginFitConfig:
    search_radius: float
    margin_threshold: float
    restarts: int = 4
    local_steps: int = 150
    step_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.search_radius < 0:
            raise ValueError("search_radius must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.local_steps < 0:
            raise ValueError("local_steps must be >= 0")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be positive")


@dataclass(frozen=True)
class MiningInterval:
    low: float
    high: float

    def __post_init__(self):
        if math.isnan(self.low) or math.isnan(self.high) or self.low > self.high:
            raise ValueError(f"invalid mining interval [{self.low}, {self.high}]")


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def predict(det, x):
    """+1 (in-distribution) iff ||x - u|| <= r; vectorized over rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != det.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, detector has {det.dim}")
    dist = np.sqrt(np.sum((x - det.center) ** 2, axis=-1))
    return np.where(dist <= det.radius, 1, -1)


def worst_case_min_dist(x, p, eps, box=None):
    """min over ||delta||_inf <= eps (and x + delta in box) of ||x + delta - p||_2.

    The problem separates by coordinate: each delta_j is p_j - x_j clamped to
    its feasible interval. ``box`` is an optional (lo, hi) pair of per-coordinate
    bounds. Accepts a single point or a matrix of rows.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x.shape[-1] != p.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {p.shape[-1]}")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    diff = p - x
    if box is None:
        resid = np.maximum(np.abs(diff) - eps, 0.0)
    else:
        lo = np.maximum(-eps, np.asarray(box[0], dtype=np.float64) - x)
        hi = np.minimum(eps, np.asarray(box[1], dtype=np.float64) - x)
        if np.any(lo > hi):
            raise ValueError("empty feasible interval: x lies outside the box")
        resid = diff - np.clip(diff, lo, hi)
    return np.sqrt(np.sum(resid * resid, axis=-1))


def eval_fnr_mc(det, spec, count, seed, chunk=8192):
    """Monte Carlo FNR over in-distribution draws, chunked with per-chunk seeds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rejected = 0
    for k, start in enumerate(range(0, count, chunk)):
        rows = min(chunk, count - start)
        batch = sample_in_dist(spec, rows, derive_seed(seed, k))
        rejected += int(np.sum(predict(det, batch.points) == -1))
    return rejected / count


def eval_fpr_worst_mc(det, ood, eps):
    """Fraction of OOD rows an L-inf adversary can move into the ball (exact)."""
    if len(ood) == 0:
        raise ValueError("ood batch is empty")
    if ood.dim != det.dim:
        raise ValueError(f"dimension mismatch: ood has {ood.dim}, detector has {det.dim}")
    return float(np.mean(worst_case_min_dist(ood.points, det.center, eps) <= det.radius))


def fit_in_dist(in_data, gamma_margin):
    pts = in_data.points if isinstance(in_data, SampleBatch) else _rows(in_data)
    n, d = pts.shape
    if n < 2:
        raise ValueError("need at least two in-distribution points")
    center = pts.mean(axis=0)
    sigma_hat = math.sqrt(float(np.mean(np.sum((pts - center) ** 2, axis=1))))
    return BallDetector(center, (1.0 + gamma_margin / (4.0 * math.sqrt(d))) * sigma_hat)


def margin_loss(p, aux, t, eps):
    """Fraction of auxiliary rows an adversary can bring strictly within t of p."""
    pts = aux.points if isinstance(aux, SampleBatch) else _rows(aux)
    if len(pts) == 0:
        raise ValueError("aux batch is empty")
    return float(np.mean(worst_case_min_dist(pts, p, eps) < t))


def margin_threshold_range(spec):
    """Interval of margin thresholds t admitted by the ideal-auxiliary analysis.

    Lower end sqrt(sigma_o^2 d - B^2) with B = sigma*gamma/4 (far centers get
    penalised), upper end sigma_o sqrt(d) - eps sqrt(d) (the true center has
    zero loss); t must be < the upper end. Returns (lo, hi).
    """
    d = spec.dim
    b = spec.sigma * spec.gamma_margin / 4.0
    lo = math.sqrt(spec.sigma_o ** 2 * d - b * b)
    hi = spec.sigma_o * math.sqrt(d) - spec.eps * math.sqrt(d)
    return lo, hi


def default_margin_threshold(spec):
    """Midpoint of the admissible range; (threshold, range_was_empty).

    When the range is empty the largest threshold that still gives the true
    center zero loss is used instead.
    """
    lo, hi = margin_threshold_range(spec)
    if lo < hi:
        return 0.5 * (lo + hi), False
    return hi * (1.0 - 1e-12), True


class _MarginObjective:
    """Counts margin violations, with rows that cannot change status pre-binned."""

    def __init__(self, pts, anchor, radius, t, eps):
        d = pts.shape[1]
        slack = 1e-9 * max(1.0, t)
        dist0 = np.sqrt(np.sum((pts - anchor) ** 2, axis=1))
        # ||x - p|| - eps sqrt(d) <= wcd <= ||x - p|| and | ||x-p|| - dist0 | <= radius
        never = dist0 - radius - eps * math.sqrt(d) >= t + slack
        always = dist0 + radius < t - slack
        active = ~(never | always)
        self.n = len(pts)
        self.fixed = int(always.sum())
        self.pts = pts[active]
        self.t = t
        self.eps = eps

    def hits(self, p):
        return worst_case_min_dist(self.pts, p, self.eps) < self.t

    def count(self, p):
        return self.fixed + int(np.count_nonzero(self.hits(p)))


def _project(p, anchor, radius):
    off = p - anchor
    norm = math.sqrt(float(off @ off))
    if norm <= radius:
        return p
    return anchor + off * (radius / norm)


def _local_search(obj, start, anchor, cfg, rng):
    s = cfg.search_radius
    p = start
    cur = obj.count(p)
    step = cfg.step_scale * s
    d = p.size
    for _ in range(cfg.local_steps):
        if cur == obj.fixed or step < 1e-6 * max(1.0, s):
            break
        moved = False
        hit = obj.hits(p)
        if np.any(hit):
            # push away from the rows the adversary can currently reach
            away = p - obj.pts[hit].mean(axis=0)
            norm = math.sqrt(float(away @ away))
            if norm > 0:
                cand = _project(p + step * away / norm, anchor, s)
                c = obj.count(cand)
                if c < cur:
                    p, cur, moved = cand, c, True
        if not moved:
            g = normal(rng, d)
            cand = _project(p + step * g / math.sqrt(float(g @ g)), anchor, s)
            c = obj.count(cand)
            if c < cur:
                p, cur, moved = cand, c, True
        if moved:
            step *= 1.25
        else:
            step *= 0.5
    return p, cur


def _pull_towards(obj, p, cur, anchor):
    # tie-break: slide back towards the anchor while the count does not grow
    for frac in (0.0, 0.25, 0.5, 0.75, 0.875, 0.9375):
        cand = anchor + frac * (p - anchor)
        if obj.count(cand) <= cur:
            return cand
    return p


def search_margin_center(anchor, aux_points, cfg, eps):
    """Best-effort argmin of the margin loss over ||p - anchor|| <= s.

    Randomized restarts (the first from the anchor itself) followed by a
    shrinking-step local search that only accepts strictly fewer violations.
    Returns (center, loss). The anchor is always a candidate, so the loss
    never exceeds the loss at the anchor.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    pts = _rows(aux_points)
    obj = _MarginObjective(pts, anchor, cfg.search_radius, cfg.margin_threshold, eps)
    rng = generator(cfg.seed, 11)
    best_p, best_c = anchor, obj.count(anchor)
    best_off = 0.0
    d = anchor.size
    for r in range(cfg.restarts):
        if best_c == obj.fixed:
            # the lower bound is attained; further restarts only refine the tie-break
            break
        if r == 0:
            start = anchor
        else:
            g = normal(rng, d)
            rad = cfg.search_radius * rng.random() ** (1.0 / d)
            start = anchor + rad * g / math.sqrt(float(g @ g))
        p, c = _local_search(obj, start, anchor, cfg, rng)
        if c > best_c:
            continue
        p = _pull_towards(obj, p, c, anchor)
        off = float(np.linalg.norm(p - anchor))
        if c < best_c or off < best_off:
            best_p, best_c, best_off = p, c, off
    return best_p, best_c / obj.n


def fit_margin(intermediate, aux, cfg, eps):
    """Detector with center from the margin search, radius from ``intermediate``."""
    pts = aux.points if isinstance(aux, SampleBatch) else _rows(aux)
    if len(pts) == 0:
        raise ValueError("aux batch is empty")
    center, _ = search_margin_center(intermediate.center, pts, cfg, eps)
    return BallDetector(center, intermediate.radius)


def mine_interval(aux, anchor, interval):
    """Rows whose distance to ``anchor`` lies in [low, high], order preserved."""
    dist = np.sqrt(np.sum((aux.points - np.asarray(anchor, dtype=np.float64)) ** 2, axis=1))
    return aux.subset((dist >= interval.low) & (dist <= interval.high))


def fit_mined(in_data, aux_mix, spec, cfg, interval):
    """fit_in_dist, then mine_interval around the sample mean, then fit_margin on the mined rows.

    Returns (detector, diagnostics).
    """
    inter = fit_in_dist(in_data, spec.gamma_margin)
    mined = mine_interval(aux_mix, inter.center, interval)
    if len(mined) == 0:
        raise ValueError(
            f"no auxiliary rows fall in [{interval.low}, {interval.high}]; widen the interval")
    center, loss = search_margin_center(inter.center, mined.points, cfg, spec.eps)
    diag = {"mined": len(mined), "loss": loss, "intermediate_center": inter.center}
    if mined.components is not None:
        diag["components"] = np.bincount(mined.components.astype(np.int64), minlength=3)
    return BallDetector(center, inter.radius), diag


def fit_ideal_average(in_data, aux_mix, spec, interval):
    inter = fit_in_dist(in_data, spec.gamma_margin)
    mined = mine_interval(aux_mix, inter.center, interval)
    if len(mined) == 0:
        raise ValueError(
            f"no auxiliary rows fall in [{interval.low}, {interval.high}]; widen the interval")
    return BallDetector(mined.points.mean(axis=0), inter.radius)
