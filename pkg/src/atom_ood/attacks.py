"""OOD evaluation attacks: white-box L-inf PGD, black-box corruption search, and both composed.

White-box attacks push an OOD input towards looking in-distribution:

* ``attack_kplus1`` maximizes -log F(x')_{K+1} (for (K+1)-way detectors);
* ``attack_uniform_conf`` maximizes -(1/K) sum_i log F(x')_i over the first K
  outputs (for confidence-based detectors).

The clean input is always a candidate, so the objective at the returned
point is never below its clean value. Per-sample randomness is keyed by
(seed, restart, sample id), so results do not depend on batching.
"""

import csv
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nn_model, pgd
from .rng import generator, normal

CORRUPTION_TYPES = ("gaussian_noise", "uniform_noise", "scaling", "dropout_to_mean", "smoothing")


@dataclass(frozen=True)
class AttackConfig:
    eps: float = 8 / 255
    steps: int = 40
    step_size: float = 1 / 255
    restarts: int = 1
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.eps >= 0 or not self.step_size >= 0 or self.steps < 0:
            raise ValueError("eps, step_size and steps must be nonnegative")

    @classmethod
    def strong(cls, **kw):
        """100 iterations with 5 random restarts."""
        return cls(**{"steps": 100, "restarts": 5, "random_start": True, **kw})

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class CorruptionFamily:
    """Five vector corruptions at five severities each.

    ``scale`` sets the magnitude of additive noise; ``center`` is the point
    scaling and dropout move towards. Severity levels are increasing
    magnitudes for every type.
    """

    scale: float = 1.0
    center: tuple = ()
    types: tuple = CORRUPTION_TYPES
    noise_levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    shrink_levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    drop_levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    smooth_levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)

    def __post_init__(self):
        unknown = set(self.types) - set(CORRUPTION_TYPES)
        if unknown:
            raise ValueError(f"unknown corruption types {sorted(unknown)}")
        for levels in (self.noise_levels, self.shrink_levels, self.drop_levels, self.smooth_levels):
            if list(levels) != sorted(levels) or min(levels) < 0:
                raise ValueError("severity levels must be nonnegative and increasing")
        if max(self.shrink_levels) > 1 or max(self.drop_levels) > 1 or max(self.smooth_levels) > 1:
            raise ValueError("shrink/drop/smooth levels must not exceed 1")

    @property
    def size(self):
        return len(self.types) * 5

    def variant_names(self):
        return [f"{t}@{s + 1}" for t in self.types for s in range(5)]

    def apply(self, x, seed, ids=None):
        """All variants of every row: array (size, n, d), rows keyed by ids."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        ids = np.arange(n) if ids is None else np.asarray(ids)
        center = np.zeros(d) if len(self.center) == 0 else np.asarray(self.center, dtype=np.float64)
        # per-row draws: 5 gaussian, 5 uniform, 5 dropout masks, each d wide
        gauss = np.empty((5, n, d))
        unif = np.empty((5, n, d))
        drop = np.empty((5, n, d))
        for j, i in enumerate(ids):
            rng = generator(seed, 81, int(i))
            gauss[:, j] = normal(rng, (5, d))
            u = rng.random((2, 5, d))
            unif[:, j] = 2.0 * u[0] - 1.0
            drop[:, j] = u[1]
        out = []
        for t in self.types:
            for s in range(5):
                if t == "gaussian_noise":
                    v = x + self.scale * self.noise_levels[s] * gauss[s]
                elif t == "uniform_noise":
                    v = x + self.scale * self.noise_levels[s] * unif[s]
                elif t == "scaling":
                    v = center + (1.0 - self.shrink_levels[s]) * (x - center)
                elif t == "dropout_to_mean":
                    v = np.where(drop[s] < self.drop_levels[s], center, x)
                else:
                    nb = 0.5 * (np.roll(x, 1, axis=1) + np.roll(x, -1, axis=1))
                    v = (1.0 - self.smooth_levels[s]) * x + self.smooth_levels[s] * nb
                out.append(v)
        return np.stack(out)


def _ids(x, ids):
    return np.arange(len(x)) if ids is None else np.asarray(ids)


def _white_box(model, x, cfg, box, objective, ids):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    ids = _ids(x, ids)
    if cfg.eps == 0:
        return x[0].copy() if single else x.copy()
    lo, hi = pgd.linf_bounds(x, cfg.eps, box)
    best, best_val = None, None
    for r in range(cfg.restarts):
        start = None
        if cfg.random_start:
            u = np.stack([generator(cfg.seed, 71, r, int(i)).random(x.shape[1]) for i in ids])
            start = np.clip(lo + u * (hi - lo), lo, hi)
        pt, val = pgd.ascend(model, x, objective, cfg.eps, cfg.steps, cfg.step_size, box, start)
        if best is None:
            best, best_val = pt, val
        else:
            better = val > best_val
            best[better] = pt[better]
            best_val[better] = val[better]
    return best[0] if single else best


def kplus1_objective(model):
    return pgd.ce_objective(model.num_classes)


def attack_kplus1(model, x, cfg, box=None, ids=None):
    """PGD on -log F(x')_{K+1}: lowers the OOD score inside the eps-ball and box."""
    return _white_box(model, x, cfg, box, kplus1_objective(model), ids)


def attack_uniform_conf(model, x, cfg, box=None, ids=None):
    """PGD on -(1/K) sum_{i<=K} log F(x')_i."""
    return _white_box(model, x, cfg, box, pgd.uniform_conf_objective(model.num_classes), ids)


def objective_values(model, x, objective):
    return nn_model.input_grad_from_logits(model, np.atleast_2d(x), objective)[0]


def corruption_attack(scorer, x, family, seed, ids=None, box=None, return_index=False):
    """Lowest-score candidate among the clean input and its corrupted variants.

    Only ``scorer`` (points -> OOD scores) is used. Ties go to the earliest
    candidate, the clean input first. With ``box``, variants are clipped
    into it.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    cands = np.concatenate([x[None], family.apply(x, seed, _ids(x, ids))])
    if box is not None:
        lo, hi = pgd.as_box(box, x.shape[1])
        cands[1:] = np.clip(cands[1:], lo, hi)
    m, n, d = cands.shape
    scores = np.asarray(scorer(cands.reshape(m * n, d)), dtype=np.float64).reshape(m, n)
    pick = np.argmin(scores, axis=0)
    out = cands[pick, np.arange(n)]
    if single:
        out, pick = out[0], pick[0]
    return (out, pick) if return_index else out


def compositional_attack(model, x, family, cfg, box=None, ids=None):
    """Corruption search, then attack_kplus1 in the eps-ball around the corrupted point."""
    scorer = lambda pts: nn_model.ood_score(model, pts)
    xc = corruption_attack(scorer, x, family, cfg.seed, ids, box)
    return attack_kplus1(model, xc, cfg, box, ids)


@dataclass
class AttackRecord:
    sample_id: int
    family: str
    clean_score: float
    attacked_score: float
    linf_norm_used: float


def attack_records(family, ids, clean, attacked, clean_scores, attacked_scores):
    norms = np.max(np.abs(np.atleast_2d(attacked) - np.atleast_2d(clean)), axis=1)
    return [AttackRecord(int(i), family, float(c), float(a), float(n))
            for i, c, a, n in zip(ids, clean_scores, attacked_scores, norms)]


def write_attack_csv(records, path, digest=None):
    """One row per record; with ``digest`` the first line is a ``# config_digest=`` comment."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if digest is not None:
            fh.write(f"# config_digest={digest}\n")
        w = csv.writer(fh)
        w.writerow(["sample_id", "family", "clean_score", "attacked_score", "linf_norm_used"])
        for r in records:
            w.writerow([r.sample_id, r.family, repr(r.clean_score), repr(r.attacked_score),
                        repr(r.linf_norm_used)])


def read_attack_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [AttackRecord(int(r["sample_id"]), r["family"], float(r["clean_score"]),
                         float(r["attacked_score"]), float(r["linf_norm_used"])) for r in rows]
