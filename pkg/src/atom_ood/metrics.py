"""Detection metrics on OOD scores (higher score = more OOD-like).

A detector flags x as OOD when score(x) >= thr. FNR is the fraction of
in-distribution scores that get flagged, FPR the fraction of OOD scores
that do not.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

FAMILIES = ("natural", "corruption", "linf", "compositional")


def floor_fraction(q, n):
    """floor(q * n), robust to q * n landing a hair below an integer."""
    prod = q * n
    near = round(prod)
    if abs(prod - near) <= 1e-9 * max(1.0, abs(prod)):
        return int(near)
    return int(math.floor(prod))


def _scores(values, what):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass
class ScoreSet:
    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        self.in_scores = _scores(self.in_scores, "in_scores")
        self.out_scores = _scores(self.out_scores, "out_scores")


def threshold_at_fnr(in_scores, fnr_target):
    """Smallest in-score v with #{s >= v} <= floor(target * n); above the max if none.

    Nearest-rank, no interpolation, so FNR = #{s >= thr} / n <= target.
    """
    s = np.sort(_scores(in_scores, "in_scores"))
    if not 0 < fnr_target < 1:
        raise ValueError("fnr_target must lie in (0, 1)")
    n = len(s)
    allowed = floor_fraction(fnr_target, n)
    values, first = np.unique(s, return_index=True)
    ok = np.flatnonzero(n - first <= allowed)
    if ok.size == 0:
        return float(np.nextafter(s[-1], np.inf))
    return float(values[ok[0]])


def fnr_at(in_scores, thr):
    return float(np.mean(np.asarray(in_scores, dtype=np.float64) >= thr))


def fpr_at_fnr(scores, fnr_target=0.05):
    """Fraction of OOD scores strictly below the in-data threshold."""
    thr = threshold_at_fnr(scores.in_scores, fnr_target)
    return float(np.mean(scores.out_scores < thr))


def auroc(scores):
    """P(out > in) + P(out == in) / 2, via integer midrank sums."""
    a, b = scores.in_scores, scores.out_scores
    n_in, n_out = len(a), len(b)
    both = np.concatenate([a, b])
    order = np.argsort(both, kind="stable")
    ranked = both[order]
    # doubled midranks (integers): first + last + 2 for each tie group, 0-based positions
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], len(ranked)] - 1
    group = np.repeat(np.arange(len(starts)), ends - starts + 1)
    rank2 = np.empty(len(both), dtype=np.int64)
    rank2[order] = (starts + ends + 2)[group]
    r2_out = int(rank2[n_in:].sum())
    twice_u = r2_out - n_out * (n_out + 1)
    return float(Fraction(twice_u, 2 * n_in * n_out))


@dataclass
class EvalReport:
    """Per-family FPR@FNR and AUROC plus the digests they were produced under.

    ``protocol_digest`` identifies the evaluation protocol (test sets and
    attack settings); reports are comparable only when it matches.
    """

    families: dict = field(default_factory=dict)
    config_digest: str = ""
    protocol_digest: str = ""

    def add(self, family, scores, attack_config_digest="", fnr_target=0.05):
        self.families[family] = {
            "fpr_at_5fnr": fpr_at_fnr(scores, fnr_target),
            "auroc": auroc(scores),
            "n_in": int(len(scores.in_scores)),
            "n_out": int(len(scores.out_scores)),
            "attack_config_digest": attack_config_digest,
        }

    def to_dict(self):
        out = {k: dict(v) for k, v in self.families.items()}
        out["config_digest"] = self.config_digest
        out["protocol_digest"] = self.protocol_digest
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        digest = obj.pop("config_digest", "")
        protocol = obj.pop("protocol_digest", "")
        return cls({k: dict(v) for k, v in obj.items()}, digest, protocol)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
