"""Outlier-mining adversarial training and its ablations.

Each epoch draws N auxiliary rows, ranks them by clean OOD score and keeps
the slice starting at rank floor(qN) (mining), then runs one pass of SGD on

    mean CE(in-batch) + lambda * mean CE(outlier batch, label K+1)

where the first ceil(half) rows of every outlier minibatch are replaced by
their PGD maximizers. The variants differ only in the two switches:

    ATOM       mining, PGD
    NTOM       mining, no PGD
    AT_RANDOM  uniform random outliers, PGD
    PLAIN      uniform random outliers (or none), no PGD
"""

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn_model, pgd
from .metrics import floor_fraction
from .rng import derive_seed, generator
from .synth_data import SampleBatch


class Variant(enum.Enum):
    ATOM = "ATOM"
    NTOM = "NTOM"
    AT_RANDOM = "AT_RANDOM"
    PLAIN = "PLAIN"

    @property
    def mines(self):
        return self in (Variant.ATOM, Variant.NTOM)

    @property
    def adversarial(self):
        return self in (Variant.ATOM, Variant.AT_RANDOM)


@dataclass(frozen=True)
class MiningConfig:
    pool_draw: int
    selected: int
    quantile: float = 0.0
    epochs: int = 1

    def __post_init__(self):
        if self.pool_draw < 1 or self.selected < 1:
            raise ValueError("pool_draw and selected must be positive")
        if self.selected > self.pool_draw:
            raise ValueError("selected must not exceed pool_draw")
        if not 0.0 <= self.quantile <= 1.0:
            raise ValueError("quantile must lie in [0, 1]")
        if self.start + self.selected > self.pool_draw:
            raise ValueError("floor(q*N) + n exceeds N")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")

    @property
    def start(self):
        return floor_fraction(self.quantile, self.pool_draw)


@dataclass(frozen=True)
class PgdConfig:
    eps: float = 8 / 255
    steps: int = 5
    step_size: float = 2 / 255
    random_start: bool = True

    def __post_init__(self):
        if not self.eps >= 0 or not self.step_size >= 0 or self.steps < 0:
            raise ValueError("eps, step_size and steps must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant = Variant.ATOM
    lam: float = 1.0
    pgd: PgdConfig = field(default_factory=PgdConfig)
    lr: float = 0.1
    lr_milestones: tuple = (0.5, 0.75, 0.9)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_in: int = 64
    batch_out: int = 128
    hidden: tuple = (64, 64)
    activation: str = "relu"
    box: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if self.batch_in < 1 or self.batch_out < 1:
            raise ValueError("batch sizes must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @property
    def uses_pgd(self):
        return self.variant.adversarial and self.pgd.eps > 0

    def lr_at(self, epoch, epochs):
        drops = sum(epoch >= math.floor(f * epochs) for f in self.lr_milestones)
        return self.lr * self.lr_decay ** drops


def _scorer(model_or_fn):
    if isinstance(model_or_fn, nn_model.MlpModel):
        return lambda x: nn_model.ood_score(model_or_fn, x)
    return model_or_fn


def draw_pool(pool, count, seed, epoch):
    """Indices of ``count`` pool rows drawn without replacement for one epoch."""
    if len(pool) < count:
        raise ValueError(f"pool has {len(pool)} rows, fewer than the {count} to draw")
    return generator(seed, 31, epoch).choice(len(pool), size=count, replace=False)


def mine_outliers(model, pool, cfg, seed=0, epoch=0, return_scores=False):
    """Draw N pool rows, sort by clean OOD score (stable, ascending), keep [floor(qN), floor(qN)+n).

    ``model`` is an MlpModel or any callable mapping a point matrix to scores.
    """
    idx = draw_pool(pool, cfg.pool_draw, seed, epoch)
    scores = np.asarray(_scorer(model)(pool.points[idx]), dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    keep = order[cfg.start:cfg.start + cfg.selected]
    mined = pool.subset(idx[keep])
    return (mined, scores[keep]) if return_scores else mined


def random_outliers(model, pool, cfg, seed=0, epoch=0, return_scores=False):
    """The unmined counterpart: the first n rows of the epoch's random draw."""
    idx = draw_pool(pool, cfg.pool_draw, seed, epoch)[:cfg.selected]
    batch = pool.subset(idx)
    if not return_scores:
        return batch
    return batch, np.asarray(_scorer(model)(batch.points), dtype=np.float64)


def pgd_inner_max(model, x, pgd_cfg, box=None, target_label=None, rng=None):
    """Maximize CE(x', target) over the eps-ball (and box) around each row of x.

    Signed-gradient steps with projection; optional uniform random start
    drawn from ``rng``. The returned row is the best of x, the start and
    all iterates, so its loss is never below the loss at x.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    target = model.num_classes + 1 if target_label is None else int(target_label)
    if not 1 <= target <= model.num_classes + 1:
        raise ValueError("target label out of range")
    if pgd_cfg.eps == 0:
        return x[0].copy() if single else x.copy()
    start = None
    if pgd_cfg.random_start:
        rng = generator(0, 41) if rng is None else rng
        start = pgd.uniform_in_bounds(rng, *pgd.linf_bounds(x, pgd_cfg.eps, box))
    best, _ = pgd.ascend(model, x, pgd.ce_objective(target - 1), pgd_cfg.eps,
                         pgd_cfg.steps, pgd_cfg.step_size, box, start)
    return best[0] if single else best


@dataclass
class EpochStats:
    epoch: int
    in_loss: float
    out_loss: float
    steps: int


def _add(a, b, scale):
    return nn_model.GradBundle(
        a.loss + scale * b.loss,
        [x + scale * y for x, y in zip(a.weights, b.weights)],
        [x + scale * y for x, y in zip(a.biases, b.biases)],
    )


def train_epoch(model, in_data, out_data, cfg, velocity=None, epoch=0, lr=None):
    """One shuffled pass over in_data; returns (model, velocity, EpochStats).

    Outlier minibatches cycle through the (shuffled) out_data; when out_data
    is None or empty the objective is the in-distribution CE alone.
    """
    if in_data is None or len(in_data) == 0:
        raise ValueError("in-distribution data is empty")
    if in_data.labels is None:
        raise ValueError("in-distribution data needs labels")
    lr = cfg.lr if lr is None else lr
    k1 = model.num_classes + 1
    in_order = generator(cfg.seed, 51, epoch).permutation(len(in_data))
    has_out = out_data is not None and len(out_data) > 0
    if has_out:
        out_order = generator(cfg.seed, 52, epoch).permutation(len(out_data))
        out_pts = out_data.points[out_order]
        pgd_rng = generator(cfg.seed, 53, epoch)
    steps = math.ceil(len(in_data) / cfg.batch_in)
    in_sum = out_sum = 0.0
    for b in range(steps):
        rows = in_order[b * cfg.batch_in:(b + 1) * cfg.batch_in]
        grads = nn_model.loss_grad(model, in_data.points[rows], in_data.labels[rows])
        in_sum += grads.loss
        if has_out:
            pos = np.arange(b * cfg.batch_out, (b + 1) * cfg.batch_out) % len(out_pts)
            xo = out_pts[pos]
            if cfg.uses_pgd:
                half = (len(xo) + 1) // 2
                xo = xo.copy()
                xo[:half] = pgd_inner_max(model, xo[:half], cfg.pgd, cfg.box, k1, pgd_rng)
            g_out = nn_model.loss_grad(model, xo, np.full(len(xo), k1))
            out_sum += g_out.loss
            if cfg.lam != 0:
                grads = _add(grads, g_out, cfg.lam)
        model, velocity = nn_model.sgd_step(model, grads, lr, cfg.momentum,
                                            cfg.weight_decay, velocity)
    out_loss = out_sum / steps if has_out else None
    return model, velocity, EpochStats(epoch, in_sum / steps, out_loss, steps)


def initial_model(in_data, cfg):
    k = int(in_data.labels.max())
    dims = (in_data.dim, *cfg.hidden, k + 1)
    return nn_model.init_mlp(dims, cfg.activation, seed=derive_seed(cfg.seed, 61))


def train(in_data, aux_pool, mining, cfg, model=None, history_path=None):
    """Run ``mining.epochs`` epochs of select-then-train; returns (model, history).

    history has one dict per epoch with the mean losses and the clean OOD
    score summary (min/median/max/mean) of that epoch's outlier set, scored
    by the model as it was when the set was selected.
    """
    model = initial_model(in_data, cfg) if model is None else model
    velocity = None
    history = []
    has_pool = aux_pool is not None and len(aux_pool) > 0
    if cfg.variant.mines and not has_pool:
        raise ValueError(f"{cfg.variant.value} needs an auxiliary pool")
    for epoch in range(mining.epochs):
        record = {"epoch": epoch}
        out = None
        if has_pool:
            select = mine_outliers if cfg.variant.mines else random_outliers
            out, scores = select(model, aux_pool, mining, cfg.seed, epoch, return_scores=True)
            out = SampleBatch(out.points, np.full(len(out), model.num_classes + 1),
                              out.source_tag, out.components)
        lr = cfg.lr_at(epoch, mining.epochs)
        model, velocity, stats = train_epoch(model, in_data, out, cfg, velocity, epoch, lr)
        record["in_loss"] = stats.in_loss
        record["out_loss"] = stats.out_loss
        if out is not None:
            record.update(mined_score_min=float(scores.min()),
                          mined_score_median=float(np.median(scores)),
                          mined_score_max=float(scores.max()),
                          mined_score_mean=float(scores.mean()))
        history.append(record)
    if history_path is not None:
        write_history(history, history_path)
    return model, history


def write_history(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def read_history(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def with_variant(cfg, variant):
    return replace(cfg, variant=Variant(variant))
