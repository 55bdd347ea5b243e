"""2-D toy ablation: train the four variants on shared data and evaluate four OOD families.

Data per seed: two Gaussian classes, an auxiliary pool that is mostly
"easy" outliers on a far annulus plus a small fraction of informative
outliers on a near annulus, and a natural OOD test set on the near annulus.
"""

import hashlib
import math
import os

import numpy as np

from .. import attacks, metrics, nn_model
from .. import synth_data as sd
from .. import trainer as tr
from ..rng import derive_seed, generator
from .io import ensure_dir, write_json, write_table

# data role keys for derive_seed(seed, role)
_TRAIN, _NEAR, _FAR, _TEST_IN, _TEST_OOD, _VAL_IN, _HOLDOUT = 1, 2, 3, 4, 5, 6, 7

HIST_BINS = 50


def toy_config(cfg):
    means = np.asarray(cfg.toy_means, dtype=np.float64).reshape(-1, 2)
    return sd.ToyConfig(tuple(map(tuple, means)), cfg.toy_sigma, tuple(cfg.test_annulus))


def build_data(cfg, seed):
    """Training, pool and test batches for one seed."""
    tcfg = toy_config(cfg)
    sd.check_annulus(tcfg, *cfg.near_annulus)
    sd.check_annulus(tcfg, *cfg.far_annulus)
    n_near = int(round(cfg.pool_size * cfg.pool_near_frac))
    n_far = cfg.pool_size - n_near
    if n_near < 1 or n_far < 1:
        raise ValueError("pool_near_frac must leave both pool parts nonempty")
    near = sd.sample_annulus(*cfg.near_annulus, n_near, derive_seed(seed, _NEAR))
    far = sd.sample_annulus(*cfg.far_annulus, n_far, derive_seed(seed, _FAR))
    # component 0 = informative (near), 1 = easy (far)
    pool = sd.SampleBatch(np.vstack([near.points, far.points]), source_tag=sd.SourceTag.TOY2D,
                          components=np.r_[np.zeros(n_near, np.int8), np.ones(n_far, np.int8)])
    return {
        "train": sd.sample_toy2d(tcfg, cfg.count_per_class, derive_seed(seed, _TRAIN)),
        "pool": pool,
        "test_in": sd.sample_toy2d(tcfg, cfg.test_in_per_class, derive_seed(seed, _TEST_IN)),
        "test_ood": sd.sample_annulus(*cfg.test_annulus, cfg.test_ood_count,
                                      derive_seed(seed, _TEST_OOD)),
    }


def infer_box(in_points, aux_points, pad):
    """Valid input box: data range of in-data and pool, widened by pad in-data std devs."""
    allp = np.vstack([in_points, aux_points])
    spread = pad * in_points.std(axis=0)
    return allp.min(axis=0) - spread, allp.max(axis=0) + spread


def train_config(cfg, variant, seed, box):
    pgd_cfg = tr.PgdConfig(cfg.train_eps, cfg.train_steps, cfg.train_step_size,
                           cfg.train_random_start)
    return tr.TrainConfig(variant=variant, lam=cfg.lam, pgd=pgd_cfg, lr=cfg.lr,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                          batch_in=cfg.batch_in, batch_out=cfg.batch_out,
                          hidden=tuple(cfg.hidden), activation=cfg.activation,
                          box=box, seed=seed)


def mining_config(cfg, quantile=None):
    q = cfg.quantile if quantile is None else quantile
    return tr.MiningConfig(cfg.pool_draw, cfg.selected, q, cfg.epochs)


def attack_config(cfg, seed):
    kw = dict(eps=cfg.attack_eps, step_size=cfg.attack_step_size,
              random_start=cfg.attack_random_start, seed=seed)
    if cfg.strong_attack:
        return attacks.AttackConfig.strong(**kw)
    return attacks.AttackConfig(steps=cfg.attack_steps, restarts=cfg.attack_restarts, **kw)


def corruption_family(cfg, in_points):
    return attacks.CorruptionFamily(scale=cfg.corruption_scale,
                                    center=tuple(float(v) for v in in_points.mean(axis=0)))


def _box_list(box):
    return None if box is None else [[float(v) for v in box[0]], [float(v) for v in box[1]]]


def _box_from(obj):
    return None if obj is None else (np.asarray(obj[0], dtype=np.float64),
                                     np.asarray(obj[1], dtype=np.float64))


def attacked_sets(model, test_in, test_ood, cfg, seed, box):
    """Clean in-points and the OOD test set under each family: {family: points}."""
    acfg = attack_config(cfg, seed)
    fam = corruption_family(cfg, test_in)
    scorer = lambda pts: nn_model.ood_score(model, pts)
    return acfg, {
        "natural": test_ood,
        "corruption": attacks.corruption_attack(scorer, test_ood, fam, seed, box=box),
        "linf": attacks.attack_kplus1(model, test_ood, acfg, box),
        "compositional": attacks.compositional_attack(model, test_ood, fam, acfg, box),
    }


def evaluate(model, test_in, test_ood, cfg, seed, box):
    """EvalReport over the four families plus the raw scores per family."""
    if len(test_ood) == 0:
        raise ValueError("OOD test set is empty")
    if len(test_in) == 0:
        raise ValueError("in-distribution test set is empty")
    in_scores = nn_model.ood_score(model, test_in)
    acfg, sets = attacked_sets(model, test_in, test_ood, cfg, seed, box)
    report = metrics.EvalReport(config_digest=cfg.digest(), protocol_digest=cfg.protocol_digest())
    corr = _corruption_digest(cfg)
    both = hashlib.sha256((acfg.digest() + corr).encode()).hexdigest()
    fam_digest = {"natural": "", "corruption": corr, "linf": acfg.digest(), "compositional": both}
    scores = {}
    for family in metrics.FAMILIES:
        out_scores = nn_model.ood_score(model, sets[family])
        scores[family] = out_scores
        report.add(family, metrics.ScoreSet(in_scores, out_scores), fam_digest[family],
                   cfg.fnr_target)
    return report, in_scores, scores


def _corruption_digest(cfg):
    return hashlib.sha256(f"corruption:scale={cfg.corruption_scale!r}".encode()).hexdigest()


def lattice_rows(model, cfg):
    """(x, y, ood_score, predicted label) on a square lattice for boundary plots."""
    ticks = np.linspace(-cfg.lattice_extent, cfg.lattice_extent, cfg.lattice_n)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    p = nn_model.forward_softmax(model, pts)
    labels = np.argmax(p[:, :-1], axis=1) + 1
    return [(float(x), float(y), float(s), int(lab))
            for (x, y), s, lab in zip(pts, p[:, -1], labels)]


def histogram_rows(in_scores, family_scores):
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    in_counts = np.histogram(in_scores, edges)[0]
    rows = []
    for family in metrics.FAMILIES:
        out_counts = np.histogram(family_scores[family], edges)[0]
        for i in range(HIST_BINS):
            rows.append((family, float(edges[i]), float(edges[i + 1]),
                         int(in_counts[i]), int(out_counts[i])))
    return rows


def save_model(model, path, cfg, variant, seed, box):
    meta = {"config_digest": cfg.digest(), "variant": variant, "seed": seed,
            "box": _box_list(box)}
    nn_model.save_checkpoint(model, path, meta=meta)


def load_model(path):
    return nn_model.load_checkpoint(path), _box_from(nn_model.checkpoint_meta(path).get("box"))


def q_sweep(cfg, seed, data, box):
    """Pick q for ATOM on a held-out pool split, scored by L-inf FPR on that split."""
    pool = data["pool"]
    order = generator(seed, _HOLDOUT).permutation(len(pool))
    hold, rest = order[:cfg.q_holdout], np.sort(order[cfg.q_holdout:])
    val_in = sd.sample_toy2d(toy_config(cfg), max(1, cfg.test_in_per_class // 2),
                             derive_seed(seed, _VAL_IN))
    val_ood = pool.points[np.sort(hold)]
    acfg = attack_config(cfg, seed)
    rows = []
    for q in cfg.q_grid:
        model, _ = tr.train(data["train"], pool.subset(rest), mining_config(cfg, q),
                            train_config(cfg, "ATOM", seed, box))
        in_scores = nn_model.ood_score(model, val_in.points)
        adv = attacks.attack_kplus1(model, val_ood, acfg, box)
        fpr = metrics.fpr_at_fnr(metrics.ScoreSet(in_scores, nn_model.ood_score(model, adv)),
                                 cfg.fnr_target)
        rows.append({"q": q, "val_linf_fpr": fpr})
    best = min(rows, key=lambda r: (r["val_linf_fpr"], r["q"]))
    return {"grid": rows, "selected_q": best["q"]}


def ordering_checks(fam):
    """Per-seed checks; ``fam[variant][family]`` is FPR@FNR."""
    out = {}
    if all(v in fam for v in ("ATOM", "AT_RANDOM", "NTOM")):
        a, r, n = fam["ATOM"], fam["AT_RANDOM"], fam["NTOM"]
        out["atom_beats_at_random_linf"] = a["linf"] < r["linf"]
        out["atom_beats_ntom_linf"] = a["linf"] < n["linf"]
        out["ntom_natural_within_5pts"] = abs(n["natural"] - a["natural"]) <= 0.05
        out["ordering"] = all(out.values())
    if "PLAIN" in fam and len(fam) > 1:
        out["plain_worst_linf"] = all(fam["PLAIN"]["linf"] >= f["linf"]
                                      for v, f in fam.items() if v != "PLAIN")
    return out


def run_toy(cfg, out_dir):
    """Train and evaluate every (seed, variant); write artifacts and return the summary."""
    digest = cfg.digest()
    per_seed = []
    for seed in cfg.toy_seeds:
        data = build_data(cfg, seed)
        box = infer_box(data["train"].points, data["pool"].points, cfg.box_pad)
        sdir = ensure_dir(os.path.join(out_dir, f"seed{seed}"))
        fam, hist_mean = {}, {}
        for variant in cfg.variants:
            model, history = tr.train(data["train"], data["pool"], mining_config(cfg),
                                      train_config(cfg, variant, seed, box))
            save_model(model, os.path.join(sdir, f"{variant}.model.json"), cfg, variant, seed, box)
            report, in_scores, scores = evaluate(model, data["test_in"].points,
                                                 data["test_ood"].points, cfg, seed, box)
            report.save(os.path.join(sdir, f"{variant}.eval.json"))
            write_json(os.path.join(sdir, f"{variant}.history.json"), {"epochs": history}, digest)
            write_table(os.path.join(sdir, f"{variant}.lattice.csv"),
                        ["x", "y", "ood_score", "label"], lattice_rows(model, cfg), digest)
            write_table(os.path.join(sdir, f"{variant}.hist.csv"),
                        ["family", "bin_lo", "bin_hi", "in_count", "out_count"],
                        histogram_rows(in_scores, scores), digest)
            fam[variant] = {f: report.families[f]["fpr_at_5fnr"] for f in metrics.FAMILIES}
            acc = float(np.mean(nn_model.predict_label(model, data["test_in"].points)
                                == data["test_in"].labels))
            hist_mean[variant] = {"test_accuracy": acc}
        entry = {"seed": seed, "fpr_at_5fnr": fam, "diagnostics": hist_mean,
                 "checks": ordering_checks(fam)}
        if cfg.q_sweep:
            entry["q_sweep"] = q_sweep(cfg, seed, data, box)
        per_seed.append(entry)
    return summarize(cfg, per_seed)


def summarize(cfg, per_seed):
    variants = list(cfg.variants)
    mean = {v: {f: float(np.mean([s["fpr_at_5fnr"][v][f] for s in per_seed]))
                for f in metrics.FAMILIES} for v in variants}
    checks = {}
    n_seeds = len(per_seed)
    if all("ordering" in s["checks"] for s in per_seed):
        held = sum(s["checks"]["ordering"] for s in per_seed)
        checks["ordering_seeds"] = held
        checks["ordering_in_80pct_seeds"] = held >= math.ceil(0.8 * n_seeds - 1e-9)
        mc = ordering_checks(mean)
        checks["mean_atom_beats_at_random_linf"] = mc["atom_beats_at_random_linf"]
        checks["mean_atom_beats_ntom_linf"] = mc["atom_beats_ntom_linf"]
        checks["mean_ntom_natural_within_5pts"] = mc["ntom_natural_within_5pts"]
    if "PLAIN" in mean and len(mean) > 1:
        checks["mean_plain_worst_linf"] = ordering_checks(mean)["plain_worst_linf"]
    passed = all(v for k, v in checks.items() if k != "ordering_seeds")
    return {"seeds": per_seed, "mean_fpr_at_5fnr": mean, "checks": checks, "passed": passed}
