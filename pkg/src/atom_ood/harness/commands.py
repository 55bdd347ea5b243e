"""Subcommand implementations. Each takes a resolved config and returns an exit code."""

import hashlib
import os

import numpy as np

from .. import attacks, metrics, nn_model
from .. import synth_data as sd
from .. import trainer as tr
from . import theory, toy
from .config import ConfigError
from .io import ensure_dir, read_json, write_json, write_table

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


def _out(cfg, *parts):
    return os.path.join(ensure_dir(cfg.out), *parts)


def _read(path, what):
    try:
        return sd.read_dataset(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from None


def _load_checkpoint(path):
    try:
        return toy.load_model(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {path} is malformed: {exc}") from None


def _check_dim(model, batch, path):
    if batch.dim != model.input_dim:
        raise ConfigError(f"dimension mismatch: checkpoint expects dim {model.input_dim}, "
                          f"{path} has dim {batch.dim}")


def _eval_inputs(cfg):
    model, box = _load_checkpoint(cfg.checkpoint)
    test_in = _read(cfg.in_test, "in_test")
    test_ood = _read(cfg.ood_test, "ood_test")
    _check_dim(model, test_in, cfg.in_test)
    _check_dim(model, test_ood, cfg.ood_test)
    if len(test_ood) == 0:
        raise ConfigError(f"{cfg.ood_test} has 0 OOD samples; nothing to evaluate")
    if len(test_in) == 0:
        raise ConfigError(f"{cfg.in_test} has 0 in-distribution samples")
    return model, box, test_in, test_ood


def cmd_gen(cfg):
    """Materialize one sampler to a dataset file plus a manifest."""
    seed = cfg.seed
    if cfg.sampler == "toy2d":
        tcfg = toy.toy_config(cfg)
        batch = sd.sample_toy2d(tcfg, cfg.count, seed)
        spec = {"class_means": [list(m) for m in tcfg.class_means], "sigma": tcfg.sigma,
                "count_per_class": cfg.count}
    elif cfg.sampler == "annulus":
        batch = sd.sample_annulus(*cfg.test_annulus, cfg.count, seed)
        spec = {"annulus": list(cfg.test_annulus), "dim": 2}
    else:
        gspec = theory.spec_from_config(cfg)
        spec = gspec.to_dict()
        if cfg.sampler == "in_dist":
            batch = sd.sample_in_dist(gspec, cfg.count, seed)
        elif cfg.sampler == "aux_sphere":
            batch = sd.sample_aux_sphere(gspec, cfg.count, seed)
        elif cfg.sampler == "aux_mixture":
            batch = sd.sample_aux_mixture(gspec, cfg.count, seed)
        else:
            radius = (cfg.shell_factor * gspec.tau if cfg.shell_radius == "auto"
                      else cfg.shell_radius)
            spec["shell_radius"] = radius
            batch = sd.sample_ood_shell(gspec, radius, cfg.count, seed)
    ext = "bin" if cfg.format == "bin" else "csv"
    path = _out(cfg, f"{cfg.sampler}.{ext}")
    (sd.write_binary if ext == "bin" else sd.write_csv)(batch, path)
    with open(path, "rb") as fh:
        file_digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {"sampler": cfg.sampler, "spec": spec, "seed": seed, "digest": file_digest,
                "file": os.path.basename(path), "count": len(batch), "dim": batch.dim}
    if batch.components is not None:
        manifest["components"] = [int(v) for v in np.bincount(
            batch.components.astype(np.int64), minlength=3)]
    write_json(_out(cfg, f"{cfg.sampler}.manifest.json"), manifest, cfg.digest())
    print(f"wrote {path} ({len(batch)} rows, dim {batch.dim})")
    return EXIT_OK


def cmd_theory(cfg):
    report = theory.theory_report(cfg)
    path = write_json(_out(cfg, "theory_report.json"), report, cfg.digest())
    for name, sec in report["props"].items():
        state = "PASS" if sec["passed"] else ("INFEASIBLE" if sec["status"] == "infeasible"
                                              else "FAIL")
        print(f"{name}: {state} {sec['checks'] or sec.get('violated')}")
    print(f"wrote {path}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_toy(cfg):
    summary = toy.run_toy(cfg, ensure_dir(cfg.out))
    path = write_json(_out(cfg, "toy_summary.json"), summary, cfg.digest())
    for name, value in summary["checks"].items():
        print(f"{name}: {value}")
    print(f"wrote {path}")
    return EXIT_OK if summary["passed"] else EXIT_CHECK


def cmd_train(cfg):
    train = _read(cfg.in_data, "in_data")
    if train.labels is None:
        raise ConfigError(f"{cfg.in_data} has no labels")
    pool = _read(cfg.aux_pool, "aux_pool") if cfg.aux_pool else None
    variant = tr.Variant(cfg.variant)
    if variant.mines and pool is None:
        raise ConfigError(f"variant {cfg.variant} needs aux_pool")
    if pool is not None and pool.dim != train.dim:
        raise ConfigError(f"dimension mismatch: in_data has dim {train.dim}, "
                          f"aux_pool has dim {pool.dim}")
    aux_pts = pool.points if pool is not None else train.points
    box = toy.infer_box(train.points, aux_pts, cfg.box_pad)
    mining = toy.mining_config(cfg)
    if pool is not None and len(pool) < mining.pool_draw:
        raise ConfigError(f"aux_pool has {len(pool)} rows; pool_draw is {mining.pool_draw}")
    model, history = tr.train(train, pool, mining, toy.train_config(cfg, cfg.variant, cfg.seed, box))
    path = _out(cfg, f"{cfg.variant}.model.json")
    toy.save_model(model, path, cfg, cfg.variant, cfg.seed, box)
    write_json(_out(cfg, f"{cfg.variant}.history.json"), {"epochs": history}, cfg.digest())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(cfg):
    model, box, test_in, test_ood = _eval_inputs(cfg)
    report, _, _ = toy.evaluate(model, test_in.points, test_ood.points, cfg, cfg.seed, box)
    stem = os.path.splitext(os.path.basename(cfg.checkpoint))[0].replace(".model", "")
    path = _out(cfg, f"{stem}.eval.json")
    report.save(path)
    for fam in metrics.FAMILIES:
        r = report.families[fam]
        print(f"{fam}: fpr_at_5fnr={r['fpr_at_5fnr']:.4f} auroc={r['auroc']:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_attack(cfg):
    """Attack the OOD test set with one family and dump per-sample records."""
    model, box, test_in, test_ood = _eval_inputs(cfg)
    if cfg.attack_family == "natural":
        adv = test_ood.points
    else:
        _, sets = toy.attacked_sets(model, test_in.points, test_ood.points, cfg, cfg.seed, box)
        adv = sets[cfg.attack_family]
    clean = nn_model.ood_score(model, test_ood.points)
    attacked = nn_model.ood_score(model, adv)
    recs = attacks.attack_records(cfg.attack_family, np.arange(len(adv)), test_ood.points, adv,
                                  clean, attacked)
    path = _out(cfg, f"attack_{cfg.attack_family}.csv")
    attacks.write_attack_csv(recs, path, cfg.digest())
    print(f"wrote {path} ({len(recs)} records)")
    return EXIT_OK


REPORT_COLUMNS = tuple(f"{fam}_{m}" for fam in metrics.FAMILIES for m in ("fpr_at_5fnr", "auroc"))


def report_table(reports, methods):
    """Rows of (method, 8 metric cells); refuses mismatched protocol digests."""
    protocols = {r.protocol_digest for r in reports}
    if len(protocols) > 1:
        raise ConfigError("reports were produced under different evaluation protocols "
                          f"(protocol digests {sorted(protocols)}); refusing to aggregate")
    rows = []
    for name, rep in zip(methods, reports):
        missing = [f for f in metrics.FAMILIES if f not in rep.families]
        if missing:
            raise ConfigError(f"report for {name} lacks families {missing}")
        rows.append([name] + [rep.families[f][m] for f in metrics.FAMILIES
                              for m in ("fpr_at_5fnr", "auroc")])
    return rows


def cmd_report(cfg):
    paths = list(cfg.reports)
    methods = list(cfg.methods) or [os.path.basename(p).split(".")[0] for p in paths]
    if len(methods) != len(paths):
        raise ConfigError(f"{len(methods)} method names for {len(paths)} reports")
    reports = []
    for p in paths:
        try:
            reports.append(metrics.EvalReport.from_dict(read_json(p)))
        except OSError as exc:
            raise ConfigError(f"cannot read report {p}: {exc}") from None
    rows = report_table(reports, methods)
    path = _out(cfg, "report.csv")
    write_table(path, ("method",) + REPORT_COLUMNS, rows, cfg.digest())
    print(f"wrote {path} ({len(rows)} methods x {len(REPORT_COLUMNS)} columns)")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "theory": cmd_theory, "train": cmd_train, "eval": cmd_eval,
            "attack": cmd_attack, "toy": cmd_toy, "report": cmd_report}
