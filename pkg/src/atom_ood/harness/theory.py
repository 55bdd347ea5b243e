"""Monte Carlo checks of the ball-detector guarantees on the Gaussian data model.

Each proposition ("prop") runs T seeded trials of one learning rule and
records, per trial, the center error ||u - mu||, a Monte Carlo FNR, the
worst-case FPR on an OOD shell, and (when outliers are mined) the size and
component composition of the mined set S.

* ``exist``: the oracle detector u = mu, r = sigma sqrt(d) + sigma gamma over a gamma grid.
* ``without``: sample mean and inflated sample radius, no auxiliary data.
* ``with``: margin search on ideal auxiliary data U_X.
* ``om``: interval mining on the mixture U_mix, then margin search; also the
  unmined contrast (interval [0, inf)) and the plain-average contrast.
* ``ideal``: plain average of the mined rows.

Hypotheses are evaluated with every unknown absolute constant set to
``hyp_constant``. Geometric hypotheses block a prop (it is reported as
infeasible and not run); sample-size hypotheses are reported only, since
their constants make them very conservative.
"""

import math

import numpy as np

from .. import ball_detector as bd
from .. import synth_data as sd
from ..rng import derive_seed
from .io import pmap

PROP_CODES = {"exist": 1, "without": 2, "with": 3, "om": 4, "ideal": 5}

# role keys inside a trial seed
_IN, _AUX, _FNR, _SHELL, _SEARCH = 1, 2, 3, 4, 5


def spec_from_config(cfg, gamma=None):
    return sd.GaussianModelSpec.isotropic(
        cfg.dim, cfg.mu_norm, sigma=cfg.sigma,
        gamma_margin=cfg.gamma_margin if gamma is None else gamma,
        sigma_o=cfg.sigma_o, eta=cfg.eta, nu=cfg.nu, sigma_q=cfg.sigma_q,
        eps=cfg.eps, eps_tau=cfg.eps_tau)


def search_radius(cfg):
    """s; defaults to sigma * gamma^2."""
    return cfg.sigma * cfg.gamma_margin ** 2 if cfg.search_radius == "auto" else cfg.search_radius


def mining_interval(cfg):
    s = search_radius(cfg)
    mid = cfg.sigma_o * math.sqrt(cfg.dim)
    return bd.MiningInterval(max(0.0, mid - s), mid + s)


def margin_config(cfg, spec, seed):
    if cfg.margin_t == "auto":
        t, empty = bd.default_margin_threshold(spec)
    else:
        t, empty = cfg.margin_t, False
    mcfg = bd.MarginFitConfig(search_radius(cfg), t, cfg.restarts, cfg.local_steps,
                              cfg.step_scale, seed)
    return mcfg, empty


def hypotheses(cfg, prop):
    """(blocking, advisory) dicts of named boolean hypothesis checks."""
    c = cfg.hyp_constant
    d, sig, g, so = cfg.dim, cfg.sigma, cfg.gamma_margin, cfg.sigma_o
    rd = math.sqrt(d)
    log_a = math.log(1.0 / cfg.ideal_alpha)
    s = search_radius(cfg)
    block, adv = {"gamma_below_sqrt_d": 0 < g < rd}, {}
    if prop == "exist":
        block["gammas_below_sqrt_d"] = all(0 < v < rd for v in cfg.gammas)
        block["shell_outside_tau"] = cfg.shell_factor > 1.0
        return block, adv
    adv["n_in_large_enough"] = cfg.n_in >= c * d / g ** 2 * log_a + c * d / g ** 4 * log_a
    if prop == "without":
        adv["n_in_large_enough"] = (cfg.n_without >= c * d / g ** 2 * log_a
                                    + c * d / g ** 4 * log_a)
        return block, adv
    block["sigma_o_above_sigma"] = so > sig
    block["margin_beats_eps"] = sig ** 2 * g ** 2 >= c * cfg.eps * so * d
    block["search_radius_positive"] = s > 0
    if prop == "with":
        adv["n_in_large_enough"] = (cfg.n_in >= c * d / g ** 4 * log_a
                                    + c * sig ** 2 * d / s ** 2 * log_a)
        adv["n_aux_large_enough"] = (cfg.n_aux >= math.exp(c * s ** 2 / so ** 2) / cfg.eta
                                     * math.log(d * sig / cfg.ideal_alpha))
        return block, adv
    block["sphere_clear_of_in_data"] = sig * rd + c * sig * g ** 2 < so * rd
    block["easy_outliers_far"] = cfg.sigma_q * rd > 2.0 * (so * rd + cfg.mu_norm)
    block["mixture_weights_valid"] = 0 < cfg.nu < 0.5
    adv["n_in_large_enough"] = cfg.n_in >= c * d / g ** 4 * log_a
    if prop == "om":
        try:
            need = math.exp(c * g ** 4) / (cfg.nu ** 2 * cfg.eta ** 2) * log_a
        except OverflowError:
            need = math.inf
        adv["n_aux_large_enough"] = cfg.n_aux >= need
    else:
        block["ideal_aux_eta_one"] = cfg.eta == 1.0
        block["dim_large_enough"] = d >= c * math.log(cfg.n_aux / cfg.ideal_alpha)
        adv["n_aux_large_enough"] = (cfg.n_aux >= c * d / (g ** 2 * cfg.nu ** 2)
                                     * math.log(d / cfg.ideal_alpha))
    return block, adv


def _fnr_fpr(det, spec, cfg, seed):
    fnr = bd.eval_fnr_mc(det, spec, cfg.trial_fnr_samples, derive_seed(seed, _FNR))
    shell = sd.sample_ood_shell(spec, cfg.shell_factor * spec.tau, cfg.shell_count,
                                derive_seed(seed, _SHELL))
    return fnr, bd.eval_fpr_worst_mc(det, shell, spec.eps)


def _record(trial, det, spec, cfg, seed, mined=None, **extra):
    fnr, fpr = _fnr_fpr(det, spec, cfg, seed)
    rec = {"trial": trial, "center_error": float(np.linalg.norm(det.center - spec.mu)),
           "radius": float(det.radius), "fnr_mc": fnr, "fpr_worst": fpr,
           "S": None, "S_composition": None}
    if mined is not None:
        rec["S"] = int(len(mined))
        if mined.components is not None:
            counts = np.bincount(mined.components.astype(np.int64), minlength=3)
            rec["S_composition"] = {"U_X": int(counts[sd.COMP_SPHERE]),
                                    "Q_q": int(counts[sd.COMP_EASY]),
                                    "P_X": int(counts[sd.COMP_IN])}
    rec.update(extra)
    return rec


def _trial_seed(cfg, prop, trial):
    return derive_seed(cfg.seed, PROP_CODES[prop], trial)


def _need(frac, total):
    return math.ceil(frac * total - 1e-9)


def _summary(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max())}


def run_exist(cfg):
    gammas = sorted(cfg.gammas)
    rd = math.sqrt(cfg.dim)
    fnr_curve, trials = [], []
    for gi, g in enumerate(gammas):
        spec = spec_from_config(cfg, gamma=g)
        det = bd.BallDetector(spec.mu, cfg.sigma * rd + cfg.sigma * g)
        # the same in-distribution draws for every gamma (common random numbers)
        fnr_curve.append(bd.eval_fnr_mc(det, spec, cfg.fnr_samples,
                                        derive_seed(cfg.seed, PROP_CODES["exist"], 0)))

        def one(trial, spec=spec, det=det, g=g, gi=gi):
            seed = derive_seed(_trial_seed(cfg, "exist", trial), gi + 1)
            return _record(trial, det, spec, cfg, seed, gamma=g)

        trials.extend(pmap(one, range(cfg.trials), cfg.threads))
    checks = {
        "fnr_strictly_decreasing": all(a > b for a, b in zip(fnr_curve, fnr_curve[1:])),
        "shell_fpr_zero_all_trials": all(r["fpr_worst"] == 0.0 for r in trials),
    }
    summary = {"gammas": gammas, "fnr_mc": fnr_curve, "fnr_samples": cfg.fnr_samples}
    return trials, summary, checks


def run_without(cfg):
    spec = spec_from_config(cfg)

    def one(trial):
        seed = _trial_seed(cfg, "without", trial)
        data = sd.sample_in_dist(spec, cfg.n_without, derive_seed(seed, _IN))
        return _record(trial, bd.fit_in_dist(data, spec.gamma_margin), spec, cfg, seed)

    trials = pmap(one, range(cfg.trials), cfg.threads)
    limit = cfg.sigma * cfg.gamma_margin / 4.0
    errs = [r["center_error"] for r in trials]
    bound = cfg.sigma * math.sqrt(cfg.dim * math.log(1.0 / cfg.ideal_alpha) / cfg.n_without)
    summary = {"center_error": _summary(errs), "error_limit": limit,
               "proof_bound_c1": bound, "n": cfg.n_without}
    checks = {"mean_center_error_below_limit": float(np.mean(errs)) < limit}
    return trials, summary, checks


def run_with(cfg):
    spec = spec_from_config(cfg)

    def one(trial):
        seed = _trial_seed(cfg, "with", trial)
        data = sd.sample_in_dist(spec, cfg.n_in, derive_seed(seed, _IN))
        aux = sd.sample_aux_sphere(spec, cfg.n_aux, derive_seed(seed, _AUX))
        inter = bd.fit_in_dist(data, spec.gamma_margin)
        mcfg, _ = margin_config(cfg, spec, derive_seed(seed, _SEARCH))
        center, loss = bd.search_margin_center(inter.center, aux.points, mcfg, spec.eps)
        det = bd.BallDetector(center, inter.radius)
        return _record(trial, det, spec, cfg, seed, margin_loss=loss)

    trials = pmap(one, range(cfg.trials), cfg.threads)
    limit = cfg.sigma * cfg.gamma_margin / 4.0
    ok = sum(r["center_error"] <= limit for r in trials)
    summary = {"center_error": _summary([r["center_error"] for r in trials]),
               "error_limit": limit, "trials_within_limit": ok}
    checks = {"center_error_within_limit_90pct": ok >= _need(0.9, cfg.trials)}
    return trials, summary, checks


def run_om(cfg):
    spec = spec_from_config(cfg)
    interval = mining_interval(cfg)
    everything = bd.MiningInterval(0.0, math.inf)

    def one(trial):
        seed = _trial_seed(cfg, "om", trial)
        data = sd.sample_in_dist(spec, cfg.n_in, derive_seed(seed, _IN))
        aux = sd.sample_aux_mixture(spec, cfg.n_aux, derive_seed(seed, _AUX))
        mcfg, _ = margin_config(cfg, spec, derive_seed(seed, _SEARCH))
        det, diag = bd.fit_mined(data, aux, spec, mcfg, interval)
        mined = bd.mine_interval(aux, diag["intermediate_center"], interval)
        # the same pipeline with mining switched off, same data and search seed
        det_all, diag_all = bd.fit_mined(data, aux, spec, mcfg, everything)
        avg_err = float(np.linalg.norm(aux.points.mean(axis=0) - spec.mu))
        comp = mined.components
        ux = float(np.mean(comp == sd.COMP_SPHERE)) if len(comp) else 0.0
        return _record(trial, det, spec, cfg, seed, mined=mined, margin_loss=diag["loss"],
                       u_x_fraction=ux,
                       unmined_center_error=float(np.linalg.norm(det_all.center - spec.mu)),
                       unmined_margin_loss=diag_all["loss"],
                       unmined_average_error=avg_err)

    trials = pmap(one, range(cfg.trials), cfg.threads)
    limit = cfg.sigma * cfg.gamma_margin / 4.0
    ok = sum(r["center_error"] <= limit for r in trials)
    bad = sum(r["unmined_center_error"] > limit for r in trials)
    bad_avg = sum(r["unmined_average_error"] > limit for r in trials)
    summary = {
        "center_error": _summary([r["center_error"] for r in trials]),
        "unmined_center_error": _summary([r["unmined_center_error"] for r in trials]),
        "unmined_average_error": _summary([r["unmined_average_error"] for r in trials]),
        "u_x_fraction": _summary([r["u_x_fraction"] for r in trials]),
        "error_limit": limit, "interval": [interval.low, interval.high],
        "trials_within_limit": ok, "unmined_trials_beyond_limit": bad,
        "unmined_average_trials_beyond_limit": bad_avg,
    }
    checks = {
        "mined_u_x_fraction_99pct_all_trials": all(r["u_x_fraction"] >= 0.99 for r in trials),
        "center_error_within_limit_90pct": ok >= _need(0.9, cfg.trials),
        "unmined_contrast_beyond_limit_80pct": bad >= _need(0.8, cfg.trials),
    }
    return trials, summary, checks


def run_ideal(cfg):
    spec = spec_from_config(cfg)
    interval = mining_interval(cfg)

    def one(trial):
        seed = _trial_seed(cfg, "ideal", trial)
        data = sd.sample_in_dist(spec, cfg.n_in, derive_seed(seed, _IN))
        aux = sd.sample_aux_mixture(spec, cfg.n_aux, derive_seed(seed, _AUX))
        det = bd.fit_ideal_average(data, aux, spec, interval)
        mined = bd.mine_interval(aux, bd.fit_in_dist(data, spec.gamma_margin).center, interval)
        bound = cfg.ideal_c * cfg.sigma_o * math.sqrt(
            cfg.dim * math.log(1.0 / cfg.ideal_alpha) / len(mined))
        ux = float(np.mean(mined.components == sd.COMP_SPHERE))
        return _record(trial, det, spec, cfg, seed, mined=mined, error_bound=bound,
                       u_x_fraction=ux)

    trials = pmap(one, range(cfg.trials), cfg.threads)
    ok = sum(r["center_error"] <= r["error_bound"] for r in trials)
    summary = {"center_error": _summary([r["center_error"] for r in trials]),
               "error_bound": _summary([r["error_bound"] for r in trials]),
               "trials_within_bound": ok, "interval": [interval.low, interval.high]}
    checks = {
        "mined_u_x_fraction_99pct_all_trials": all(r["u_x_fraction"] >= 0.99 for r in trials),
        "center_error_within_bound_90pct": ok >= _need(0.9, cfg.trials),
    }
    return trials, summary, checks


RUNNERS = {"exist": run_exist, "without": run_without, "with": run_with,
           "om": run_om, "ideal": run_ideal}


def run_prop(cfg, prop):
    block, adv = hypotheses(cfg, prop)
    section = {"hypotheses": block, "advisory_hypotheses": adv,
               "hyp_constant": cfg.hyp_constant, "feasible": all(block.values())}
    if prop in ("with", "om"):
        spec = spec_from_config(cfg)
        mcfg, empty = margin_config(cfg, spec, 0)
        lo, hi = bd.margin_threshold_range(spec)
        section.update(margin_t=mcfg.margin_threshold, t_range=[lo, hi], t_range_empty=empty,
                       search_radius=mcfg.search_radius)
    if not section["feasible"]:
        failed = sorted(k for k, v in block.items() if not v)
        section.update(status="infeasible", violated=failed, trials=[], summary={},
                       checks={}, passed=False)
        return section
    trials, summary, checks = RUNNERS[prop](cfg)
    section.update(status="run", trials=trials, summary=summary, checks=checks,
                   passed=all(checks.values()))
    return section


def theory_report(cfg):
    """Report dict (no timings, so reruns are byte-identical) for ``cfg.props``."""
    props = {p: run_prop(cfg, p) for p in cfg.props}
    spec = {k: cfg[k] for k in ("dim", "mu_norm", "sigma", "gamma_margin", "sigma_o", "eta",
                                "nu", "sigma_q", "eps", "eps_tau")}
    return {"spec": spec, "trials": cfg.trials, "props": props,
            "passed": all(p["passed"] for p in props.values())}
