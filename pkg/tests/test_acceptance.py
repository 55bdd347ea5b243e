"""Acceptance criteria 1-9, one test each at the stated tolerances.

Every test records a PASS/FAIL line; conftest prints them in the terminal
summary. The slow suites (criteria 3, 4, 7) run twice through the CLI
command functions so that criterion 9 can compare the written reports.
"""

import json
import time

import numpy as np
import pytest

from atom_ood import attacks, ball_detector as bd, metrics, nn_model as nm, pgd
from atom_ood import synth_data as sd
from atom_ood import trainer as tr
from atom_ood.harness import commands
from atom_ood.harness.config import ExperimentConfig

from oracles import enum_min_dist, numeric_grad, pairwise_auroc, sweep_fpr
from test_nn_model import param_grad_errors, random_case, rel_err

LINES = []


def record(criterion, ok, detail):
    LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def run_twice(tmp_path_factory, name, cmd, cfg):
    """Run a suite command into two fresh dirs; returns (exit codes, dirs, first runtime)."""
    dirs = [tmp_path_factory.mktemp(f"{name}{i}") for i in range(2)]
    codes, times = [], []
    for d in dirs:
        code, dt = timed(cmd, cfg.replace(out=str(d)))
        codes.append(code)
        times.append(dt)
    return codes, dirs, times[0]


@pytest.fixture(scope="module")
def om_runs(tmp_path_factory):
    return run_twice(tmp_path_factory, "om", commands.cmd_theory,
                     ExperimentConfig({"props": ("om",)}))


@pytest.fixture(scope="module")
def exist_runs(tmp_path_factory):
    return run_twice(tmp_path_factory, "exist", commands.cmd_theory,
                     ExperimentConfig({"props": ("exist",)}))


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    return run_twice(tmp_path_factory, "toy", commands.cmd_toy, ExperimentConfig())


def load(d, name):
    return json.loads((d / name).read_text())


def test_c1_worst_case_min_dist():
    g = np.random.default_rng(2024)
    cases = []
    for i in range(1000):
        d = int(g.integers(1, 4))
        x = g.uniform(-2, 2, d)
        p = g.uniform(-3, 3, d)
        eps = float(g.choice([0.0, g.uniform(0, 1.5)]))
        box = None
        if i % 2:
            box = (x - g.uniform(0, 1, d), x + g.uniform(0, 1, d))
        cases.append((x, p, eps, box))
    got, dt = timed(lambda: [bd.worst_case_min_dist(*c) for c in cases])
    err = max(abs(a - enum_min_dist(*c)) for a, c in zip(got, cases))
    ok = err < 1e-9 and dt < 1.0
    record("C1 worst_case_min_dist vs enumeration", ok, f"max abs err {err:.2e}, {dt:.3f}s")
    assert err < 1e-9
    assert dt < 1.0


def test_c2_metric_oracles():
    g = np.random.default_rng(7)
    cases = []
    for _ in range(200):
        n, m = int(g.integers(1, 60)), int(g.integers(1, 60))
        # small integer ranges force plenty of ties
        hi = int(g.integers(2, 20))
        cases.append((g.integers(0, hi, n).astype(float), g.integers(0, hi, m).astype(float),
                      float(g.choice([0.01, 0.05, 0.1, 0.25, 0.5]))))
    t0 = time.perf_counter()
    au = [metrics.auroc(metrics.ScoreSet(a, b)) for a, b, _ in cases]
    fp = [metrics.fpr_at_fnr(metrics.ScoreSet(a, b), t) for a, b, t in cases]
    dt = time.perf_counter() - t0
    au_bad = sum(v != pairwise_auroc(a, b) for v, (a, b, _) in zip(au, cases))
    fp_bad = sum(v != sweep_fpr(a, b, t) for v, (a, b, t) in zip(fp, cases))
    ok = au_bad == 0 and fp_bad == 0 and dt < 5.0
    record("C2 auroc / fpr_at_fnr vs oracles", ok,
           f"{au_bad} auroc and {fp_bad} fpr mismatches of 200 each, {dt:.3f}s")
    assert au_bad == 0 and fp_bad == 0
    assert dt < 5.0


def test_c3_outlier_mining(om_runs):
    codes, dirs, dt = om_runs
    sec = load(dirs[0], "theory_report.json")["props"]["om"]
    c, s = sec["checks"], sec["summary"]
    ok_a = c["mined_u_x_fraction_99pct_all_trials"]
    ok_b = c["center_error_within_limit_90pct"]
    ok_c = c["unmined_contrast_beyond_limit_80pct"]
    record("C3a mined rows >= 99% U_X in all trials", ok_a,
           f"min U_X fraction {s['u_x_fraction']['min']:.4f}")
    record("C3b mined center error <= sigma*gamma/4 in >= 18/20", ok_b,
           f"{s['trials_within_limit']}/20 (max error {s['center_error']['max']:.4f})")
    record("C3c unmined center error > sigma*gamma/4 in >= 16/20", ok_c,
           f"{s['unmined_trials_beyond_limit']}/20 (max error "
           f"{s['unmined_center_error']['max']:.4f}, limit {s['error_limit']})")
    record("C3 runtime < 3 min", dt < 180, f"{dt:.1f}s")
    assert sec["status"] == "run"
    assert ok_a and ok_b
    assert dt < 180
    assert ok_c, "no-mining contrast does not exceed the limit; see decisions ledger"


def test_c4_existence(exist_runs):
    codes, dirs, dt = exist_runs
    sec = load(dirs[0], "theory_report.json")["props"]["exist"]
    fnr = sec["summary"]["fnr_mc"]
    ok = sec["passed"] and dt < 30
    record("C4 FNR decreasing in gamma, shell FPR 0", ok,
           f"FNR {fnr}, shell FPR zero: {sec['checks']['shell_fpr_zero_all_trials']}, {dt:.1f}s")
    assert codes[0] == commands.EXIT_OK
    assert sec["checks"]["fnr_strictly_decreasing"]
    assert sec["checks"]["shell_fpr_zero_all_trials"]
    assert dt < 30


def test_c5_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        model, x, y = random_case(5000 + i, "relu" if i % 2 else "tanh")
        worst = max(worst, *param_grad_errors(model, x, y))
        fd = numeric_grad(lambda v: nm.loss_grad(model, v, y).loss * len(v), x)
        worst = max(worst, rel_err(nm.grad_wrt_input(model, x, y), fd))
    dt = time.perf_counter() - t0
    record("C5 gradients vs central differences", worst < 1e-4 and dt < 10,
           f"max rel err {worst:.2e} over 50 draws, {dt:.2f}s")
    assert worst < 1e-4
    assert dt < 10


def test_c6_mining_slice():
    n_pool, n_sel, q = 400000, 100000, 0.125
    g = np.random.default_rng(11)
    # known ranks with ties: score = rank // 4, so stability decides within groups
    scores = (g.permutation(n_pool) // 4).astype(float)
    pool = sd.SampleBatch(np.column_stack([scores, np.arange(n_pool, dtype=float)]))
    cfg = tr.MiningConfig(pool_draw=n_pool, selected=n_sel, quantile=q)
    t0 = time.perf_counter()
    mined = tr.mine_outliers(lambda p: p[:, 0], pool, cfg, seed=3, epoch=0)
    dt = time.perf_counter() - t0
    drawn = tr.draw_pool(pool, n_pool, 3, 0)
    ranked = sorted(range(n_pool), key=lambda i: (scores[drawn[i]], i))
    want = drawn[ranked[50000:150000]]
    ok = np.array_equal(mined.points[:, 1].astype(np.int64), want) and dt < 5
    record("C6 mining slice [50000, 150000)", ok, f"start {cfg.start}, {dt:.2f}s")
    assert cfg.start == 50000
    assert np.array_equal(mined.points[:, 1].astype(np.int64), want)
    assert dt < 5


def test_c7_toy_ablation(toy_runs):
    codes, dirs, dt = toy_runs
    summary = load(dirs[0], "toy_summary.json")
    c = summary["checks"]
    mean = summary["mean_fpr_at_5fnr"]
    ok = c["ordering_in_80pct_seeds"] and dt < 180
    record("C7 toy ordering in >= 4/5 seeds", ok,
           f"{c['ordering_seeds']}/5 seeds; mean L-inf FPR ATOM {mean['ATOM']['linf']:.4f} "
           f"AT {mean['AT_RANDOM']['linf']:.4f} NTOM {mean['NTOM']['linf']:.4f}; {dt:.1f}s")
    assert c["ordering_in_80pct_seeds"]
    assert dt < 180


def test_c8_pgd_contracts():
    g = np.random.default_rng(8)
    model = nm.init_mlp((2, 32, 32, 3), "relu", 8)
    x = g.uniform(-4, 4, size=(10000, 2))
    box = (-4.0, 4.0)
    eps = 0.4
    t0 = time.perf_counter()
    acfg = attacks.AttackConfig(eps=eps, steps=20, step_size=0.05, seed=8)
    checks = []
    for attack, obj in ((attacks.attack_kplus1, attacks.kplus1_objective(model)),
                        (attacks.attack_uniform_conf, pgd.uniform_conf_objective(2))):
        adv = attack(model, x, acfg, box)
        checks.append((adv, obj))
    adv = tr.pgd_inner_max(model, x, tr.PgdConfig(eps=eps, steps=5, step_size=0.1), box,
                           rng=np.random.default_rng(1))
    checks.append((adv, pgd.ce_objective(model.num_classes)))
    dt = time.perf_counter() - t0
    in_ball = all(np.all(np.abs(a - x) <= eps) for a, _ in checks)
    in_box = all(np.all((a >= -4.0) & (a <= 4.0)) for a, _ in checks)
    no_worse = all(np.all(attacks.objective_values(model, a, o)
                          >= attacks.objective_values(model, x, o)) for a, o in checks)
    ok = in_ball and in_box and no_worse and dt < 30
    record("C8 PGD ball/box/objective contracts", ok,
           f"3 attacks x 10^4 samples, ball {in_ball}, box {in_box}, "
           f"objective non-decreasing {no_worse}, {dt:.1f}s")
    assert in_ball and in_box and no_worse
    assert dt < 30


def test_c9_determinism(om_runs, exist_runs, toy_runs):
    diffs = []
    for name, (_, dirs, _) in (("om", om_runs), ("exist", exist_runs), ("toy", toy_runs)):
        files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
        other = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
        if files != other:
            diffs.append(f"{name}: file sets differ")
            continue
        diffs += [f"{name}/{f}" for f in files
                  if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    record("C9 reruns of 3, 4, 7 bitwise identical", not diffs,
           "all report files identical" if not diffs else f"differ: {diffs[:5]}")
    assert not diffs
