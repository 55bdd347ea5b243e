import numpy as np
import pytest
from hypothesis import given, strategies as st

from atom_ood import attacks, nn_model as nm, pgd


def toy_model(seed=0, d=2):
    return nm.init_mlp((d, 16, 16, 3), "relu", seed)


class TestBounds:
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(0, 10))
    def test_linf_bounds_never_exceed_eps(self, x, eps):
        x = np.array(x)
        lo, hi = pgd.linf_bounds(x, eps)
        assert np.all(x - lo <= eps) and np.all(hi - x <= eps)
        assert np.all(lo <= x) and np.all(x <= hi)

    def test_box_intersection_and_errors(self):
        lo, hi = pgd.linf_bounds(np.array([0.95, 0.0]), 0.1, (0.0, 1.0))
        np.testing.assert_allclose(hi, [1.0, 0.1])
        with pytest.raises(ValueError):
            pgd.linf_bounds(np.array([2.0]), 0.1, (0.0, 1.0))
        with pytest.raises(ValueError):
            pgd.as_box((1.0, 0.0), 2)

    def test_uniform_objective_gradient(self):
        obj = pgd.uniform_conf_objective(2)
        out = np.array([[0.3, -0.2, 1.0]])
        v, g = obj(out)
        h = 1e-6
        fd = [(obj(out + h * np.eye(3)[j])[0] - obj(out - h * np.eye(3)[j])[0])[0] / (2 * h)
              for j in range(3)]
        np.testing.assert_allclose(g[0], fd, rtol=1e-6)

    def test_ce_objective_gradient(self):
        obj = pgd.ce_objective(2)
        out = np.array([[0.3, -0.2, 1.0]])
        h = 1e-6
        fd = [(obj(out + h * np.eye(3)[j])[0] - obj(out - h * np.eye(3)[j])[0])[0] / (2 * h)
              for j in range(3)]
        np.testing.assert_allclose(obj(out)[1][0], fd, rtol=1e-6)


class TestWhiteBox:
    @given(st.integers(0, 500), st.floats(0.01, 1.0), st.booleans())
    def test_contracts(self, seed, eps, use_box):
        g = np.random.default_rng(seed)
        model = toy_model(seed % 7)
        x = g.uniform(-3, 3, size=(20, 2))
        box = (-3.0, 3.0) if use_box else None
        cfg = attacks.AttackConfig(eps=eps, steps=5, step_size=eps / 3, seed=seed)
        for attack, obj in ((attacks.attack_kplus1, attacks.kplus1_objective(model)),
                            (attacks.attack_uniform_conf, pgd.uniform_conf_objective(2))):
            adv = attack(model, x, cfg, box)
            assert np.all(np.abs(adv - x) <= eps)
            if use_box:
                assert np.all(adv >= -3.0) and np.all(adv <= 3.0)
            assert np.all(attacks.objective_values(model, adv, obj)
                          >= attacks.objective_values(model, x, obj))

    def test_lowers_ood_score(self):
        model = toy_model(1)
        x = np.random.default_rng(0).normal(size=(200, 2)) * 3
        adv = attacks.attack_kplus1(model, x, attacks.AttackConfig(eps=0.5, steps=20,
                                                                   step_size=0.05))
        assert nm.ood_score(model, adv).mean() < nm.ood_score(model, x).mean()

    def test_eps_zero_is_identity(self):
        model = toy_model()
        x = np.ones((3, 2))
        np.testing.assert_array_equal(attacks.attack_kplus1(model, x, attacks.AttackConfig(eps=0)), x)

    def test_batching_invariant(self):
        model = toy_model(2)
        x = np.random.default_rng(3).normal(size=(12, 2))
        cfg = attacks.AttackConfig(eps=0.3, steps=4, step_size=0.1, restarts=2, seed=5)
        full = attacks.attack_kplus1(model, x, cfg)
        parts = np.vstack([attacks.attack_kplus1(model, x[i:i + 5], cfg, ids=np.arange(i, min(i + 5, 12)))
                           for i in range(0, 12, 5)])
        np.testing.assert_array_equal(full, parts)

    def test_config(self):
        strong = attacks.AttackConfig.strong(eps=0.1)
        assert (strong.steps, strong.restarts, strong.random_start) == (100, 5, True)
        assert strong.digest() == attacks.AttackConfig.strong(eps=0.1).digest()
        assert strong.digest() != attacks.AttackConfig(eps=0.1).digest()
        with pytest.raises(ValueError):
            attacks.AttackConfig(restarts=0)


class TestCorruption:
    def test_variants_shape_and_severity_order(self):
        fam = attacks.CorruptionFamily(center=(0.0, 0.0))
        x = np.array([[3.0, 1.0], [-2.0, 4.0]])
        v = fam.apply(x, 0)
        assert v.shape == (25, 2, 2)
        assert len(fam.variant_names()) == 25
        # scaling moves points strictly closer to the center as severity grows
        r = np.linalg.norm(v[10:15], axis=2)
        assert np.all(np.diff(r, axis=0) < 0)

    def test_per_row_keys(self):
        fam = attacks.CorruptionFamily()
        x = np.random.default_rng(0).normal(size=(6, 3))
        full = fam.apply(x, 9)
        part = fam.apply(x[3:], 9, ids=np.arange(3, 6))
        np.testing.assert_array_equal(full[:, 3:], part)

    def test_attack_picks_min_and_clean_first(self):
        fam = attacks.CorruptionFamily(center=(0.0, 0.0))
        x = np.array([[3.0, 0.0], [0.0, 0.0]])
        scorer = lambda p: np.linalg.norm(p, axis=1)
        out, idx = attacks.corruption_attack(scorer, x, fam, 0, return_index=True)
        cands = np.concatenate([x[None], fam.apply(x, 0)])
        scores = np.linalg.norm(cands, axis=2)
        np.testing.assert_allclose(scorer(out), scores.min(axis=0))
        # row 1 sits at the center: scaling and dropout tie with the clean input
        assert idx[1] == 0 or scores[idx[1], 1] < scores[0, 1]

    def test_box_clipping(self):
        fam = attacks.CorruptionFamily(scale=10.0)
        x = np.zeros((5, 2))
        out = attacks.corruption_attack(lambda p: -np.abs(p).sum(axis=1), x, fam, 0, box=(-1, 1))
        assert np.all(np.abs(out) <= 1.0)

    def test_invalid_family(self):
        with pytest.raises(ValueError):
            attacks.CorruptionFamily(types=("blur",))
        with pytest.raises(ValueError):
            attacks.CorruptionFamily(noise_levels=(0.5, 0.4, 0.3, 0.2, 0.1))

    def test_compositional_never_worse_than_corruption(self):
        model = toy_model(4)
        x = np.random.default_rng(1).normal(size=(50, 2)) * 3
        fam = attacks.CorruptionFamily(center=(0.0, 0.0))
        cfg = attacks.AttackConfig(eps=0.2, steps=5, step_size=0.05)
        s_corr = nm.ood_score(model, attacks.corruption_attack(
            lambda p: nm.ood_score(model, p), x, fam, cfg.seed))
        s_comp = nm.ood_score(model, attacks.compositional_attack(model, x, fam, cfg))
        assert np.all(s_comp <= s_corr + 1e-12)


class TestRecords:
    def test_csv_round_trip(self, tmp_path):
        recs = attacks.attack_records("linf", [0, 1], np.zeros((2, 2)), np.array([[0.1, 0], [0, -0.2]]),
                                      [0.9, 0.8], [0.5, 0.1])
        attacks.write_attack_csv(recs, tmp_path / "a.csv", digest="abc")
        assert (tmp_path / "a.csv").read_text().startswith("# config_digest=abc")
        back = attacks.read_attack_csv(tmp_path / "a.csv")
        assert back == recs
        assert back[1].linf_norm_used == 0.2
