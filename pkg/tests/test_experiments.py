import math
from dataclasses import replace

import numpy as np
import pytest

from infobound.experiments.data import DatasetSpec, class_centroids, gen_dataset
from infobound.experiments.montecarlo import (SweepConfig, WorldLearner, WorldSource, depth_sweep,
                                              gap_estimate, measure_gap, replace_one_stability,
                                              stability_estimate)
from infobound.experiments.tinyworld import (BudgetExceeded, TinyWorld, lemma4_soundness_check,
                                             random_world, tiny_world_exact)
from infobound.net import LossEvaluator, dense, init_network
from infobound.optim import NoisySGDConfig, Schedule

from _oracles import brute_force_world

CE, ZO = LossEvaluator.clipped_cross_entropy(), LossEvaluator.zero_one()


def threshold_heads():
    # class-1 logit minus class-0 logit is x - a
    return [dense(np.array([[0.0, 0.0], [1.0, -a]]), "identity", bias=True) for a in (0.5, 1.5)]


def threshold_world(probs=(0.7, 0.3), algorithm="erm"):
    return TinyWorld.from_network([[0.0], [1.0]], [0, 1], list(probs), 2, [], threshold_heads(),
                                  algorithm)


class TestData:
    def test_parity_labels_are_xor(self):
        d = gen_dataset(DatasetSpec("parity_bits", 200, feature_dim=2, noise_level=0.0, seed=3))
        assert set(np.unique(d.X)) <= {0.0, 1.0}
        np.testing.assert_array_equal(d.y, d.X[:, 0].astype(int) ^ d.X[:, 1].astype(int))

    def test_noiseless_blobs_sit_on_centroids(self):
        spec = DatasetSpec("gaussian_blobs", 50, feature_dim=3, num_classes=3, noise_level=0.0, seed=1)
        d = gen_dataset(spec)
        np.testing.assert_array_equal(d.X, class_centroids(spec)[d.y])

    @pytest.mark.parametrize("gen", ["gaussian_blobs", "two_moons_like", "parity_bits", "tiny_grid_images"])
    def test_deterministic_and_split_disjoint(self, gen):
        spec = DatasetSpec(gen, 40, feature_dim=16, seed=5)
        a, b = gen_dataset(spec), gen_dataset(spec)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.X, gen_dataset(spec, "test").X)
        assert a.X.shape == (40, 16) and a.X.dtype == np.float64

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            DatasetSpec("mnist", 10)
        with pytest.raises(ValueError):
            DatasetSpec("parity_bits", 0)


class TestGap:
    def setup_method(self):
        self.spec = DatasetSpec("gaussian_blobs", 30, feature_dim=4, noise_level=1.0, seed=2)
        self.net = init_network([4, 2], 2, seed=0)

    def test_fixed_network_has_no_gap(self):
        cfg = NoisySGDConfig(8, 0, Schedule("inverse_square", 0.1), 0)
        est = measure_gap(self.net, self.spec, cfg, CE, 200, ZO, n_test=200)
        assert abs(est.mean_gap) <= 3 * est.std_error

    def test_memorizing_network(self):
        spec = DatasetSpec("parity_bits", 16, feature_dim=10, noise_level=0.0, seed=1)
        cfg = NoisySGDConfig(16, 150, Schedule("constant", 1.0, noise=1.0), 0, noise=False)
        est = measure_gap(init_network([10, 32], 2, seed=0), spec, cfg, CE, 20, ZO, n_test=500)
        assert est.mean_gap > 3 * est.std_error

    def test_single_replication(self):
        cfg = NoisySGDConfig(8, 5, Schedule("inverse_square", 0.1), 0)
        est = measure_gap(self.net, self.spec, cfg, CE, 1, ZO, n_test=50)
        assert not est.std_error_defined and math.isnan(est.std_error)
        assert est.replications == 1 and len(est.records) == 1
        assert est.to_csv().splitlines()[-1] == "stderr,"

    def test_rejects_zero_replications(self):
        cfg = NoisySGDConfig(8, 5, Schedule("inverse_square", 0.1), 0)
        with pytest.raises(ValueError):
            measure_gap(self.net, self.spec, cfg, CE, 0)

    def test_pure_function_of_seed_and_threads(self):
        cfg = NoisySGDConfig(8, 10, Schedule("inverse_square", 0.5), 0)
        a = measure_gap(self.net, self.spec, cfg, CE, 6, ZO, n_test=100)
        b = measure_gap(self.net, self.spec, cfg, CE, 6, ZO, n_test=100, threads=2)
        assert a.records == b.records
        c = measure_gap(self.net, replace(self.spec, seed=3), cfg, CE, 6, ZO, n_test=100)
        assert a.records != c.records


class TestStability:
    def test_constant_algorithm(self):
        spec = DatasetSpec("gaussian_blobs", 20, feature_dim=4, seed=1)
        cfg = NoisySGDConfig(8, 0, Schedule("inverse_square", 0.1), 0)
        est = replace_one_stability(init_network([4], 2, seed=0), spec, cfg, CE, 100, ZO)
        assert est.beta_hat == 0.0

    def test_agrees_with_gap(self):
        spec = DatasetSpec("gaussian_blobs", 12, feature_dim=4, noise_level=1.5, seed=4)
        cfg = NoisySGDConfig(12, 15, Schedule("constant", 0.5, noise=0.05), 0)
        net = init_network([4], 2, seed=0)
        gap = measure_gap(net, spec, cfg, CE, 300, CE, n_test=200)
        beta = replace_one_stability(net, spec, cfg, CE, 300, CE)
        assert abs(beta.beta_hat) <= abs(gap.mean_gap) + 3 * math.hypot(gap.std_error, beta.std_error)
        assert abs(beta.beta_hat - gap.mean_gap) <= 3 * math.hypot(gap.std_error, beta.std_error)

    def test_deterministic_erm_world(self):
        # break ERM ties towards the second hypothesis so the rule is deterministic
        base = threshold_world()
        rs = np.array([[base.loss_table[w, s].mean() for w in range(2)] for s in base.samples()])
        A = np.zeros_like(rs)
        A[np.arange(len(rs)), np.where(rs[:, 1] <= rs[:, 0], 1, 0)] = 1.0
        world = threshold_world(algorithm=A)
        exact = tiny_world_exact(world)
        assert exact.exact_beta == pytest.approx(0.49 * 0.3, abs=1e-15)
        est = stability_estimate(WorldLearner(world), WorldSource(world), world.n, 10**4, seed=7)
        assert abs(est.beta_hat - exact.exact_beta) <= 3 * est.std_error


class TestTinyWorld:
    def test_constant_algorithm(self):
        w = TinyWorld.constant([0.3, 0.7], 2, [[0.0, 1.0], [1.0, 0.0]])
        r = tiny_world_exact(w)
        assert r.mi_S_W == 0.0 and r.exact_beta == 0.0
        assert r.exact_gap == pytest.approx(0.0, abs=1e-15)

    def test_identity_algorithm(self):
        w = TinyWorld([0.5, 0.5], 1, np.eye(2), [[0.0, 1.0], [1.0, 0.0]])
        assert tiny_world_exact(w).mi_S_W == pytest.approx(math.log(2), abs=1e-15)

    def test_threshold_erm_golden(self):
        # S = (z0, z0) has probability 0.49 and ties both thresholds; choosing the
        # wrong one costs risk 0.3, so the gap is 0.49 * 0.5 * 0.3
        w = threshold_world()
        r = tiny_world_exact(w)
        assert r.exact_gap == pytest.approx(0.0735, abs=1e-15)
        gap, mi = brute_force_world(w.probs.tolist(), w.n, w.algorithm.tolist(), w.loss_table.tolist())
        assert r.exact_gap == pytest.approx(gap, abs=1e-15)
        assert r.mi_S_W == pytest.approx(mi, abs=1e-14)
        assert r.best_risk == 0.0

    def test_gap_equals_beta(self):
        for seed in range(50):
            r = tiny_world_exact(random_world(seed))
            assert r.exact_gap == pytest.approx(r.exact_beta, abs=1e-12)

    def test_brute_force_agreement(self):
        for seed in range(40):
            w = random_world(seed)
            r = tiny_world_exact(w)
            gap, mi = brute_force_world(w.probs.tolist(), w.n, w.algorithm.tolist(), w.loss_table.tolist())
            assert r.exact_gap == pytest.approx(gap, abs=1e-12)
            assert r.mi_S_W == pytest.approx(mi, abs=1e-10)

    def test_budget(self):
        w = TinyWorld.constant([0.5, 0.5], 6, [[0.0, 1.0]] * 3, budget=100)
        with pytest.raises(BudgetExceeded):
            tiny_world_exact(w)

    def test_invalid_world(self):
        with pytest.raises(ValueError):
            TinyWorld([0.5, 0.6], 1, np.eye(2), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            TinyWorld([0.5, 0.5], 1, np.eye(2), np.full((2, 2), 2.0))

    def test_roundtrip(self):
        for w in (threshold_world(), random_world(3), TinyWorld.constant([1.0], 1, [[0.5]])):
            back = TinyWorld.from_dict(w.to_dict())
            np.testing.assert_array_equal(back.algorithm, w.algorithm)
            np.testing.assert_array_equal(back.loss_table, w.loss_table)


class TestSoundness:
    def test_constant_head(self):
        w = TinyWorld.from_network([[0.0], [1.0]], [0, 1], [0.5, 0.5], 2, [], threshold_heads()[:1])
        rep = lemma4_soundness_check(w)
        assert rep.gap == 0.0 and rep.lemma4_rhs == 0.0 and rep.holds

    def test_randomized_two_heads(self):
        w = threshold_world((0.5, 0.5), "gibbs")
        rep = lemma4_soundness_check(w)
        assert rep.holds and rep.lemma4_slack > 0 and rep.gap > 0

    def test_random_corpus(self):
        slacks = []
        for seed in range(200):
            rep = lemma4_soundness_check(random_world(seed))
            assert rep.holds, seed
            slacks.append(min(rep.lemma4_slack, rep.theorem2_slack))
        assert min(slacks) >= -1e-12

    def test_exact_chain_is_monotone(self):
        for seed in range(100):
            mi = tiny_world_exact(random_world(seed)).mi_chain.mi_per_layer
            assert np.all(np.diff(mi) <= 1e-12)

    @pytest.mark.parametrize("seed", [0, 5])
    def test_monte_carlo_gap_matches_exact(self, seed):
        w = random_world(seed)
        est = gap_estimate(WorldLearner(w), WorldSource(w), w.n, 10**4, seed=seed, n_test=200)
        assert abs(est.mean_gap - tiny_world_exact(w).exact_gap) <= 3 * est.std_error


class TestSweep:
    def base(self, **kw):
        spec = DatasetSpec("gaussian_blobs", 60, feature_dim=16, noise_level=0.5, seed=1)
        cfg = NoisySGDConfig(16, 30, Schedule("inverse_square", 0.04), 0)
        return SweepConfig(spec, cfg, n_test=300, **kw)

    def test_depth_zero(self):
        rows = depth_sweep(self.base(), [0], 3)
        assert len(rows) == 1
        assert rows[0].chain.depth == 0

    def test_identity_stack_is_flat(self):
        rows = depth_sweep(self.base(architecture="identity"), [0, 2], 3)
        mi = rows[1].chain.mi_per_layer
        assert np.all(mi == mi[0])
        assert rows[1].eta_geo == pytest.approx(1.0)

    def test_halving_stack_is_monotone(self):
        rows = depth_sweep(self.base(), [3], 3)
        assert np.all(np.diff(rows[0].chain.mi_per_layer) <= 0.02)

    def test_empty(self):
        with pytest.raises(ValueError):
            depth_sweep(self.base(), [], 1)


def test_source_draws_share_one_distribution():
    from infobound.experiments.montecarlo import SpecSource
    spec = DatasetSpec("gaussian_blobs", 10, feature_dim=3, noise_level=0.0, seed=6)
    src = SpecSource(spec)
    a, b = src.draw(50, 1), src.draw(50, 2)
    centres = {tuple(r) for r in class_centroids(spec)}
    assert {tuple(r) for r in a.X} <= centres and {tuple(r) for r in b.X} <= centres
    assert not np.array_equal(a.y, b.y)
