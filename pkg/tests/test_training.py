"""Dataset-builder counts, training-loop contracts and the two decoders."""

from math import comb

import numpy as np
import pytest

from doabench.arraymodel import GridSpec, UlaGeometry
from doabench.nn import DenseSpec, FlattenSpec, NetworkSpec, SigmoidSpec, init_params
from doabench.profiles import PROFILES, build_network_spec
from doabench.training import (
    Dataset,
    TrainConfig,
    TrainingDiverged,
    build_fixed_k_dataset,
    build_mixed_k_dataset,
    export_dataset,
    load_dataset,
    noise_power_for_snr,
    predict_threshold,
    predict_topk,
    train,
)

GRID61 = GridSpec(30.0, 1.0)
GEOM8 = UlaGeometry(8, 0.5)
GRID121 = GridSpec(60.0, 1.0)
GEOM16 = UlaGeometry(16, 0.5)


def tiny_dataset(n_examples=8, seed=0):
    full = build_fixed_k_dataset(GRID61, GEOM8, 2, (-10.0,))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(full), size=n_examples, replace=False)
    return Dataset(GRID61, GEOM8, (-10.0,), "fixed-2",
                   tuple(full.recipes[int(i)] for i in picks))


class TestDatasetCounts:
    def test_single_snr_pair_count(self):
        ds = build_fixed_k_dataset(GRID121, GEOM16, 2, (-10.0,))
        assert len(ds) == 7_260

    def test_five_snr_total(self):
        ds = build_fixed_k_dataset(GRID121, GEOM16, 2, (-20.0, -15.0, -10.0, -5.0, 0.0))
        assert len(ds) == 36_300

    def test_three_point_grid(self):
        ds = build_fixed_k_dataset(GridSpec(1.0, 1.0), GEOM8, 1, (-5.0,))
        assert len(ds) == 3

    def test_mixed_full_scale_count(self):
        ds = build_mixed_k_dataset(GRID121, GEOM16, 3, -10.0)
        assert len(ds) == 295_361
        assert len(ds) == sum(comb(121, k) for k in (1, 2, 3))

    def test_mixed_k_max_one(self):
        assert len(build_mixed_k_dataset(GRID61, GEOM8, 1, 0.0)) == 61

    def test_mixed_small_grid_enumeration(self):
        grid = GridSpec(2.0, 1.0)  # points -2..2
        ds = build_mixed_k_dataset(grid, GEOM8, 2, 0.0)
        assert len(ds) == 15
        singles = [r for r in ds.recipes if len(r[1]) == 1]
        pairs = [r for r in ds.recipes if len(r[1]) == 2]
        assert len(singles) == 5 and len(pairs) == 10
        # brute-force enumeration of the pair set
        points = [-2.0, -1.0, 0.0, 1.0, 2.0]
        expected_pairs = {
            (a, b) for i, a in enumerate(points) for b in points[i + 1:]
        }
        assert {r[1] for r in pairs} == expected_pairs

    def test_count_guard(self):
        with pytest.raises(ValueError):
            build_mixed_k_dataset(GridSpec(89.0, 0.01), GEOM16, 3, 0.0)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            build_fixed_k_dataset(GRID61, GEOM8, 8, (-10.0,))


class TestDatasetExamples:
    def test_example_invariants(self):
        ds = build_fixed_k_dataset(GRID61, GEOM8, 2, (-10.0, 0.0))
        for i in (0, 100, len(ds) - 1):
            x, z = ds.example(i)
            assert x.shape == (8, 8, 3) and z.shape == (61,)
            np.testing.assert_array_equal(x[:, :, 0], x[:, :, 0].T)
            np.testing.assert_array_equal(x[:, :, 1], -x[:, :, 1].T)
            assert np.all(x[:, :, 2] > -np.pi) and np.all(x[:, :, 2] <= np.pi)
            assert z.sum() == 2.0 and set(np.unique(z)) <= {0.0, 1.0}

    def test_noise_power_follows_snr(self):
        assert noise_power_for_snr(-10.0) == pytest.approx(10.0)
        assert noise_power_for_snr(0.0) == 1.0
        ds = build_fixed_k_dataset(GRID61, GEOM8, 2, (-10.0,))
        x, _ = ds.example(0)
        # diagonal of the real channel = sum of source powers + noise power
        np.testing.assert_allclose(np.diag(x[:, :, 0]), 2.0 + 10.0, rtol=1e-12)

    def test_cache_round_trip(self, tmp_path):
        ds = tiny_dataset()
        path = tmp_path / "cache.doad"
        export_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.recipes == ds.recipes
        assert loaded.k_policy == ds.k_policy
        for i in range(len(ds)):
            x1, z1 = ds.example(i)
            x2, z2 = loaded.example(i)
            np.testing.assert_array_equal(x1, x2)
            np.testing.assert_array_equal(z1, z2)


SMALL_SPEC = build_network_spec(PROFILES["small"])


class TestTrainLoop:
    def test_history_lengths_and_lr_schedule(self):
        ds = tiny_dataset()
        config = TrainConfig(batch_size=4, epochs=7, lr_halving_period_epochs=2, seed=1)
        _, history = train(SMALL_SPEC, ds, config)
        assert len(history.train_loss) == 7
        assert len(history.val_loss) == 7
        expected = [0.001 * 0.5 ** (e // 2) for e in range(7)]
        assert list(history.learning_rate) == expected

    def test_seed_determinism(self):
        ds = tiny_dataset()
        config = TrainConfig(batch_size=4, epochs=3, seed=9)
        params1, hist1 = train(SMALL_SPEC, ds, config)
        params2, hist2 = train(SMALL_SPEC, ds, config)
        assert hist1 == hist2
        for a, b in zip(params1, params2):
            for key in a:
                assert np.array_equal(a[key], b[key])

    def test_different_seeds_differ(self):
        ds = tiny_dataset()
        _, h1 = train(SMALL_SPEC, ds, TrainConfig(batch_size=4, epochs=2, seed=1))
        _, h2 = train(SMALL_SPEC, ds, TrainConfig(batch_size=4, epochs=2, seed=2))
        assert h1.train_loss != h2.train_loss

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        ds = tiny_dataset()
        config = TrainConfig(batch_size=4, epochs=50, initial_lr=1e120,
                             lr_halving_period_epochs=50, seed=0)
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
            train(SMALL_SPEC, ds, config)

    def test_rejects_mismatched_grid(self):
        ds = build_fixed_k_dataset(GRID121, GEOM16, 2, (-10.0,))
        small = Dataset(GRID121, GEOM16, (-10.0,), "fixed-2", ds.recipes[:8])
        with pytest.raises(ValueError):
            train(SMALL_SPEC, small, TrainConfig(batch_size=4, epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(validation_fraction=1.5)


def crafted_net(probabilities):
    """A flatten+dense+sigmoid stack whose output is exactly sigmoid(bias)."""
    n = len(probabilities)
    spec = NetworkSpec((1, 1, 1), (FlattenSpec(), DenseSpec(n), SigmoidSpec()))
    params = init_params(spec, np.random.default_rng(0))
    params[1]["weights"][:] = 0.0
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 1e-12, 1 - 1e-12)
    params[1]["bias"][:] = np.log(p / (1.0 - p))
    return spec, params


class TestDecoders:
    X = np.zeros((1, 1, 1))

    def test_topk_picks_largest(self):
        probs = np.full(61, 0.1)
        probs[GRID61.index_of(-4.0)] = 0.99
        probs[GRID61.index_of(17.0)] = 0.98
        spec, params = crafted_net(probs)
        np.testing.assert_allclose(
            predict_topk(spec, params, GRID61, self.X, 2), [-4.0, 17.0]
        )

    def test_topk_tie_breaks_to_smaller_angles(self):
        spec, params = crafted_net(np.full(61, 0.5))
        np.testing.assert_allclose(
            predict_topk(spec, params, GRID61, self.X, 2), [-30.0, -29.0]
        )

    def test_topk_rejects_bad_k(self):
        spec, params = crafted_net(np.full(61, 0.5))
        with pytest.raises(ValueError):
            predict_topk(spec, params, GRID61, self.X, 0)
        with pytest.raises(ValueError):
            predict_topk(spec, params, GRID61, self.X, 62)

    def test_threshold_selects_confident(self):
        probs = np.full(61, 0.1)
        for angle in (-20.0, 3.0, 28.0):
            probs[GRID61.index_of(angle)] = 0.95
        spec, params = crafted_net(probs)
        est = predict_threshold(spec, params, GRID61, self.X, 0.9)
        np.testing.assert_allclose(est, [-20.0, 3.0, 28.0])

    def test_threshold_empty_above_max(self):
        spec, params = crafted_net(np.full(61, 0.4))
        assert predict_threshold(spec, params, GRID61, self.X, 0.9).size == 0

    def test_threshold_monotone_in_confidence(self):
        rng = np.random.default_rng(22)
        spec, params = crafted_net(rng.random(61))
        previous = None
        for p_bar in np.linspace(0.05, 0.95, 19):
            est = set(predict_threshold(spec, params, GRID61, self.X, p_bar))
            if previous is not None:
                assert est <= previous
            previous = est

    def test_threshold_rejects_bad_level(self):
        spec, params = crafted_net(np.full(61, 0.4))
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                predict_threshold(spec, params, GRID61, self.X, bad)
