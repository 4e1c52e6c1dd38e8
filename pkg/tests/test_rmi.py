"""Key re-scaling and the two-layer linear location predictor."""
import numpy as np
import pytest

from lider.core_model import CoreModelParams, build_core
from lider.rmi import (
    KeyRescaler,
    predict,
    predict_many,
    prediction_audit,
    train,
)
from lider.vectorstore import generate_synthetic


def fit_rescaler(keys, l_array):
    return KeyRescaler.fit(np.asarray(keys, dtype=np.uint64), l_array)


class TestKeyRescaler:
    def test_bounds(self):
        rs = fit_rescaler([10, 20, 30], l_array=100)
        assert rs.rescale(10) == 0.0
        assert rs.rescale(30) == 99.0
        assert rs.rescale(20) == pytest.approx(49.5)

    def test_out_of_range_keys_clamp(self):
        rs = fit_rescaler([10, 30], l_array=100)
        assert rs.rescale(0) == 0.0
        assert rs.rescale(1000) == 99.0

    def test_degenerate_single_key(self):
        rs = fit_rescaler([42], l_array=10)
        assert rs.rescale(42) == 0.0

    def test_wide_keys_use_exact_integer_arithmetic(self):
        x = (1 << 80) + 12345
        rs = KeyRescaler(x_min=0, x_max=1 << 81, a=0.0, b=1000.0)
        assert 0.0 < rs.rescale(x) < 1000.0

    def test_rescale_many_matches_scalar(self, rng):
        keys = rng.integers(0, 1 << 20, size=100).astype(np.uint64)
        rs = fit_rescaler(keys, l_array=5000)
        many = rs.rescale_many(keys)
        np.testing.assert_allclose(many, [rs.rescale(int(k)) for k in keys], rtol=1e-12)

    def test_monotone_in_key(self, rng):
        keys = np.sort(rng.integers(0, 1 << 16, size=200).astype(np.uint64))
        rs = fit_rescaler(keys, l_array=1000)
        out = rs.rescale_many(keys)
        assert (np.diff(out) >= 0).all()


class TestTrain:
    def test_exactly_linear_data(self):
        pairs = [(float(i), i) for i in range(100)]
        model = train(pairs, width=4, l_array=100)
        assert model.root.slope == pytest.approx(1.0, abs=1e-6)
        assert model.root.intercept == pytest.approx(0.0, abs=1e-6)
        for key, loc in pairs:
            assert predict(model, key) == loc

    def test_single_pair_constant_model(self):
        model = train([(3.0, 7)], width=2, l_array=10)
        assert predict(model, 3.0) == 7
        assert predict(model, 100.0) == 7

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train([], width=2, l_array=10)

    def test_beats_single_global_fit_on_rescaled_keys(self):
        # Pipeline-shaped data: rescaled hashkeys of a clustered collection
        # against their array positions. The routed two-layer model must fit
        # at least as well as one global line.
        col = generate_synthetic(5000, 64, 50, 0.05, seed=13)
        core = build_core(col, np.arange(len(col)), CoreModelParams(n_arrays=1, key_bits=13, seed=4))
        array = core.arrays[0]
        rescaler = core.rmis[0].rescaler
        xs = rescaler.rescale_many(array.keys)
        ys = np.arange(len(array), dtype=np.float64)
        pairs = np.column_stack((xs, ys))
        two_layer = train(pairs, width=20, l_array=len(array), rescaler=rescaler)
        global_fit = train(pairs, width=1, l_array=len(array), rescaler=rescaler)
        mae_two = np.abs(predict_many(two_layer, xs) - ys).mean()
        mae_one = np.abs(predict_many(global_fit, xs) - ys).mean()
        assert mae_two <= mae_one

    def test_deterministic(self, rng):
        keys = np.sort(rng.random(500) * 100)
        pairs = np.column_stack((keys, np.arange(500, dtype=np.float64)))
        a = train(pairs, width=8, l_array=500)
        b = train(pairs, width=8, l_array=500)
        assert a == b


class TestPredict:
    def test_recovers_identity_mapping(self):
        model = train([(float(i), i) for i in range(100)], width=4, l_array=100)
        assert predict(model, 42.0) == 42

    def test_clamps_below(self):
        model = train([(float(i), i) for i in range(100)], width=4, l_array=100)
        assert predict(model, -500.0) == 0

    def test_range_sweep(self, rng):
        keys = np.sort(rng.random(300) * 50)
        pairs = np.column_stack((keys, np.arange(300, dtype=np.float64)))
        model = train(pairs, width=6, l_array=300)
        out = predict_many(model, rng.random(1000) * 200 - 50)
        assert out.min() >= 0 and out.max() <= 299

    def test_non_finite_key_rejected(self):
        model = train([(0.0, 0), (1.0, 1)], width=1, l_array=2)
        with pytest.raises(ValueError, match="finite"):
            predict(model, float("nan"))

    def test_affine_training_data_exact(self):
        # location = 0.5*key - 1.5 exactly: end-to-end error is zero.
        locs = np.arange(200)
        keys = 2.0 * locs + 3.0
        model = train(np.column_stack((keys, locs.astype(np.float64))), width=5, l_array=200)
        preds = predict_many(model, keys)
        np.testing.assert_array_equal(preds, locs)

    def test_duplicate_keys_predict_within_their_run(self):
        # Duplicate keys are adjacent once sorted; the prediction for the
        # shared key must land inside the duplicates' location run, within
        # the model's own worst training error.
        xs = np.concatenate([np.zeros(50), np.ones(50) * 10, np.ones(50) * 20])
        ys = np.arange(150, dtype=np.float64)
        model = train(np.column_stack((xs, ys)), width=3, l_array=150)
        max_err = np.abs(predict_many(model, xs) - ys).max()
        for key, lo, hi in ((0.0, 0, 49), (10.0, 50, 99), (20.0, 100, 149)):
            pred = predict(model, key)
            assert lo - max_err <= pred <= hi + max_err


class TestPredictionAudit:
    def test_perfect_model(self):
        # Interior keys only: a prediction AT an array end counts as
        # out-of-range by definition, even when it is correct.
        model = train([(float(i), i) for i in range(200)], width=4, l_array=200)
        truth = [(float(i), i) for i in range(1, 199)]
        counts = prediction_audit(model, truth)
        assert (counts.n_out_of_range, counts.n_large_error, counts.n_overlap) == (0, 0, 0)

    def test_constant_zero_model_all_out_of_range(self):
        model = train([(5.0, 0)], width=1, l_array=1000)
        truth = [(float(i), i * 3) for i in range(50)]
        counts = prediction_audit(model, truth)
        assert counts.n_out_of_range == 50

    def test_threshold_parameter(self):
        model = train([(float(i), i) for i in range(100)], width=1, l_array=1000)
        truth = [(0.0, 950)]
        strict = prediction_audit(model, truth, large_error=100)
        loose = prediction_audit(model, truth, large_error=10_000)
        assert strict.n_large_error == 1 and loose.n_large_error == 0
