import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from copulacast.data import CovariatePanel, SeriesPanel, WindowSpec, build_windows
from copulacast.errors import BadKernel, NonFiniteLoss, ShapeMismatch, VersionMismatch
from copulacast.marginals import (
    LinearQuantileModel,
    QuantileSet,
    dlinear_decompose,
    fit_linear_quantile,
    model_from_json,
    model_to_json,
    nlinear_postprocess,
    nlinear_preprocess,
    predict_quantiles,
    quantile_loss,
)
from copulacast.marginals.quantile import design, init_model, loss_and_grad, training_loss

T0 = np.datetime64("2022-01-01T00:00:00", "s")


def make_batch(values, W, H, covs=None, stride=1):
    values = np.atleast_2d(values)
    stamps = T0 + np.arange(values.shape[1]) * np.timedelta64(1, "h")
    panel = SeriesPanel([f"s{i}" for i in range(values.shape[0])], stamps, values)
    cov = None if covs is None else CovariatePanel([f"x{j}" for j in range(len(covs))], stamps, covs)
    return build_windows(panel, cov, WindowSpec(W, H), stride=stride)


def ar1(n, phi=0.8, sd=0.1, seed=0, D=1):
    rng = np.random.default_rng(seed)
    z = np.zeros((D, n))
    for t in range(1, n):
        z[:, t] = phi * z[:, t - 1] + rng.normal(0, sd, D)
    return z


class TestQuantileLoss:
    def test_examples(self):
        assert quantile_loss(1.0, 0.0, 0.5) == 0.5
        assert quantile_loss(0.7, 0.7, 0.3) == 0.0
        assert quantile_loss(0.0, 1.0, 0.1) == pytest.approx(0.9)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 0.99), st.floats(0, 1))
    def test_convex(self, z, a, b, q, lam):
        lhs = quantile_loss(z, lam * a + (1 - lam) * b, q)
        rhs = lam * quantile_loss(z, a, q) + (1 - lam) * quantile_loss(z, b, q)
        assert lhs <= rhs + 1e-12

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 0.99))
    def test_nonnegative(self, z, zh, q):
        assert quantile_loss(z, zh, q) >= 0


class TestPreprocessing:
    def test_nlinear(self):
        shifted, last = nlinear_preprocess([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]])
        np.testing.assert_array_equal(shifted, [[-2, -1, 0], [0, 0, 0]])
        np.testing.assert_array_equal(last, [3, 4])
        assert nlinear_postprocess(0.5, 3.0) == 3.5

    def test_dlinear_hand_example(self):
        trend, seasonal = dlinear_decompose(np.array([0.0, 3.0, 0.0]), 3)
        np.testing.assert_allclose(trend, [1, 1, 1], atol=1e-15)
        np.testing.assert_allclose(seasonal, [-1, 2, -1], atol=1e-15)

    def test_dlinear_identity_kernel_and_constant(self):
        x = np.random.default_rng(0).normal(size=(2, 6))
        trend, seasonal = dlinear_decompose(x, 1)
        np.testing.assert_array_equal(trend, x)
        assert not seasonal.any()
        _, seasonal = dlinear_decompose(np.full(7, 0.25), 5)
        assert not seasonal.any()

    def test_dlinear_matches_convolution_oracle(self):
        x = np.random.default_rng(1).uniform(size=12)
        k = 5
        padded = np.concatenate([[x[0]] * 2, x, [x[-1]] * 2])
        expected = np.convolve(padded, np.ones(k) / k, mode="valid")
        np.testing.assert_allclose(dlinear_decompose(x, k)[0], expected, atol=1e-14)

    @pytest.mark.parametrize("k", [0, 2, 9])
    def test_bad_kernel(self, k):
        with pytest.raises(BadKernel):
            dlinear_decompose(np.zeros(8), k)

    @settings(max_examples=100)
    @given(arrays(float, (3, 9), elements=st.integers(-1000, 1000).map(float)), st.sampled_from([1, 3, 5, 7, 9]))
    def test_reconstruction_bitwise_integers(self, x, k):
        trend, seasonal = dlinear_decompose(x, k)
        assert np.array_equal(trend + seasonal, x)

    @settings(max_examples=100)
    @given(arrays(float, (2, 11), elements=st.floats(-1e6, 1e6)), st.sampled_from([1, 3, 5, 11]))
    def test_reconstruction_within_one_ulp(self, x, k):
        trend, seasonal = dlinear_decompose(x, k)
        err = np.abs(trend + seasonal - x)
        assert np.all(err <= np.spacing(np.abs(x)) + np.spacing(np.abs(seasonal)))


class TestModel:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for variant, D, Dc, W, H in [("nlinear", 2, 1, 4, 3), ("dlinear", 3, 0, 5, 2), ("nlinear", 1, 2, 3, 4)]:
            z = rng.uniform(size=(D, 40))
            covs = rng.normal(size=(Dc, 40)) if Dc else None
            batch = make_batch(z, W, H, covs)
            model = init_model(batch, (0.2, 0.5, 0.8), variant, 3 if variant == "dlinear" else None, init="zeros")
            model.weight = rng.normal(scale=0.1, size=model.weight.shape)
            model.bias = rng.normal(scale=0.1, size=model.bias.shape)
            X, off = design(model, batch)
            _, gw, gb = loss_and_grad(model, X, off, batch.future_targets)
            h = 1e-7
            for idx in [(0, 0), (X.shape[1] - 1, model.weight.shape[1] - 1), (1, 2)]:
                m = model.copy()
                m.weight[idx] += h
                up = loss_and_grad(m, X, off, batch.future_targets)[0]
                m.weight[idx] -= 2 * h
                down = loss_and_grad(m, X, off, batch.future_targets)[0]
                fd = (up - down) / (2 * h)
                assert abs(fd - gw[idx]) <= 1e-4 * max(abs(fd), 1e-6), (variant, idx, fd, gw[idx])
            for j in [0, model.bias.size - 1]:
                m = model.copy()
                m.bias[j] += h
                up = loss_and_grad(m, X, off, batch.future_targets)[0]
                m.bias[j] -= 2 * h
                down = loss_and_grad(m, X, off, batch.future_targets)[0]
                fd = (up - down) / (2 * h)
                assert abs(fd - gb[j]) <= 1e-4 * max(abs(fd), 1e-6)

    def test_zero_epochs_returns_init(self):
        batch = make_batch(ar1(300, seed=1), 6, 3)
        init = init_model(batch, (0.1, 0.5, 0.9), "nlinear", seed=0)
        fitted = fit_linear_quantile(batch, (0.1, 0.5, 0.9), epochs=0, seed=0)
        np.testing.assert_array_equal(fitted.weight, init.weight)
        np.testing.assert_array_equal(fitted.bias, init.bias)

    def test_loss_never_increases(self):
        batch = make_batch(ar1(400, seed=2), 8, 4)
        model = fit_linear_quantile(batch, epochs=5, learning_rate=0.5, seed=3)
        assert training_loss(model, batch) <= model.history[0] + 1e-15

    def test_constant_series(self):
        batch = make_batch(np.full((2, 200), 0.42), 8, 4)
        model = fit_linear_quantile(batch, epochs=3, seed=0)
        pred = predict_quantiles(model, batch)
        assert np.all(np.abs(pred - 0.42) < 0.01)

    @pytest.mark.parametrize("variant", ["nlinear", "dlinear"])
    def test_ar_last_lag_coefficient(self, variant):
        batch = make_batch(ar1(5000, sd=0.1, seed=4), 12, 1)
        model = fit_linear_quantile(batch, variant=variant, epochs=5, learning_rate=0.005, seed=0, kernel=5)
        # effective d(median)/d(z_t) by a finite difference on the last observation
        w = batch[100]
        bumped = w.past_targets.copy()
        bumped[0, -1] += 1e-3
        base = predict_quantiles(model, w)[0, 0, 2]
        moved = predict_quantiles(model, type(w)(w.origin, bumped, w.past_covariates, w.future_covariates))
        slope = (moved[0, 0, 2] - base) / 1e-3
        # least-squares oracle on the same windows
        ols = np.linalg.lstsq(batch.past_targets[:, 0, -1:], batch.future_targets[:, 0, 0], rcond=None)[0][0]
        assert 0.7 <= slope <= 0.9
        assert abs(slope - ols) < 0.1

    def test_median_calibration(self):
        batch = make_batch(ar1(4000, seed=6, D=2), 12, 2)
        model = fit_linear_quantile(batch, epochs=5, learning_rate=0.005, seed=0)
        pred = predict_quantiles(model, batch)
        cover = (batch.future_targets[..., None] <= pred).mean(axis=(0, 1, 2))
        np.testing.assert_allclose(cover, model.levels, atol=0.1)

    def test_predictions_sorted(self):
        rng = np.random.default_rng(8)
        batch = make_batch(rng.uniform(size=(2, 100)), 5, 3)
        model = init_model(batch, (0.1, 0.5, 0.9), "dlinear", 3, init="zeros")
        model.weight = rng.normal(size=model.weight.shape)
        assert np.all(np.diff(predict_quantiles(model, batch), axis=-1) >= 0)

    def test_zero_weights_give_bias(self):
        batch = make_batch(np.arange(40.0)[None, :] / 40, 4, 2)
        model = init_model(batch, (0.5,), "nlinear", init="zeros")
        model.bias[:] = 0.25
        pred = predict_quantiles(model, batch[3])
        np.testing.assert_allclose(pred[..., 0], np.broadcast_to(batch[3].past_targets[:, -1:] + 0.25, (1, 2)))

    def test_persistence_construction(self):
        batch = make_batch(np.random.default_rng(9).uniform(size=(1, 60)), 4, 2)
        model = init_model(batch, (0.5,), "dlinear", 1, init="zeros")
        # trend block alone, with k = 1, equals the raw past: select the last lag
        model.weight[3, :] = model.feature_scale[3]
        model.bias[:] = model.feature_mean[3]
        pred = predict_quantiles(model, batch)
        np.testing.assert_allclose(pred[:, 0, :, 0], batch.past_targets[:, 0, -1:].repeat(2, axis=1))

    def test_deterministic(self):
        batch = make_batch(ar1(300, seed=3), 6, 2)
        a = fit_linear_quantile(batch, epochs=3, seed=11)
        b = fit_linear_quantile(batch, epochs=3, seed=11)
        np.testing.assert_array_equal(a.weight, b.weight)

    def test_per_series_sharing(self):
        batch = make_batch(ar1(300, seed=3, D=3), 6, 2)
        model = fit_linear_quantile(batch, epochs=2, seed=0, sharing="per_series")
        w = model.weight.reshape(-1, 3, 2 * 5)
        for i in range(3):
            for j in range(3):
                block = w[j * 6:(j + 1) * 6, i]
                assert (i == j) or not block.any()

    def test_shape_mismatch(self):
        model = fit_linear_quantile(make_batch(ar1(100), 6, 2), epochs=1)
        with pytest.raises(ShapeMismatch):
            predict_quantiles(model, make_batch(ar1(100), 5, 2))

    def test_non_finite_loss(self):
        batch = make_batch(ar1(200, seed=1), 6, 2)
        with pytest.raises(NonFiniteLoss) as info, np.errstate(all="ignore"):
            fit_linear_quantile(batch, epochs=2, learning_rate=1e308, seed=0, init="zeros")
        assert info.value.epoch == 1

    def test_json_round_trip(self):
        batch = make_batch(ar1(200, seed=1, D=2), 6, 2, covs=np.random.default_rng(0).normal(size=(1, 200)))
        model = fit_linear_quantile(batch, variant="dlinear", kernel=3, epochs=1)
        back, extra = model_from_json(model_to_json(model, note="x"))
        assert extra == {"note": "x"}
        np.testing.assert_array_equal(back.weight, model.weight)
        np.testing.assert_array_equal(predict_quantiles(back, batch), predict_quantiles(model, batch))
        with pytest.raises(VersionMismatch):
            model_from_json(model_to_json(model).replace('"version": 1', '"version": 99'))

    def test_quantile_set(self):
        assert QuantileSet().column_names() == ["q10", "q30", "q50", "q70", "q90"]
        with pytest.raises(ValueError):
            QuantileSet((0.5, 0.3))
        with pytest.raises(ValueError):
            LinearQuantileModel("xlinear", 1, 0, 2, 1, (0.5,), np.zeros((2, 1)), np.zeros(1),
                                np.zeros(2), np.ones(2))
