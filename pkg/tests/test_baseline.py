import dataclasses
import numpy as np
import pytest
from src.core import ConfigError, NumericalError, StatsError
from src.engine import grad_check
from src.process_layers import softmax_cross_entropy
from src.process_data import GenConfig, labels_to_onehot, generate_subject_dataset
from src.process_signal import preprocess_dataset
from src.process_model import DALConfig, count_parameters
from src.process_eval import run_experiment, make_cv_splits
from src.process_baseline import (
    BaselineConfig, jacobi_eigh, symmetric_generalized_eig, normalized_covariance, csp_fit, csp_features,
    lda_fit, lda_predict, init_eegnet_params, eegnet_forward, baseline_with_overt, CspLdaMethod, EEGNetMethod,
)
from src.utils import gradcheck_config, NETWORK_TOL


def random_spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T / n + np.eye(n)


class TestEigensolver:
    def test_diagonal(self):
        vals, vecs = symmetric_generalized_eig(np.diag([2.0, 1.0]), np.eye(2))
        np.testing.assert_allclose(vals, [2.0, 1.0])
        np.testing.assert_allclose(np.abs(vecs), np.eye(2), atol=1e-12)

    def test_scaled_b(self):
        vals, _ = symmetric_generalized_eig(np.diag([2.0, 1.0]), np.diag([3.0, 3.0]))
        np.testing.assert_allclose(vals, [2 / 3, 1 / 3])

    @pytest.mark.parametrize("n", [6, 20, 58])
    def test_residuals(self, n):
        rng = np.random.default_rng(n)
        a, b = random_spd(rng, n), random_spd(rng, n)
        vals, vecs = symmetric_generalized_eig(a, b)
        assert np.all(np.diff(vals) <= 0)
        for lam, v in zip(vals, vecs.T):
            assert np.max(np.abs(a @ v - lam * (b @ v))) < 1e-9
        np.testing.assert_allclose(vecs.T @ b @ vecs, np.eye(n), atol=1e-9)

    def test_jacobi_reconstructs(self, rng):
        a = random_spd(rng, 7)
        vals, vecs = jacobi_eigh(a)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-12)

    @pytest.mark.parametrize("n", [20, 40, 58])
    def test_jacobi_sample_covariance(self, n):
        x = np.random.default_rng(0).standard_normal((n, 4 * n))
        a = x @ x.T / (4 * n)
        vals, vecs = jacobi_eigh(a)
        scale = np.linalg.norm(a)
        assert np.max(np.abs(a @ vecs - vecs * vals)) < 1e-11 * scale
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-11)
        np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-11 * scale)

    def test_jacobi_already_diagonal(self):
        vals, vecs = jacobi_eigh(np.diag([3.0, 1e-20, 2.0]))
        np.testing.assert_allclose(vals, [3.0, 1e-20, 2.0])
        np.testing.assert_allclose(vecs, np.eye(3))

    def test_generator_covariances(self):
        ds = generate_subject_dataset(GenConfig(trials_per_word=10), 1)
        classes = [ds.imagined[ds.imagined_labels == c] for c in range(4)]
        model = csp_fit(classes)
        for w, vals in zip(model.filters, model.eigenvalues):
            assert w.shape == (58, 4)
            assert np.all((vals > 0) & (vals < 1))
        covs = [np.mean([normalized_covariance(t) for t in c], axis=0) for c in classes]
        composite = covs[0] + np.mean(covs[1:], axis=0)
        vals, vecs = symmetric_generalized_eig(covs[0], composite)
        assert np.max(np.abs(covs[0] @ vecs - (composite @ vecs) * vals)) < 1e-9

    def test_b_not_positive_definite(self):
        b = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(NumericalError, match="pivot 2"):
            symmetric_generalized_eig(np.eye(3), b)


class TestCSP:
    def test_two_channel_axis_alignment(self, rng):
        def trials(active):
            x = 0.01 * rng.standard_normal((20, 2, 200))
            x[:, active] += rng.standard_normal((20, 200))
            return x
        model = csp_fit([trials(0), trials(1)], m=2)
        top = model.filters[0][:, 0]
        assert abs(top[0]) / np.linalg.norm(top) > 0.99

    def test_identical_classes(self, rng):
        data = rng.standard_normal((40, 3, 300))
        model = csp_fit([data[:20], data[20:]], m=2, loading=0.0)
        for vals in model.eigenvalues:
            np.testing.assert_allclose(vals, 0.5, atol=0.1)

    def test_full_filter_bank_is_b_orthonormal(self, rng):
        classes = [rng.standard_normal((10, 4, 100)) * s for s in (1.0, np.array([1, 2, 3, 4])[:, None])]
        model = csp_fit(classes, m=4, loading=0.0)
        covs = [np.mean([normalized_covariance(t) for t in c], axis=0) for c in classes]
        for w in model.filters:
            assert w.shape == (4, 4)
            np.testing.assert_allclose(w.T @ (covs[0] + covs[1]) @ w, np.eye(4), atol=1e-9)

    def test_features(self, rng):
        classes = [rng.standard_normal((6, 8, 120)) * rng.uniform(0.5, 2.0, (8, 1)) for _ in range(4)]
        model = csp_fit(classes, m=4)
        trial = rng.standard_normal((8, 120))
        feats = csp_features(trial, model)
        assert feats.shape == (16,)
        np.testing.assert_allclose(csp_features(5 * trial, model), feats, atol=1e-10)
        np.testing.assert_allclose(np.exp(feats).reshape(4, 4).sum(axis=1), 1.0)

    def test_needs_two_trials_per_class(self, rng):
        with pytest.raises(ConfigError):
            csp_fit([rng.standard_normal((1, 2, 50)), rng.standard_normal((3, 2, 50))], m=2)


class TestLDA:
    def test_one_dimensional_boundary(self):
        x = np.array([-0.1, 0.0, 0.1, 0.9, 1.0, 1.1])
        model = lda_fit(x, [0, 0, 0, 1, 1, 1], shrinkage=0.0)
        labels, _ = lda_predict(model, np.array([0.49, 0.51]))
        assert labels.tolist() == [0, 1]

    def test_separated_blobs(self, rng):
        centers = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        y = np.repeat(np.arange(4), 25)
        x = centers[y] + 0.1 * rng.standard_normal((100, 2))
        model = lda_fit(x, y)
        assert np.all(lda_predict(model, x)[0] == y)

    def test_full_shrinkage_is_nearest_mean(self, rng):
        y = np.repeat(np.arange(3), 10)
        x = rng.standard_normal((30, 3)) * [1.0, 5.0, 0.2] + y[:, None]
        model = lda_fit(x, y, shrinkage=1.0)
        cov = model.covariance
        np.testing.assert_allclose(cov, cov[0, 0] * np.eye(3))
        query = rng.standard_normal((50, 3)) * 2
        nearest = np.argmin(((query[:, None, :] - model.means[None]) ** 2).sum(axis=2), axis=1)
        np.testing.assert_array_equal(lda_predict(model, query)[0], nearest)

    def test_affine_invariance_without_shrinkage(self, rng):
        y = np.repeat(np.arange(4), 15)
        x = rng.standard_normal((60, 3)) + y[:, None] * 0.7
        a = np.array([[2.0, 0.5, 0.0], [0.0, 1.0, -0.3], [0.1, 0.0, 3.0]])
        query = rng.standard_normal((40, 3)) + 1.0
        base = lda_predict(lda_fit(x, y, 0.0), query)[0]
        moved = lda_predict(lda_fit(x @ a.T + 4.0, y, 0.0), query @ a.T + 4.0)[0]
        np.testing.assert_array_equal(base, moved)

    def test_singular_without_shrinkage(self):
        x = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]])
        with pytest.raises(StatsError, match="γ"):
            lda_fit(x, [0, 0, 1, 1], shrinkage=0.0)

    def test_needs_two_classes(self):
        with pytest.raises(StatsError):
            lda_fit(np.ones((3, 2)), [1, 1, 1])


class TestEEGNet:
    def test_probabilities(self, tiny_model, rng):
        params = init_eegnet_params(tiny_model, rng, np.float64)
        logits, probs = eegnet_forward(rng.standard_normal((3, 4, 64)), params)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert logits.shape == (3, 4)

    def test_small_and_decoder_free(self, rng):
        params = init_eegnet_params(DALConfig(), rng)
        assert count_parameters(params) < 5000
        assert not params.names(("dec1.", "dec2.", "out."))

    def test_gradient(self):
        cfg = gradcheck_config(samples=64, channels=8)
        rng = np.random.default_rng(3)
        params = init_eegnet_params(cfg, rng, np.float64)
        x = rng.standard_normal((3, cfg.channels, cfg.samples))
        onehot = labels_to_onehot([0, 2, 3], 4)
        loss = lambda *_: softmax_cross_entropy(eegnet_forward(x, params, "eval")[0], onehot)
        assert grad_check(loss, list(params.tensors.values()), max_checks=6, rng=rng) < NETWORK_TOL

    def test_method_fit_predict(self, tiny_model, tiny_train, rng):
        x = rng.standard_normal((8, 4, 64))
        method = EEGNetMethod(tiny_model, tiny_train).fit(x, np.arange(8) % 4, x, "w", seed=4)
        assert method.predict(x).shape == (8,)
        assert len(method.history) == 1


class TestOvertAugmentation:
    def test_union_doubles_training_set(self, rng):
        x, overt = rng.standard_normal((160, 2, 8)), rng.standard_normal((160, 2, 8))
        labels = np.arange(160) % 4
        xa, ya = baseline_with_overt(x, labels, overt, "w")
        assert xa.shape[0] == 320
        np.testing.assert_array_equal(ya[160:], labels)
        np.testing.assert_array_equal(xa[160:], overt)

    def test_without_overt_unchanged(self, rng):
        x = rng.standard_normal((10, 2, 8))
        xa, ya = baseline_with_overt(x, np.arange(10) % 2, None, "wo")
        assert xa.shape == x.shape and ya.size == 10

    def test_bad_condition(self, rng):
        with pytest.raises(ConfigError):
            baseline_with_overt(np.zeros((2, 1, 1)), [0, 1], None, "both")

    def test_missing_overt(self):
        with pytest.raises(ConfigError):
            baseline_with_overt(np.zeros((2, 1, 1)), [0, 1], None, "w")


def test_baseline_config():
    with pytest.raises(ConfigError):
        BaselineConfig(csp_filters_per_class=3).validate()


@pytest.mark.slow
def test_csp_lda_on_high_snr_data(tiny_gen, tiny_prep):
    cfg = dataclasses.replace(tiny_gen, channels=8, trials_per_word=12, imagined_snr_db=10.0, overt_snr_db=10.0)
    prep = preprocess_dataset(generate_subject_dataset(cfg, 1), tiny_prep, with_overt=False)
    train = np.arange(len(prep.labels)) % 3 != 0
    method = CspLdaMethod(n_classes=4).fit(prep.imagined[train], prep.labels[train], None, "wo")
    acc = np.mean(method.predict(prep.imagined[~train]) == prep.labels[~train])
    assert acc >= 0.8


def default_subject(**overrides):
    cfg = dataclasses.replace(GenConfig(), **overrides)
    return preprocess_dataset(generate_subject_dataset(cfg, 1), with_overt=False)


@pytest.mark.slow
def test_csp_lda_default_subject_all_folds_ok():
    prep = default_subject()
    results = run_experiment(prep, "csp_lda", "wo", make_cv_splits(prep.labels, 5, 1, 0))
    assert len(results) == 5
    assert all(r.ok for r in results), [r.diagnostics for r in results if not r.ok]


@pytest.mark.slow
def test_csp_lda_at_zero_db():
    prep = default_subject(imagined_snr_db=0.0, overt_snr_db=0.0)
    results = run_experiment(prep, "csp_lda", "wo", make_cv_splits(prep.labels, 5, 1, 0))
    assert all(r.ok for r in results)
    assert np.mean([r.accuracy for r in results]) >= 0.7


@pytest.mark.slow
def test_csp_lda_above_chance_at_default_snr():
    prep = default_subject(trials_per_word=30)
    results = run_experiment(prep, "csp_lda", "wo", make_cv_splits(prep.labels, 5, 1, 0))
    assert np.mean([r.accuracy for r in results]) >= 0.28
