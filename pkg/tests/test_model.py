import numpy as np
import pytest
from src.core import ConfigError, DimensionError, DivergenceError, PairingError, SpecError
from src.engine import Tensor, backward, grad_check
from src.process_data import labels_to_onehot
from src.process_model import (
    DALConfig, TrainConfig, AdamState, ENCODER_PREFIXES, DECODER_PREFIXES, dal_variant, init_dal_params,
    count_parameters, encoder_forward, decoder_forward, classifier_forward, c_box, dal_forward, combined_loss,
    dal_train_step, train_dal, predict_proba, save_params, load_params, DALMethod,
)
from src.process_baseline import init_eegnet_params
from src.utils import gradcheck_config, NETWORK_TOL

ALPHAS = [0.0, 0.25, 0.5, 0.9, 1.0]


@pytest.fixture
def params(tiny_model, rng):
    return init_dal_params(tiny_model, rng, np.float64)


@pytest.fixture
def batch(tiny_model, rng):
    x = rng.standard_normal((4, tiny_model.channels, tiny_model.samples))
    overt = rng.standard_normal(x.shape)
    return x, labels_to_onehot([0, 1, 2, 3], 4), overt


class TestConfig:
    def test_default_geometry(self):
        cfg = DALConfig().validate()
        assert (cfg.depth1, cfg.len_pool1, cfg.len_feature, cfg.feature_size) == (16, 128, 16, 256)

    def test_alpha_range(self):
        with pytest.raises(ConfigError, match="alpha"):
            DALConfig(alpha=1.5).validate()

    def test_samples_divisible_by_pools(self):
        with pytest.raises(ConfigError):
            DALConfig(samples=100).validate()

    def test_decoder_too_short(self):
        with pytest.raises(SpecError):
            DALConfig(dec_kernel1=4).validate()


class TestForward:
    def test_default_shapes(self, rng):
        cfg = DALConfig()
        p = init_dal_params(cfg, rng)
        x = rng.standard_normal((2, 58, 512)).astype(np.float32)
        feat, skip1, skip2 = encoder_forward(x, p)
        assert feat.shape == (2, 16, 1, 16)
        assert skip1.shape == (2, 8, 58, 512)
        assert skip2.shape == (2, 16, 1, 128)
        assert decoder_forward(feat, skip1, skip2, p).shape == (2, 1, 58, 512)

    def test_zero_input_gives_zero_features(self, params, tiny_model):
        feat, _, _ = encoder_forward(np.zeros((2, tiny_model.channels, tiny_model.samples)), params, "eval")
        np.testing.assert_array_equal(feat.data, 0.0)

    def test_eval_is_deterministic(self, rng):
        cfg = DALConfig(channels=4, samples=64)           # dropout 0.25 chỉ có tác dụng khi train
        p = init_dal_params(cfg, rng, np.float64)
        x = rng.standard_normal((3, 4, 64))
        a = encoder_forward(x, p, "eval")[0].data
        b = encoder_forward(x, p, "eval")[0].data
        np.testing.assert_array_equal(a, b)

    def test_wrong_input_shape(self, params):
        with pytest.raises(DimensionError):
            encoder_forward(np.zeros((1, 5, 64)), params)

    def test_cbox_shape_mismatch(self):
        with pytest.raises(DimensionError, match="C-Box"):
            c_box(Tensor(np.zeros((1, 2, 1, 8))), Tensor(np.zeros((1, 2, 1, 9))))

    def test_classifier_probabilities(self, params, tiny_model, rng):
        feat, _, _ = encoder_forward(rng.standard_normal((5, 4, 64)), params)
        logits, probs = classifier_forward(feat, params)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_array_equal(np.argmax(probs, axis=1), np.argmax(logits.data, axis=1))

    def test_zero_head_is_uniform(self, params, rng):
        params["clf.weight"].data[:] = 0.0
        params["clf.bias"].data[:] = 0.0
        feat, _, _ = encoder_forward(rng.standard_normal((2, 4, 64)), params)
        np.testing.assert_allclose(classifier_forward(feat, params)[1], 0.25)

    def test_parameter_counts(self, rng):
        cfg = DALConfig()
        assert count_parameters(init_eegnet_params(cfg, rng)) < 5000
        dal = init_dal_params(cfg, rng)
        total = count_parameters(dal)
        parts = count_parameters(dal, ENCODER_PREFIXES) + count_parameters(dal, ("clf.",)) \
            + count_parameters(dal, DECODER_PREFIXES)
        assert parts == total


class TestCombinedLoss:
    def test_uniform_logits_perfect_recon(self):
        recon = Tensor(np.ones((2, 1, 3, 4)))
        total, bd = combined_loss(Tensor(np.zeros((2, 4))), np.eye(4)[[0, 1]], recon, np.ones((2, 3, 4)), 0.9)
        assert bd.recon == 0.0
        assert abs(bd.total - 1.2476649) < 1e-7
        assert abs(total.item() - bd.total) < 1e-12

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_breakdown_identity(self, params, batch, alpha):
        x, onehot, overt = batch
        logits, _, recon = dal_forward(x, params, dal_variant(params.config, True), "eval")
        total, bd = combined_loss(logits, onehot, recon, overt, alpha)
        assert abs(bd.total - (alpha * bd.ce + (1 - alpha) * bd.recon)) < 1e-12
        assert abs(total.item() - bd.total) < 1e-12

    def test_alpha_one_is_pure_ce(self, params, batch):
        x, onehot, overt = batch
        logits, _, recon = dal_forward(x, params, dal_variant(params.config, True), "eval")
        total, bd = combined_loss(logits, onehot, recon, overt, 1.0)
        assert bd.total == bd.ce
        backward(total)
        for name in params.names(DECODER_PREFIXES):
            assert not np.any(params.gradient(name)), name

    def test_overt_required_below_one(self):
        with pytest.raises(PairingError):
            combined_loss(Tensor(np.zeros((1, 4))), np.eye(4)[[0]], None, None, 0.9)

    def test_recon_gradient_reaches_first_block(self, params, batch):
        x, onehot, overt = batch
        logits, _, recon = dal_forward(x, params, dal_variant(params.config, True), "train")
        total, _ = combined_loss(logits, onehot, recon, overt, 0.0)
        backward(total)
        assert np.any(params.gradient("enc1.temporal.weight"))
        assert np.any(params.gradient("enc1.spatial.weight"))
        assert not np.any(params.gradient("clf.weight"))


class TestVariant:
    def test_without_overt(self, params, batch):
        x, onehot, overt = batch
        variant = dal_variant(params.config, use_overt=False)
        assert variant.condition == "wo" and variant.alpha == 1.0
        logits, _, recon = dal_forward(x, params, variant, "train")
        assert recon is None
        total, bd = combined_loss(logits, onehot, recon, None, variant.alpha)
        assert bd.recon is None
        backward(total)
        assert all(not np.any(params.gradient(n)) for n in params.names(DECODER_PREFIXES))

    def test_with_overt_has_both_terms(self, params, batch):
        x, onehot, overt = batch
        variant = dal_variant(params.config, use_overt=True)
        assert variant.alpha == pytest.approx(0.9)
        logits, _, recon = dal_forward(x, params, variant, "train")
        _, bd = combined_loss(logits, onehot, recon, overt, variant.alpha)
        assert bd.ce > 0 and bd.recon > 0

    def test_wo_checkpoint_loads_into_w_encoder(self, tiny_model, tiny_train, tmp_path, rng):
        x = rng.standard_normal((8, 4, 64))
        labels = np.arange(8) % 4
        wo, _ = train_dal(x, labels, None, tiny_model, tiny_train, dal_variant(tiny_model, False), seed=1)
        save_params(wo, str(tmp_path / "ckpt"), {"condition": "wo"})
        w = init_dal_params(tiny_model, np.random.default_rng(99), np.float64)
        meta = load_params(str(tmp_path / "ckpt"), w, ENCODER_PREFIXES + ("clf.",))
        assert meta == {"condition": "wo"}
        for name in wo.names(ENCODER_PREFIXES + ("clf.",)):
            np.testing.assert_allclose(w[name].data, wo[name].data.astype(np.float32), rtol=1e-6)
        np.testing.assert_allclose(w.buffers["enc1.bn1"].mean, wo.buffers["enc1.bn1"].mean, rtol=1e-6)


class TestTraining:
    def test_step_is_deterministic(self, tiny_model, batch):
        train_cfg = TrainConfig(dtype="float64")
        results = []
        for _ in range(2):
            p = init_dal_params(tiny_model, np.random.default_rng(5), np.float64)
            dal_train_step(batch, p, AdamState(), tiny_model, train_cfg, rng=np.random.default_rng(6))
            results.append({n: p[n].data.copy() for n in p.names()})
        for name in results[0]:
            assert results[0][name].tobytes() == results[1][name].tobytes(), name

    def test_zero_lr_keeps_params(self, params, tiny_model, batch):
        before = {n: params[n].data.copy() for n in params.names()}
        _, bd = dal_train_step(batch, params, AdamState(), tiny_model, TrainConfig(lr=0.0, dtype="float64"))
        assert np.isfinite(bd.total)
        for name, value in before.items():
            np.testing.assert_array_equal(params[name].data, value)

    def test_nan_raises_divergence(self, params, tiny_model, batch):
        params["clf.weight"].data[0, 0] = np.nan
        with pytest.raises(DivergenceError):
            dal_train_step(batch, params, AdamState(), tiny_model, TrainConfig(dtype="float64"))

    def test_train_history(self, tiny_model, rng):
        x = rng.standard_normal((8, 4, 64)).astype(np.float32)
        cfg = TrainConfig(epochs=2, batch=4)
        params, history = train_dal(x, np.arange(8) % 4, x, tiny_model, cfg, dal_variant(tiny_model, True), seed=3)
        assert len(history) == 2 and history[0].recon is not None
        assert params["clf.weight"].dtype == np.float32
        assert predict_proba(params, x).shape == (8, 4)

    def test_method_fit_predict(self, tiny_model, tiny_train, rng):
        x = rng.standard_normal((8, 4, 64))
        method = DALMethod(tiny_model, tiny_train).fit(x, np.arange(8) % 4, x, "w", seed=2)
        preds = method.predict(x)
        assert preds.shape == (8,) and set(preds) <= {0, 1, 2, 3}

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_halves_on_easy_batch(self, tiny_model, seed):
        rng = np.random.default_rng(seed)
        templates = rng.standard_normal((4, 4, 64))
        labels = np.arange(16) % 4
        x = templates[labels] + 0.01 * rng.standard_normal((16, 4, 64))
        batch = (x, labels_to_onehot(labels, 4), x)
        train_cfg = TrainConfig(lr=1e-2, dtype="float64")
        params = init_dal_params(tiny_model, rng, np.float64)
        state = AdamState()
        first = dal_train_step(batch, params, state, tiny_model, train_cfg)[1].total
        for _ in range(199):
            last = dal_train_step(batch, params, state, tiny_model, train_cfg)[1].total
        assert last <= 0.5 * first


def test_full_dal_gradient():
    cfg = gradcheck_config(samples=64, channels=8)
    rng = np.random.default_rng(0)
    params = init_dal_params(cfg, rng, np.float64)
    variant = dal_variant(cfg, use_overt=True)
    x = rng.standard_normal((2, cfg.channels, cfg.samples))
    overt = rng.standard_normal(x.shape)
    onehot = labels_to_onehot([1, 3], cfg.n_classes)

    def loss(*_):
        logits, _, recon = dal_forward(x, params, variant, mode="eval")
        return combined_loss(logits, onehot, recon, overt, variant.alpha, cfg.recon_loss)[0]

    assert grad_check(loss, list(params.tensors.values()), max_checks=6, rng=rng) < NETWORK_TOL


def test_gradcheck_config_disables_dropout():
    cfg = gradcheck_config()
    assert (cfg.dropout_p, cfg.samples, cfg.channels) == (0.0, 64, 8)
