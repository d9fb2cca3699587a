from types import SimpleNamespace
import dataclasses
import numpy as np
import pytest
from src.core import ConfigError, PairingError
from src.process_data import (
    GenConfig, generate_subject_dataset, generate_cohort, class_templates, pair_trials,
    labels_to_onehot, nearest_template_predict,
)


class TestGenConfig:
    def test_defaults(self):
        cfg = GenConfig().validate()
        assert cfg.n_classes == 4 and cfg.samples == 2000 and cfg.channels == 58

    def test_overt_snr_must_not_be_lower(self):
        with pytest.raises(ConfigError, match="overt_snr_db"):
            GenConfig(imagined_snr_db=0.0, overt_snr_db=-5.0).validate()

    def test_duplicate_words(self):
        with pytest.raises(ConfigError):
            GenConfig(words=["Ba", "Ba", "Ku"]).validate()

    def test_carrier_below_nyquist(self):
        with pytest.raises(ConfigError):
            GenConfig(fs=64, carrier_range=(4.0, 40.0)).validate()


class TestGenerator:
    def test_default_shapes(self):
        ds = generate_subject_dataset(GenConfig(), 1)
        assert ds.imagined.shape == (200, 58, 2000)
        assert ds.overt.shape == (200, 58, 2000)
        assert ds.imagined.dtype == np.float32
        assert np.bincount(ds.imagined_labels).tolist() == [50, 50, 50, 50]

    def test_deterministic(self, tiny_gen):
        a, b = generate_subject_dataset(tiny_gen, 3), generate_subject_dataset(tiny_gen, 3)
        assert a.imagined.tobytes() == b.imagined.tobytes()
        assert a.overt.tobytes() == b.overt.tobytes()
        assert np.array_equal(a.pairing, b.pairing)

    def test_subjects_differ(self, tiny_gen):
        a, b = generate_subject_dataset(tiny_gen, 1), generate_subject_dataset(tiny_gen, 2)
        assert not np.array_equal(a.imagined, b.imagined)

    def test_high_snr_is_template_decodable(self, tiny_gen):
        cfg = dataclasses.replace(tiny_gen, imagined_snr_db=40.0, overt_snr_db=40.0, trials_per_word=10)
        ds = generate_subject_dataset(cfg, 5)
        preds = nearest_template_predict(ds.imagined, class_templates(cfg, 5))
        assert np.mean(preds == ds.imagined_labels) > 0.95

    @pytest.mark.parametrize("subject_seed", range(1, 6))
    def test_class_means_match_own_template(self, subject_seed):
        cfg = GenConfig(trials_per_word=20)
        ds = generate_subject_dataset(cfg, subject_seed)
        means = np.stack([ds.imagined[ds.imagined_labels == c].mean(axis=0) for c in range(cfg.n_classes)])
        preds = nearest_template_predict(means, class_templates(cfg, subject_seed))
        np.testing.assert_array_equal(preds, np.arange(cfg.n_classes))

    def test_accuracy_grows_with_snr(self, tiny_gen):
        accs = []
        for snr in (-30.0, -15.0, 0.0):
            cfg = dataclasses.replace(tiny_gen, trials_per_word=20, imagined_snr_db=snr,
                                      overt_snr_db=max(snr, tiny_gen.overt_snr_db))
            ds = generate_subject_dataset(cfg, 2)
            accs.append(np.mean(nearest_template_predict(ds.imagined, class_templates(cfg, 2)) == ds.imagined_labels))
        assert accs == sorted(accs)
        assert accs[-1] > accs[0]

    def test_overt_carries_more_signal(self, tiny_gen):
        ds = generate_subject_dataset(tiny_gen, 1)
        z = class_templates(tiny_gen, 1)
        acc_im = np.mean(nearest_template_predict(ds.imagined, z) == ds.imagined_labels)
        acc_ov = np.mean(nearest_template_predict(ds.overt, z) == ds.overt_labels)
        assert acc_ov >= acc_im

    def test_cohort(self, tiny_gen):
        cohort = generate_cohort(tiny_gen)
        assert [d.subject_id for d in cohort] == ["S1", "S2"]
        assert cohort[1].seeds == {"gen_seed": tiny_gen.seed, "subject_seed": 2}

    def test_trial_iterator(self, tiny_dataset):
        trials = list(tiny_dataset.trials("imagined"))
        assert len(trials) == 24
        assert trials[7].label == 1 and trials[7].trial_index == 1
        assert trials[0].data.shape == (4, 512)


class TestPairing:
    def test_by_index(self, tiny_dataset):
        table = pair_trials(tiny_dataset, "by_index")
        np.testing.assert_array_equal(table, np.arange(24))

    def test_random_within_class_deterministic(self, tiny_dataset):
        a = pair_trials(tiny_dataset, "random_within_class", seed=11)
        b = pair_trials(tiny_dataset, "random_within_class", seed=11)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, np.arange(24))

    @pytest.mark.parametrize("policy", ["by_index", "random_within_class"])
    def test_labels_always_match(self, tiny_dataset, policy):
        table = pair_trials(tiny_dataset, policy, seed=3)
        assert np.sum(tiny_dataset.overt_labels[table] != tiny_dataset.imagined_labels) == 0

    def test_missing_class(self):
        ds = SimpleNamespace(imagined_labels=np.array([0, 0, 1]), overt_labels=np.array([0, 0, 0]))
        with pytest.raises(PairingError, match="Lớp 1"):
            pair_trials(ds, "random_within_class")

    def test_by_index_needs_equal_counts(self):
        ds = SimpleNamespace(imagined_labels=np.array([0, 0, 1]), overt_labels=np.array([0, 1]))
        with pytest.raises(PairingError):
            pair_trials(ds, "by_index")

    def test_unknown_policy(self, tiny_dataset):
        with pytest.raises(ConfigError):
            pair_trials(tiny_dataset, "nearest")

    def test_validate_pairing_rejects_cross_label(self, tiny_dataset):
        tiny_dataset.pairing = tiny_dataset.pairing.copy()
        tiny_dataset.pairing[0] = len(tiny_dataset.pairing) - 1
        with pytest.raises(PairingError, match="khác nhãn"):
            tiny_dataset.validate_pairing()


def test_onehot():
    np.testing.assert_array_equal(labels_to_onehot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
