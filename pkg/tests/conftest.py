import json
import numpy as np
import pytest
from src.process_data import GenConfig, generate_subject_dataset
from src.process_signal import PrepConfig, preprocess_dataset
from src.process_model import DALConfig, TrainConfig

# Cấu hình thu nhỏ: 4 kênh, 2 giây ở 256 Hz → 128 Hz (256 mẫu sau tiền xử lý)
TINY_GEN = dict(n_subjects=2, trials_per_word=6, channels=4, fs=256)
TINY_PREP = dict(target_fs=128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_gen():
    return GenConfig(**TINY_GEN).validate()


@pytest.fixture
def tiny_prep():
    return PrepConfig(**TINY_PREP)


@pytest.fixture
def tiny_model():
    """DAL 4 kênh × 64 mẫu, không dropout."""
    return DALConfig(channels=4, samples=64, dropout_p=0.0).validate()


@pytest.fixture
def tiny_train():
    return TrainConfig(epochs=1, batch=8, dtype="float64")


@pytest.fixture
def tiny_dataset(tiny_gen):
    return generate_subject_dataset(tiny_gen, 1)


@pytest.fixture
def tiny_subjects(tiny_gen, tiny_prep):
    return [preprocess_dataset(generate_subject_dataset(tiny_gen, s), tiny_prep) for s in (1, 2)]


@pytest.fixture
def tiny_config_file(tmp_path):
    """File cấu hình JSON cho các test CLI (chỉ CSP-LDA, 1 lần lặp CV)."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "gen": dict(TINY_GEN, trials_per_word=5),
        "prep": TINY_PREP,
        "cv": {"k": 5, "repeats": 1},
        "train": {"epochs": 1, "batch": 8},
        "run": {"methods": ["csp_lda"], "save_checkpoints": False},
    }), encoding="utf-8")
    return str(path)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    """Thư mục gốc đầu ra riêng cho từng test (DAL_EEG_OUT)."""
    root = tmp_path / "runs"
    monkeypatch.setenv("DAL_EEG_OUT", str(root))
    return root
