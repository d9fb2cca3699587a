"""Dữ liệu EEG ghép cặp overt/imagined: kiểu dữ liệu, bộ sinh tổng hợp có seed và ghép cặp trial."""
from dataclasses import dataclass, field, asdict
import numpy as np
from src.core import _CONFIG, ConfigError, PairingError
from src.process_log import log_action

CONDITIONS = ("imagined", "overt")
PAIRING_POLICIES = ("by_index", "random_within_class")


@dataclass
class GenConfig:
    n_subjects: int = _CONFIG.GEN_N_SUBJECTS
    words: list = field(default_factory=lambda: list(_CONFIG.GEN_WORDS))
    trials_per_word: int = _CONFIG.GEN_TRIALS_PER_WORD
    channels: int = _CONFIG.GEN_CHANNELS
    fs: int = _CONFIG.GEN_FS
    window_s: float = _CONFIG.GEN_WINDOW_S
    imagined_snr_db: float = _CONFIG.GEN_IMAGINED_SNR_DB
    overt_snr_db: float = _CONFIG.GEN_OVERT_SNR_DB
    template_bandwidth: float = _CONFIG.GEN_TEMPLATE_BANDWIDTH
    carrier_range: tuple = _CONFIG.GEN_CARRIER_RANGE
    artifact_amplitude: float = _CONFIG.GEN_ARTIFACT_AMPLITUDE
    line_hz: float = _CONFIG.GEN_LINE_HZ
    line_amplitude: float = _CONFIG.GEN_LINE_AMPLITUDE
    microvolt_scale: float = _CONFIG.GEN_MICROVOLT_SCALE
    imagined_gain: float = _CONFIG.GEN_IMAGINED_GAIN
    overt_gain: float = _CONFIG.GEN_OVERT_GAIN
    seed: int = _CONFIG.GEN_SEED
    pairing_policy: str = _CONFIG.GEN_PAIRING_POLICY
    version: int = _CONFIG.GEN_VERSION

    @property
    def n_classes(self):
        return len(self.words)

    @property
    def samples(self):
        return int(round(self.fs * self.window_s))

    def validate(self):
        if self.overt_snr_db < self.imagined_snr_db:
            raise ConfigError(f"gen.overt_snr_db ({self.overt_snr_db}) phải >= gen.imagined_snr_db ({self.imagined_snr_db})")
        for name in ("n_subjects", "trials_per_word", "channels", "fs", "window_s", "template_bandwidth",
                     "microvolt_scale", "imagined_gain", "overt_gain"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"gen.{name} phải > 0, nhận {getattr(self, name)}")
        if self.artifact_amplitude < 0 or self.line_amplitude < 0:
            raise ConfigError("gen.artifact_amplitude / gen.line_amplitude không được âm")
        if len(self.words) < 2 or len(set(self.words)) != len(self.words):
            raise ConfigError(f"gen.words cần ít nhất 2 từ phân biệt, nhận {self.words}")
        lo, hi = self.carrier_range
        if not 0 < lo < hi < self.fs / 2:
            raise ConfigError(f"gen.carrier_range {self.carrier_range} phải nằm trong (0, fs/2)")
        if abs(self.fs * self.window_s - self.samples) > 1e-9:
            raise ConfigError("gen.fs × gen.window_s phải là số nguyên mẫu")
        if self.pairing_policy not in PAIRING_POLICIES:
            raise ConfigError(f"gen.pairing_policy không hợp lệ: '{self.pairing_policy}'")
        return self


@dataclass
class EEGTrial:
    data: np.ndarray          # [channels, samples]
    label: int
    condition: str
    subject_id: str
    trial_index: int          # thứ tự trong (label, condition)


@dataclass
class PairedDataset:
    """Bộ dữ liệu của một người: trial sắp theo nhãn rồi theo trial_index."""
    subject_id: str
    fs: float
    words: list
    trials_per_word: int
    imagined: np.ndarray      # [n, C, T] float32
    overt: np.ndarray
    imagined_labels: np.ndarray
    overt_labels: np.ndarray
    pairing: np.ndarray       # pairing[i] = chỉ số trial overt của trial imagined i
    pairing_policy: str = "by_index"
    seeds: dict = field(default_factory=dict)
    version: int = _CONFIG.GEN_VERSION

    @property
    def channels(self):
        return self.imagined.shape[1]

    @property
    def samples(self):
        return self.imagined.shape[2]

    def trials(self, condition):
        arr, labels = (self.imagined, self.imagined_labels) if condition == "imagined" else (self.overt, self.overt_labels)
        counters = {}
        for i in range(arr.shape[0]):
            lab = int(labels[i])
            k = counters.get(lab, 0)
            counters[lab] = k + 1
            yield EEGTrial(arr[i], lab, condition, self.subject_id, k)

    def paired_overt(self, indices=None):
        """Trial overt ghép với các trial imagined được chọn (mặc định: tất cả)."""
        idx = np.arange(len(self.pairing)) if indices is None else np.asarray(indices)
        return self.overt[self.pairing[idx]]

    def validate_pairing(self):
        if len(self.pairing) != len(self.imagined_labels):
            raise PairingError(f"Bảng ghép cặp có {len(self.pairing)} dòng, cần {len(self.imagined_labels)}")
        if np.any(self.pairing < 0) or np.any(self.pairing >= len(self.overt_labels)):
            raise PairingError("Bảng ghép cặp trỏ ra ngoài tập trial overt")
        bad = np.flatnonzero(self.overt_labels[self.pairing] != self.imagined_labels)
        if bad.size:
            raise PairingError(f"{bad.size} cặp khác nhãn (trial imagined đầu tiên: {int(bad[0])})")
        return self


# --- Bộ sinh tổng hợp ---

def _band_limited(rng, n, fs, bandwidth):
    """Nhiễu trắng lọc thông thấp trong miền tần số, chuẩn hóa về RMS 1."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[freqs > bandwidth] = 0
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _pink_noise(rng, channels, n):
    """Nhiễu 1/f theo từng kênh, phương sai đơn vị."""
    spec = np.fft.rfft(rng.standard_normal((channels, n)), axis=1)
    scale = np.ones(spec.shape[1])
    scale[1:] = 1.0 / np.sqrt(np.arange(1, spec.shape[1]))
    scale[0] = 0.0
    x = np.fft.irfft(spec * scale, n, axis=1)
    return x / (x.std(axis=1, keepdims=True) + 1e-12)


def _template_rng(cfg, subject_seed):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, subject_seed, 0]))


def class_templates(cfg, subject_seed):
    """Template tiềm ẩn z_c của từng lớp: [n_classes, channels, samples], RMS đơn vị.

    Mỗi lớp có một sóng mang riêng trong carrier_range, đường bao băng hẹp và
    một mẫu trộn không gian riêng trên các kênh.
    """
    cfg.validate()
    rng = _template_rng(cfg, subject_seed)
    n, t = cfg.samples, np.arange(cfg.samples) / cfg.fs
    lo, hi = cfg.carrier_range
    step = (hi - lo) / cfg.n_classes
    out = np.empty((cfg.n_classes, cfg.channels, n))
    for c in range(cfg.n_classes):
        carrier = lo + step * (c + rng.uniform(0.25, 0.75))
        source = _band_limited(rng, n, cfg.fs, cfg.template_bandwidth) * np.cos(2 * np.pi * carrier * t + rng.uniform(0, 2 * np.pi))
        pattern = rng.standard_normal(cfg.channels)
        z = np.outer(pattern, source)
        out[c] = z / np.sqrt(np.mean(z ** 2))
    return out


def _trial_envelope(rng, n):
    # Đường bao Tukey với biên độ ngẫu nhiên theo trial
    ramp = max(1, n // 10)
    env = np.ones(n)
    taper = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
    env[:ramp], env[n - ramp:] = taper, taper[::-1]
    return env * rng.uniform(0.7, 1.3)


def _articulation_burst(rng, cfg):
    """Artifact phát âm: burst nhiễu rộng băng có cửa sổ Hann, mạnh ở các kênh đầu."""
    n = cfg.samples
    dur = max(2, int(0.3 * cfg.fs))
    onset = int(rng.integers(0, max(1, n // 2 - dur)))
    burst = np.zeros(n)
    burst[onset:onset + dur] = np.hanning(dur) * rng.standard_normal(dur)
    weights = np.exp(-np.arange(cfg.channels) / max(1.0, cfg.channels / 4)) * rng.uniform(0.5, 1.0, cfg.channels)
    out = np.outer(weights, burst)
    return out / (np.sqrt(np.mean(out ** 2)) + 1e-12)


def _synth_trial(rng, template, gain, snr_db, cfg, overt):
    n = cfg.samples
    signal = gain * template * (_trial_envelope(rng, n) if not overt else 1.0)
    p_signal = np.mean(signal ** 2)
    noise = _pink_noise(rng, cfg.channels, n) * np.sqrt(p_signal / 10 ** (snr_db / 10))
    t = np.arange(n) / cfg.fs
    line = cfg.line_amplitude * noise.std() * np.sqrt(2) * np.sin(2 * np.pi * cfg.line_hz * t + rng.uniform(0, 2 * np.pi))
    x = signal + noise + line[None, :]
    if overt:
        x = x + cfg.artifact_amplitude * np.sqrt(p_signal) * _articulation_burst(rng, cfg)
    return (cfg.microvolt_scale * x).astype(np.float32)


def generate_subject_dataset(cfg, subject_seed, subject_id=None):
    """Sinh một PairedDataset; xác định hoàn toàn bởi (cfg.seed, subject_seed)."""
    cfg.validate()
    templates = class_templates(cfg, subject_seed)
    im_rng, ov_rng, pair_seed = [np.random.default_rng(s) for s in
                                 np.random.SeedSequence([cfg.seed, subject_seed, 1]).spawn(3)]
    n_total = cfg.n_classes * cfg.trials_per_word
    labels = np.repeat(np.arange(cfg.n_classes), cfg.trials_per_word)
    imagined = np.empty((n_total, cfg.channels, cfg.samples), dtype=np.float32)
    overt = np.empty_like(imagined)
    for i, c in enumerate(labels):
        imagined[i] = _synth_trial(im_rng, templates[c], cfg.imagined_gain, cfg.imagined_snr_db, cfg, overt=False)
        overt[i] = _synth_trial(ov_rng, templates[c], cfg.overt_gain, cfg.overt_snr_db, cfg, overt=True)

    ds = PairedDataset(
        subject_id=subject_id or f"S{subject_seed}", fs=cfg.fs, words=list(cfg.words),
        trials_per_word=cfg.trials_per_word, imagined=imagined, overt=overt,
        imagined_labels=labels.copy(), overt_labels=labels.copy(),
        pairing=np.arange(n_total), pairing_policy=cfg.pairing_policy,
        seeds={"gen_seed": int(cfg.seed), "subject_seed": int(subject_seed)}, version=cfg.version)
    ds.pairing = pair_trials(ds, cfg.pairing_policy, seed=int(pair_seed.integers(2 ** 31)))
    return ds


def generate_cohort(cfg):
    """Sinh dữ liệu cho n_subjects người (S1..Sn), thứ tự theo chỉ số người."""
    cfg.validate()
    out = []
    for s in range(1, cfg.n_subjects + 1):
        out.append(generate_subject_dataset(cfg, s))
        log_action("GENERATE", f"S{s}: {out[-1].imagined.shape[0]} imagined + {out[-1].overt.shape[0]} overt")
    return out


def pair_trials(dataset, policy="by_index", seed=0):
    """Bảng ghép cặp imagined → overt; luôn cùng nhãn."""
    im, ov = np.asarray(dataset.imagined_labels), np.asarray(dataset.overt_labels)
    if im.size == 0 or ov.size == 0:
        raise PairingError("Cần trial ở cả hai điều kiện để ghép cặp")
    if policy not in PAIRING_POLICIES:
        raise ConfigError(f"Chính sách ghép cặp không hợp lệ: '{policy}'")
    rng = np.random.default_rng(seed)
    table = np.full(im.size, -1, dtype=np.int64)
    for c in np.unique(im):
        im_idx, ov_idx = np.flatnonzero(im == c), np.flatnonzero(ov == c)
        if ov_idx.size == 0:
            raise PairingError(f"Lớp {int(c)} không có trial overt nào")
        if policy == "by_index":
            if im_idx.size != ov_idx.size:
                raise PairingError(f"Lớp {int(c)}: {im_idx.size} imagined khác {ov_idx.size} overt (by_index cần bằng nhau)")
            table[im_idx] = ov_idx
        elif ov_idx.size >= im_idx.size:
            table[im_idx] = rng.permutation(ov_idx)[:im_idx.size]
        else:
            table[im_idx] = rng.choice(ov_idx, size=im_idx.size, replace=True)
    return table


def labels_to_onehot(labels, n_classes):
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return out


def nearest_template_predict(trials, templates):
    """Bộ phân loại tham chiếu: chọn template có tương quan Pearson lớn nhất."""
    x = np.asarray(trials, dtype=np.float64).reshape(len(trials), -1)
    z = np.asarray(templates, dtype=np.float64).reshape(len(templates), -1)
    x = x - x.mean(axis=1, keepdims=True)
    z = z - z.mean(axis=1, keepdims=True)
    corr = (x @ z.T) / (np.linalg.norm(x, axis=1, keepdims=True) * np.linalg.norm(z, axis=1)[None, :] + 1e-12)
    return np.argmax(corr, axis=1)


def gen_config_dict(cfg):
    d = asdict(cfg)
    d["carrier_range"] = list(d["carrier_range"])
    return d
