"""Chuỗi tiền xử lý: notch 60 Hz, resample chống alias, cắt cửa sổ nhiệm vụ, chuẩn hoá z-score."""
from dataclasses import dataclass
from fractions import Fraction
import numpy as np
from scipy import signal as sps
from src.core import _CONFIG, ConfigError, DimensionError, SpecError


@dataclass
class FilterSpec:
    kind: str                 # "notch" | "lowpass" | "highpass"
    freq: float               # tần số trung tâm (notch) hoặc tần số cắt
    fs: float
    q: float = None           # chỉ cho notch
    order: int = None         # chỉ cho lowpass/highpass

    def validate(self):
        if self.kind not in ("notch", "lowpass", "highpass"):
            raise SpecError(f"Loại bộ lọc không hợp lệ: '{self.kind}'")
        if not 0 < self.freq < self.fs / 2:
            raise SpecError(f"Tần số {self.freq} Hz phải nằm trong (0, Nyquist={self.fs / 2} Hz)")
        if self.kind == "notch" and not (self.q and self.q > 0):
            raise SpecError(f"Q của notch phải > 0, nhận {self.q}")
        if self.kind != "notch" and not (self.order and self.order >= 1):
            raise SpecError(f"Bậc bộ lọc phải >= 1, nhận {self.order}")
        return self


@dataclass
class PrepConfig:
    notch_hz: float = _CONFIG.PREP_NOTCH_HZ
    notch_q: float = _CONFIG.PREP_NOTCH_Q
    target_fs: int = _CONFIG.PREP_TARGET_FS
    window_s: float = _CONFIG.PREP_WINDOW_S
    normalize: str = _CONFIG.PREP_NORMALIZE
    lowpass_ratio: float = _CONFIG.PREP_LOWPASS_RATIO
    lowpass_order: int = _CONFIG.PREP_LOWPASS_ORDER
    highpass_hz: float = _CONFIG.PREP_HIGHPASS_HZ

    @property
    def window_samples(self):
        return int(round(self.window_s * self.target_fs))

    def validate(self, fs=None):
        if self.normalize not in ("per_channel_zscore", "none"):
            raise ConfigError(f"prep.normalize không hợp lệ: '{self.normalize}'")
        if self.target_fs <= 0 or self.window_s <= 0:
            raise ConfigError("prep.target_fs và prep.window_s phải > 0")
        if abs(self.window_s * self.target_fs - self.window_samples) > 1e-9:
            raise ConfigError(f"prep.window_s × prep.target_fs = {self.window_s * self.target_fs} không phải số nguyên")
        if not 0 < self.lowpass_ratio < 0.5:
            raise ConfigError(f"prep.lowpass_ratio phải thuộc (0, 0.5), nhận {self.lowpass_ratio}")
        if fs is not None and self.target_fs > fs:
            raise ConfigError(f"prep.target_fs ({self.target_fs}) lớn hơn fs gốc ({fs})")
        return self


def design_notch(fs, f0, q):
    FilterSpec("notch", f0, fs, q=q).validate()
    return sps.iirnotch(f0, q, fs=fs)


def notch_response(fs, f0, q, freqs):
    """Biên độ |H(f)| của biquad (một chiều) tại các tần số cho trước."""
    b, a = design_notch(fs, f0, q)
    _, h = sps.freqz(b, a, worN=np.atleast_1d(np.asarray(freqs, dtype=float)), fs=fs)
    return np.abs(h)


def notch_filter(x, fs, f0=None, q=None):
    """Notch biquad áp dụng thuận-nghịch (pha 0) trên từng kênh."""
    f0 = _CONFIG.PREP_NOTCH_HZ if f0 is None else f0
    q = _CONFIG.PREP_NOTCH_Q if q is None else q
    b, a = design_notch(fs, f0, q)
    return sps.filtfilt(b, a, np.asarray(x, dtype=np.float64), axis=-1)


def highpass_filter(x, fs, cutoff, order=4):
    FilterSpec("highpass", cutoff, fs, order=order).validate()
    sos = sps.butter(order, cutoff, btype="highpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


def resample(x, fs_in, fs_out, lowpass_ratio=None, order=None):
    """Lọc thông thấp pha 0 tại lowpass_ratio·fs_out rồi hạ mẫu polyphase; T' = round(T·fs_out/fs_in)."""
    x = np.asarray(x, dtype=np.float64)
    if fs_out > fs_in:
        raise SpecError(f"Không hỗ trợ tăng mẫu ({fs_in} → {fs_out} Hz)")
    if fs_out == fs_in:
        return x.copy()
    lowpass_ratio = _CONFIG.PREP_LOWPASS_RATIO if lowpass_ratio is None else lowpass_ratio
    order = _CONFIG.PREP_LOWPASS_ORDER if order is None else order
    sos = sps.butter(order, lowpass_ratio * fs_out, btype="lowpass", fs=fs_in, output="sos")
    smoothed = sps.sosfiltfilt(sos, x, axis=-1)
    ratio = Fraction(fs_out).limit_denominator(10 ** 6) / Fraction(fs_in).limit_denominator(10 ** 6)
    y = sps.resample_poly(smoothed, ratio.numerator, ratio.denominator, axis=-1)
    n_out = int(round(x.shape[-1] * fs_out / fs_in))
    if y.shape[-1] < n_out:
        y = np.concatenate([y, np.repeat(y[..., -1:], n_out - y.shape[-1], axis=-1)], axis=-1)
    return y[..., :n_out]


def extract_task_window(x, fs, window_s):
    """Giữ window_s giây đầu (epoch đã căn theo thời điểm bắt đầu nhiệm vụ)."""
    n = int(round(fs * window_s))
    if x.shape[-1] < n:
        raise DimensionError(f"Trial chỉ có {x.shape[-1]} mẫu, cần {n}")
    return x[..., :n]


def zscore_normalize(x, floor=1e-12):
    """Chuẩn hoá từng kênh về trung bình 0, độ lệch chuẩn 1; kênh hằng → 0."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    ok = std >= floor
    return np.where(ok, (x - mean) / np.where(ok, std, 1.0), 0.0)


def preprocess_trials(trials, fs, cfg):
    """Áp dụng cùng một chuỗi cho mọi trial [n, C, T]; trả về float32 [n, C, window]."""
    cfg.validate(fs)
    out = np.empty((len(trials), trials.shape[1], cfg.window_samples), dtype=np.float32)
    for i, trial in enumerate(trials):
        out[i] = prepare_trial(trial, fs, cfg)
    return out


def prepare_trial(trial, fs, cfg):
    x = notch_filter(trial, fs, cfg.notch_hz, cfg.notch_q)
    if cfg.highpass_hz:
        x = highpass_filter(x, fs, cfg.highpass_hz)
    x = resample(x, fs, cfg.target_fs, cfg.lowpass_ratio, cfg.lowpass_order)
    x = extract_task_window(x, cfg.target_fs, cfg.window_s)
    if cfg.normalize == "per_channel_zscore":
        x = zscore_normalize(x)
    return x


@dataclass
class PreparedSubject:
    """Trial imagined đã tiền xử lý cùng trial overt ghép cặp (đã căn theo bảng ghép)."""
    subject_id: str
    imagined: np.ndarray      # [n, C, W]
    overt: np.ndarray         # [n, C, W], overt[i] ghép với imagined[i]
    labels: np.ndarray
    words: list


def preprocess_dataset(dataset, cfg=None, with_overt=True):
    """with_overt=False bỏ qua trial overt (PreparedSubject.overt = None), dùng cho chạy chỉ w/o."""
    cfg = cfg or PrepConfig()
    overt = None
    if with_overt:
        dataset.validate_pairing()
        overt = preprocess_trials(dataset.overt, dataset.fs, cfg)[dataset.pairing]
    imagined = preprocess_trials(dataset.imagined, dataset.fs, cfg)
    return PreparedSubject(dataset.subject_id, imagined, overt,
                           np.asarray(dataset.imagined_labels, dtype=int), list(dataset.words))
