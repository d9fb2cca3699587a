"""Hai phương pháp đối chứng: CSP-LDA và EEGNet, cùng bộ giải trị riêng tổng quát đối xứng."""
from dataclasses import dataclass, field
import numpy as np
from scipy import linalg as sla
from src.core import _CONFIG, ConfigError, NumericalError, StatsError, DimensionError
from src.process_model import (
    DALConfig, TrainConfig, TrainingMode, init_params, encoder_forward, classifier_forward,
    train_dal, predict_proba, save_params,
)
from src.process_file import FileManager


@dataclass
class BaselineConfig:
    csp_filters_per_class: int = _CONFIG.CSP_FILTERS_PER_CLASS
    csp_diagonal_loading: float = _CONFIG.CSP_DIAGONAL_LOADING
    lda_shrinkage: float = _CONFIG.LDA_SHRINKAGE

    def validate(self):
        if self.csp_filters_per_class < 2 or self.csp_filters_per_class % 2:
            raise ConfigError(f"baseline.csp_filters_per_class phải chẵn và >= 2, nhận {self.csp_filters_per_class}")
        if self.csp_diagonal_loading < 0:
            raise ConfigError("baseline.csp_diagonal_loading không được âm")
        if not 0 <= self.lda_shrinkage <= 1:
            raise ConfigError(f"baseline.lda_shrinkage phải thuộc [0, 1], nhận {self.lda_shrinkage}")
        return self


# --- Bộ giải trị riêng ---

def _cholesky_pivot(b):
    """Chỉ số (1-based) của minor chính đầu tiên không xác định dương."""
    for k in range(1, b.shape[0] + 1):
        try:
            np.linalg.cholesky(b[:k, :k])
        except np.linalg.LinAlgError:
            return k
    return b.shape[0]


def _negligible(a, p, q, tol, floor):
    return abs(a[p, q]) <= max(tol * np.sqrt(abs(a[p, p] * a[q, q])), floor)


def jacobi_eigh(a, tol=None, max_sweeps=None):
    """Jacobi tuần hoàn có ngưỡng cho ma trận đối xứng. Trả về (trị riêng, vector riêng theo cột).

    Phần tử a_pq bị bỏ qua (gán 0) khi |a_pq| <= tol·sqrt(|a_pp·a_qq|); hội tụ khi
    một vòng quét không còn phép quay nào.
    """
    tol = _CONFIG.JACOBI_TOL if tol is None else tol
    max_sweeps = _CONFIG.JACOBI_MAX_SWEEPS if max_sweeps is None else max_sweeps
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    floor = tol * tol * max(np.max(np.abs(a), initial=0.0), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                if _negligible(a, p, q, tol, floor):
                    a[p, q] = a[q, p] = 0.0
                    continue
                rotated = True
                apq, h = a[p, q], a[q, q] - a[p, p]
                theta = 0.5 * h / apq
                if abs(theta) > 1e150:
                    t = apq / h
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(1 + theta * theta))
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                app, aqq = a[p, p] - t * apq, a[q, q] + t * apq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                a[p, :], a[q, :] = a[:, p], a[:, q]
                a[p, p], a[q, q] = app, aqq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return np.diag(a).copy(), v
    raise NumericalError(f"Jacobi không hội tụ sau {max_sweeps} vòng quét")


def symmetric_generalized_eig(a, b):
    """Giải A v = λ B v: làm trắng theo Cholesky của B rồi Jacobi. λ giảm dần, vᵀBv = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"A {a.shape} và B {b.shape} phải là ma trận vuông cùng cỡ")
    try:
        low = np.linalg.cholesky(b)
    except np.linalg.LinAlgError:
        raise NumericalError(f"B không xác định dương: Cholesky thất bại tại pivot {_cholesky_pivot(b)}")
    # C = L⁻¹ A L⁻ᵀ
    tmp = sla.solve_triangular(low, a, lower=True)
    c = sla.solve_triangular(low, tmp.T, lower=True).T
    vals, u = jacobi_eigh(0.5 * (c + c.T))
    vecs = sla.solve_triangular(low.T, u, lower=False)
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


# --- CSP ---

@dataclass
class CSPModel:
    filters: list                  # mỗi lớp một ma trận [channels, m]
    eigenvalues: list
    classes: list

    @property
    def m(self):
        return self.filters[0].shape[1]


def normalized_covariance(trial):
    x = np.asarray(trial, dtype=np.float64)
    cov = x @ x.T
    return cov / np.trace(cov)


def csp_fit(trials_by_class, m=None, loading=None):
    """CSP một-đấu-phần-còn-lại: mỗi lớp giữ m/2 vector riêng lớn nhất và m/2 nhỏ nhất."""
    m = _CONFIG.CSP_FILTERS_PER_CLASS if m is None else m
    loading = _CONFIG.CSP_DIAGONAL_LOADING if loading is None else loading
    if len(trials_by_class) < 2:
        raise ConfigError("CSP cần ít nhất 2 lớp")
    covs = []
    for c, trials in enumerate(trials_by_class):
        if len(trials) < 2:
            raise ConfigError(f"CSP cần >= 2 trial mỗi lớp, lớp {c} có {len(trials)}")
        covs.append(np.mean([normalized_covariance(t) for t in trials], axis=0))
    counts = [len(t) for t in trials_by_class]
    channels = covs[0].shape[0]
    if m < 2 or m % 2 or m > channels:
        raise ConfigError(f"Số bộ lọc m={m} phải chẵn, >= 2 và <= {channels}")

    filters, eigenvalues = [], []
    for c in range(len(covs)):
        rest_w = [counts[j] for j in range(len(covs)) if j != c]
        rest = np.average([covs[j] for j in range(len(covs)) if j != c], axis=0, weights=rest_w)
        composite = covs[c] + rest
        composite = composite + loading * np.trace(composite) * np.eye(channels)
        try:
            vals, vecs = symmetric_generalized_eig(covs[c], composite)
        except NumericalError as e:
            raise NumericalError(f"Hiệp phương sai tổng hợp của lớp {c} suy biến ({e}); hãy tăng shrinkage/diagonal loading")
        keep = list(range(m // 2)) + list(range(channels - m // 2, channels))
        filters.append(vecs[:, keep])
        eigenvalues.append(vals[keep])
    return CSPModel(filters, eigenvalues, list(range(len(covs))))


def csp_features(trials, model, floor=None):
    """Log của phương sai chuẩn hoá theo từng bank; trả về [n, n_classes·m] (hoặc vector nếu một trial)."""
    floor = _CONFIG.CSP_LOG_FLOOR if floor is None else floor
    x = np.asarray(trials, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    feats = []
    for w in model.filters:
        proj = np.einsum("cm,nct->nmt", w, x)
        var = proj.var(axis=2)
        total = var.sum(axis=1, keepdims=True)
        ratio = np.where(total > 0, var / np.where(total > 0, total, 1.0), 0.0)
        feats.append(np.log(np.maximum(ratio, floor)))
    out = np.concatenate(feats, axis=1)
    return out[0] if single else out


# --- LDA ---

@dataclass
class LDAModel:
    classes: np.ndarray
    means: np.ndarray              # [K, d]
    covariance: np.ndarray         # [d, d], đã shrink
    priors: np.ndarray
    shrinkage: float
    coef: np.ndarray = field(default=None)        # [d, K]
    intercept: np.ndarray = field(default=None)   # [K]


def lda_fit(features, labels, shrinkage=None):
    """LDA Gauss với hiệp phương sai chung co về (tr/d)·I theo hệ số γ."""
    gamma = _CONFIG.LDA_SHRINKAGE if shrinkage is None else shrinkage
    if not 0 <= gamma <= 1:
        raise ConfigError(f"Hệ số shrinkage γ phải thuộc [0, 1], nhận {gamma}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise StatsError("LDA cần ít nhất 2 lớp trong dữ liệu huấn luyện")
    d = x.shape[1]
    means = np.stack([x[y == k].mean(axis=0) for k in classes])
    centered = x - means[np.searchsorted(classes, y)]
    dof = max(x.shape[0] - classes.size, 1)
    s = centered.T @ centered / dof
    cov = (1 - gamma) * s + gamma * (np.trace(s) / d) * np.eye(d)
    try:
        chol = sla.cho_factor(cov, lower=True)
        if np.linalg.cond(cov) > 1 / np.finfo(float).eps:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise StatsError(f"Hiệp phương sai LDA suy biến với γ={gamma}; hãy dùng γ > 0")
    priors = np.array([np.mean(y == k) for k in classes])
    coef = sla.cho_solve(chol, means.T)
    intercept = -0.5 * np.sum(means.T * coef, axis=0) + np.log(priors)
    return LDAModel(classes, means, cov, priors, gamma, coef, intercept)


def lda_decision(model, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if model.means.shape[1] == 1 else x[None]
    return x @ model.coef + model.intercept


def lda_predict(model, features):
    """Trả về (nhãn, điểm); hoà thì chọn chỉ số lớp nhỏ nhất."""
    scores = lda_decision(model, features)
    return model.classes[np.argmax(scores, axis=1)], scores


# --- EEGNet ---

EEGNET_HEAD = "head"


def eegnet_variant():
    return TrainingMode(use_overt=False, alpha=1.0, include_decoder=False, head=EEGNET_HEAD)


def init_eegnet_params(config, rng, dtype=np.float32):
    """Cùng hình học encoder với DAL, thêm lớp dense softmax, không có decoder."""
    return init_params(config, rng, dtype, head=EEGNET_HEAD, include_decoder=False)


def eegnet_forward(x, params, mode="eval", rng=None):
    """Trả về (logits Tensor, probs ndarray)."""
    feat, _, _ = encoder_forward(x, params, mode, rng)
    return classifier_forward(feat, params, EEGNET_HEAD)


def baseline_with_overt(x, labels, overt, condition):
    """'w': tập huấn luyện = imagined ∪ overt ghép cặp (cùng nhãn); 'wo': chỉ imagined."""
    if condition == "wo":
        return np.asarray(x), np.asarray(labels)
    if condition != "w":
        raise ConfigError(f"Điều kiện không hợp lệ: '{condition}' (wo | w)")
    if overt is None or len(overt) != len(x):
        raise ConfigError("Điều kiện 'w' cần trial overt ghép với từng trial imagined")
    return np.concatenate([x, overt], axis=0), np.concatenate([labels, labels], axis=0)


class CspLdaMethod:
    name = "csp_lda"

    def __init__(self, m=None, shrinkage=None, loading=None, n_classes=None):
        self.m, self.shrinkage, self.loading = m, shrinkage, loading
        self.n_classes = n_classes or len(_CONFIG.GEN_WORDS)
        self.csp = self.lda = None

    def fit(self, x, labels, overt, condition, seed=None):
        x, y = baseline_with_overt(x, labels, overt, condition)
        self.csp = csp_fit([x[y == c] for c in range(self.n_classes)], self.m, self.loading)
        self.lda = lda_fit(csp_features(x, self.csp), y, self.shrinkage)
        return self

    def predict(self, x):
        return lda_predict(self.lda, csp_features(x, self.csp))[0]

    def save(self, folder, meta=None):
        tensors = {f"csp.filters.{c}": w for c, w in enumerate(self.csp.filters)}
        tensors.update({"lda.means": self.lda.means, "lda.covariance": self.lda.covariance,
                        "lda.priors": self.lda.priors, "lda.coef": self.lda.coef, "lda.intercept": self.lda.intercept})
        FileManager().write_checkpoint(folder, tensors, dict(meta or {}, shrinkage=self.lda.shrinkage,
                                                             classes=[int(c) for c in self.lda.classes]))


class EEGNetMethod:
    name = "eegnet"

    def __init__(self, model_cfg=None, train_cfg=None):
        self.model_cfg = model_cfg or DALConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.params = None
        self.history = []

    def fit(self, x, labels, overt, condition, seed):
        x, y = baseline_with_overt(x, labels, overt, condition)
        self.params, self.history = train_dal(x, y, None, self.model_cfg, self.train_cfg, eegnet_variant(), seed)
        return self

    def predict(self, x):
        return np.argmax(predict_proba(self.params, x, self.train_cfg.batch, head=EEGNET_HEAD), axis=1)

    def save(self, folder, meta=None):
        save_params(self.params, folder, meta)
