"""Giao thức đánh giá: 5-fold CV phân tầng lặp 4 lần, ma trận nhầm lẫn, tổng hợp mean/std giữa các người."""
import os, csv, io, copy, zlib, logging
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor
import numpy as np
from src.core import (
    _CONFIG, ConfigError, DimensionError, DivergenceError, FormatError, LeakageError, NumericalError, StatsError,
    _atomic_write,
)
from src.process_log import log_action
from src.process_model import DALConfig, TrainConfig, DALMethod
from src.process_baseline import BaselineConfig, CspLdaMethod, EEGNetMethod

CONDITIONS = ("wo", "w")
CONDITION_LABELS = {"wo": "w/o overt", "w": "w/ overt"}
METHOD_LABELS = {"csp_lda": "CSP-LDA", "eegnet": "EEGNet", "dal": "DAL"}
# Lỗi trong một fold được ghi thành dòng failed; các fold khác vẫn chạy tiếp
FOLD_ERRORS = (DivergenceError, NumericalError, StatsError)


@dataclass
class CVConfig:
    k: int = _CONFIG.CV_K
    repeats: int = _CONFIG.CV_REPEATS
    seed: int = _CONFIG.CV_SEED

    def validate(self):
        if self.k < 2 or self.repeats < 1:
            raise ConfigError(f"cv.k phải >= 2 và cv.repeats >= 1 (nhận {self.k}, {self.repeats})")
        return self


@dataclass
class RunMatrix:
    methods: list = field(default_factory=lambda: list(_CONFIG.RUN_METHODS))
    conditions: list = field(default_factory=lambda: list(_CONFIG.RUN_CONDITIONS))
    jobs: int = _CONFIG.RUN_JOBS
    save_checkpoints: bool = _CONFIG.RUN_SAVE_CHECKPOINTS

    def validate(self):
        bad = [m for m in self.methods if m not in METHOD_LABELS]
        if bad or not self.methods:
            raise ConfigError(f"run.methods không hợp lệ: {bad or self.methods} (chọn trong {list(METHOD_LABELS)})")
        bad = [c for c in self.conditions if c not in CONDITIONS]
        if bad or not self.conditions:
            raise ConfigError(f"run.conditions không hợp lệ: {bad or self.conditions} (wo | w)")
        if self.jobs < 1:
            raise ConfigError(f"run.jobs phải >= 1, nhận {self.jobs}")
        return self


@dataclass
class CVPlan:
    k: int
    repeats: int
    base_seed: int
    assignments: np.ndarray        # [repeats, n_trials] chỉ số fold của từng trial

    def split(self, repeat, fold):
        """(train_idx, val_idx) của một fold; kiểm tra không rò rỉ lúc chạy."""
        a = self.assignments[repeat]
        val = np.flatnonzero(a == fold)
        train = np.flatnonzero(a != fold)
        check_disjoint(train, val, f"Lặp {repeat}, fold {fold}")
        return train, val


def check_disjoint(train_idx, val_idx, where="fold"):
    common = np.intersect1d(train_idx, val_idx)
    if common.size:
        raise LeakageError(f"{where}: {common.size} trial nằm ở cả tập huấn luyện và kiểm định (đầu tiên: {int(common[0])})")


def make_cv_splits(labels, k=None, repeats=None, base_seed=None):
    """Mỗi lần lặp r: xáo với seed base_seed + r rồi chia vòng tròn theo từng lớp."""
    k = _CONFIG.CV_K if k is None else k
    repeats = _CONFIG.CV_REPEATS if repeats is None else repeats
    base_seed = _CONFIG.CV_SEED if base_seed is None else base_seed
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < k):
        c = classes[np.argmin(counts)]
        raise ConfigError(f"Lớp {c} chỉ có {counts.min()} trial, cần >= k={k}")
    out = np.empty((repeats, y.size), dtype=np.int64)
    for r in range(repeats):
        rng = np.random.default_rng(base_seed + r)
        for c in classes:
            idx = rng.permutation(np.flatnonzero(y == c))
            out[r, idx] = np.arange(idx.size) % k
    return CVPlan(k, repeats, base_seed, out)


@dataclass
class FoldResult:
    subject: str
    method: str
    condition: str
    repeat: int
    fold: int
    accuracy: float                # None khi fold thất bại
    confusion: np.ndarray
    status: str = "ok"             # "ok" | "failed"
    diagnostics: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def confusion_matrix(preds, targets, n_classes):
    """counts[đích][dự đoán]."""
    p, t = np.asarray(preds, dtype=int), np.asarray(targets, dtype=int)
    if p.shape != t.shape:
        raise DimensionError(f"preds ({p.size}) và targets ({t.size}) khác độ dài")
    for name, v in (("preds", p), ("targets", t)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise DimensionError(f"{name} có nhãn ngoài khoảng [0, {n_classes - 1}]")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def row_normalize(matrix):
    m = np.asarray(matrix, dtype=np.float64)
    sums = m.sum(axis=1, keepdims=True)
    return np.where(sums > 0, m / np.where(sums > 0, sums, 1.0), 0.0)


def make_method(name, model_cfg=None, train_cfg=None, baseline_cfg=None):
    baseline_cfg = baseline_cfg or BaselineConfig()
    if name == "dal":
        return DALMethod(model_cfg, train_cfg)
    if name == "eegnet":
        return EEGNetMethod(model_cfg, train_cfg)
    if name == "csp_lda":
        return CspLdaMethod(baseline_cfg.csp_filters_per_class, baseline_cfg.lda_shrinkage,
                            baseline_cfg.csp_diagonal_loading, (model_cfg or DALConfig()).n_classes)
    raise ConfigError(f"Phương pháp không hợp lệ: '{name}'")


def fold_seed(train_seed, subject, repeat, fold):
    """Seed riêng cho mỗi fold; không phụ thuộc thứ tự thực thi."""
    ss = np.random.SeedSequence([int(train_seed), zlib.crc32(str(subject).encode("utf-8")), repeat, fold])
    return int(ss.generate_state(1)[0])


def _run_fold(job):
    prepared, method, condition, plan, r, f, seed, n_classes, ckpt_dir = job
    train, val = plan.split(r, f)
    name = getattr(method, "name", type(method).__name__)
    log_action("FOLD_START", f"{prepared.subject_id} {name}/{condition} r{r} f{f}")
    try:
        method.fit(prepared.imagined[train], prepared.labels[train],
                   prepared.overt[train] if prepared.overt is not None else None, condition, seed)
        # Tập kiểm định luôn chỉ gồm trial imagined
        preds = method.predict(prepared.imagined[val])
    except FOLD_ERRORS as e:
        log_action("FOLD_FAILED", f"{prepared.subject_id} {name}/{condition} r{r} f{f}: {e}", logging.WARNING)
        return FoldResult(prepared.subject_id, name, condition, r, f, None,
                          np.zeros((n_classes, n_classes), dtype=np.int64), "failed", str(e))
    conf = confusion_matrix(preds, prepared.labels[val], n_classes)
    acc = float(np.trace(conf) / conf.sum())
    if ckpt_dir and hasattr(method, "save"):
        method.save(os.path.join(ckpt_dir, prepared.subject_id, name, condition, f"r{r}_f{f}"),
                    {"subject": prepared.subject_id, "method": name, "condition": condition,
                     "repeat": r, "fold": f, "seed": seed})
    log_action("FOLD_DONE", f"{prepared.subject_id} {name}/{condition} r{r} f{f}: acc={acc:.4f}")
    return FoldResult(prepared.subject_id, name, condition, r, f, acc, conf)


def run_experiment(prepared, method, condition, cv_plan, train_cfg=None, model_cfg=None,
                   baseline_cfg=None, jobs=1, checkpoint_dir=None):
    """Chạy đủ k·repeats fold cho một người × phương pháp × điều kiện.

    `method` là tên ('csp_lda' | 'eegnet' | 'dal') hoặc một đối tượng có fit/predict.
    Kết quả luôn theo thứ tự (repeat, fold) dù chạy song song.
    """
    if condition not in CONDITIONS:
        raise ConfigError(f"Điều kiện không hợp lệ: '{condition}'")
    train_cfg = train_cfg or TrainConfig()
    n_classes = (model_cfg or DALConfig()).n_classes
    proto = make_method(method, model_cfg, train_cfg, baseline_cfg) if isinstance(method, str) else method
    jobs_list = [(prepared, copy.deepcopy(proto), condition, cv_plan, r, f,
                  fold_seed(train_cfg.seed, prepared.subject_id, r, f), n_classes, checkpoint_dir)
                 for r in range(cv_plan.repeats) for f in range(cv_plan.k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, jobs_list))
    else:
        results = [_run_fold(j) for j in jobs_list]
    failed = sum(not r.ok for r in results)
    if failed:
        log_action("FOLDS_FAILED", f"{prepared.subject_id} {getattr(proto, 'name', '?')}/{condition}: {failed}/{len(results)}",
                   logging.WARNING)
    return results


# --- Tổng hợp ---

@dataclass
class ConditionSummary:
    per_subject: dict              # subject → độ chính xác trung bình (%)
    mean: float
    std: float                     # None khi n < 2
    n_subjects: int
    failed_folds: int = 0


@dataclass
class MethodSummary:
    method: str
    conditions: dict               # condition → ConditionSummary
    improvement: float = None      # mean(w) − mean(wo), điểm phần trăm

    @property
    def std_flag(self):
        return {c: ("n<2" if s.std is None else "") for c, s in self.conditions.items()}


def summarize_values(values):
    """(mean, std mẫu n−1 hoặc None nếu n < 2)."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), (float(v.std(ddof=1)) if v.size >= 2 else None)


def aggregate_results(fold_results):
    """Trung bình từng người trên các fold thành công, rồi mean/std (n−1) giữa các người, theo %."""
    if not fold_results:
        raise ConfigError("Không có FoldResult nào để tổng hợp")
    methods = {r.method for r in fold_results}
    if len(methods) > 1:
        raise ConfigError(f"Không thể tổng hợp nhiều phương pháp cùng lúc: {sorted(methods)}")
    conditions = {}
    for cond in CONDITIONS:
        rows = [r for r in fold_results if r.condition == cond]
        if not rows:
            continue
        per_subject = {}
        for subj in dict.fromkeys(r.subject for r in rows):
            accs = [r.accuracy for r in rows if r.subject == subj and r.ok]
            if accs:
                per_subject[subj] = 100.0 * float(np.mean(accs))
        if not per_subject:
            raise ConfigError(f"Mọi fold của điều kiện '{cond}' đều thất bại")
        mean, std = summarize_values(list(per_subject.values()))
        conditions[cond] = ConditionSummary(per_subject, mean, std, len(per_subject),
                                            sum(not r.ok for r in rows))
    summary = MethodSummary(methods.pop(), conditions)
    if "w" in conditions and "wo" in conditions:
        summary.improvement = conditions["w"].mean - conditions["wo"].mean
    return summary


def pooled_confusion(fold_results, n_classes):
    total = np.zeros((n_classes, n_classes), dtype=np.int64)
    for r in fold_results:
        if r.ok:
            total += r.confusion
    return total


def per_word_tpr(confusion):
    """Tỉ lệ dương tính thật theo từng từ (đường chéo ma trận đã chuẩn hoá theo hàng)."""
    return np.diag(row_normalize(confusion))


# --- File kết quả ---

def results_header(n_classes):
    return (["subject", "method", "condition", "repeat", "fold", "status", "accuracy"]
            + [f"c{t}{p}" for t in range(n_classes) for p in range(n_classes)])


def results_to_csv(results, n_classes):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(results_header(n_classes))
    for r in results:
        w.writerow([r.subject, r.method, r.condition, r.repeat, r.fold, r.status,
                    "" if r.accuracy is None else repr(float(r.accuracy))] + [int(v) for v in r.confusion.ravel()])
    return buf.getvalue()


def write_results(path, results, n_classes):
    _atomic_write(path, results_to_csv(results, n_classes))


def read_results(path, n_classes):
    """Đọc file kết quả; sai schema → FormatError kèm số dòng."""
    header = results_header(n_classes)
    out = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first != header:
            raise FormatError(f"{os.path.basename(path)} dòng 1: header không đúng schema")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{os.path.basename(path)} dòng {row_no}: cần {len(header)} cột, có {len(row)}")
            try:
                status = row[5]
                if status not in ("ok", "failed"):
                    raise ValueError(status)
                acc = float(row[6]) if row[6] != "" else None
                if status == "ok" and (acc is None or not 0 <= acc <= 1):
                    raise ValueError(row[6])
                conf = np.array([int(v) for v in row[7:]], dtype=np.int64).reshape(n_classes, n_classes)
                if np.any(conf < 0):
                    raise ValueError("confusion < 0")
                out.append(FoldResult(row[0], row[1], row[2], int(row[3]), int(row[4]), acc, conf, status))
            except ValueError as e:
                raise FormatError(f"{os.path.basename(path)} dòng {row_no}: giá trị không hợp lệ ({e})")
    return out


def run_all(prepared_subjects, matrix, cv_cfg, train_cfg, model_cfg, baseline_cfg, results_path,
            checkpoint_dir=None, resume=False, on_block=None):
    """Chạy toàn bộ ma trận người × phương pháp × điều kiện; ghi lại file kết quả sau mỗi khối.

    Với resume=True, các khối đã đủ k·repeats dòng trong file cũ được giữ nguyên và bỏ qua.
    """
    matrix.validate()
    cv_cfg.validate()
    n_classes = model_cfg.n_classes
    done = {}
    if resume and os.path.exists(results_path):
        for r in read_results(results_path, n_classes):
            done.setdefault((r.subject, r.method, r.condition), []).append(r)
    per_block = cv_cfg.k * cv_cfg.repeats
    results = []
    for prepared in prepared_subjects:
        plan = make_cv_splits(prepared.labels, cv_cfg.k, cv_cfg.repeats, cv_cfg.seed)
        for method in matrix.methods:
            for cond in matrix.conditions:
                key = (prepared.subject_id, method, cond)
                if len(done.get(key, [])) == per_block:
                    results.extend(done[key])
                    log_action("RESUME_SKIP", f"{key}")
                    continue
                block = run_experiment(prepared, method, cond, plan, train_cfg, model_cfg, baseline_cfg,
                                       matrix.jobs, checkpoint_dir if matrix.save_checkpoints else None)
                results.extend(block)
                write_results(results_path, results, n_classes)
                if on_block:
                    on_block(key, block)
    write_results(results_path, results, n_classes)
    return results
