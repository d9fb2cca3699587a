"""Bộ kiểm định thống kê: Shapiro–Wilk, Levene, ANOVA một chiều, t-test ghép cặp với hiệu chỉnh Bonferroni."""
import os, csv, math
from dataclasses import dataclass, field, asdict
import numpy as np
from scipy.special import betaln, ndtri
from scipy.stats import norm
from src.core import _CONFIG, StatsError, FormatError, _project_path

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 10000


def _beta_cf(x, a, b):
    """Phân số liên tục của I_x(a,b) theo thuật toán Lentz cải tiến."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _CF_TINY else _CF_TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _CF_TINY else _CF_TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise StatsError(f"Phân số liên tục của beta không hội tụ (x={x}, a={a}, b={b})")


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b) với a, b > 0, x ∈ [0, 1]."""
    if a <= 0 or b <= 0:
        raise StatsError(f"Tham số beta phải > 0 (a={a}, b={b})")
    if not 0 <= x <= 1:
        raise StatsError(f"x={x} nằm ngoài [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    log_front = a * math.log(x) + b * math.log1p(-x) - betaln(a, b)
    if x < (a + 1) / (a + b + 2):
        return float(math.exp(log_front) * _beta_cf(x, a, b) / a)
    return float(1.0 - math.exp(log_front) * _beta_cf(1 - x, b, a) / b)


def f_survival(f_stat, df1, df2):
    """P(F ≥ f_stat) với F ~ F(df1, df2)."""
    if df1 < 1 or df2 < 1:
        raise StatsError(f"Bậc tự do không hợp lệ: df1={df1}, df2={df2}")
    if f_stat < 0 or math.isnan(f_stat):
        raise StatsError(f"Thống kê F phải >= 0, nhận {f_stat}")
    if math.isinf(f_stat):
        return 0.0
    return regularized_incomplete_beta(df2 / (df2 + df1 * f_stat), df2 / 2, df1 / 2)


def t_survival(t_stat, df):
    """p hai phía P(|T| ≥ |t|) với T ~ t(df)."""
    if df < 1:
        raise StatsError(f"Bậc tự do không hợp lệ: df={df}")
    if math.isinf(t_stat):
        return 0.0
    return regularized_incomplete_beta(df / (df + t_stat * t_stat), df / 2, 0.5)


@dataclass
class TestResult:
    name: str
    statistic: float
    p_value: float
    n: list
    groups: list = field(default_factory=list)
    df: list = field(default_factory=list)
    adjusted_p: float = None
    alpha: float = _CONFIG.STATS_ALPHA
    flags: dict = field(default_factory=dict)

    @property
    def reject(self):
        """Bác bỏ H0 ở mức alpha (dùng p đã hiệu chỉnh nếu có)."""
        p = self.p_value if self.adjusted_p is None else self.adjusted_p
        return bool(p < self.alpha)

    def to_dict(self):
        d = asdict(self)
        d["reject"] = self.reject
        return d


# --- Shapiro–Wilk (xấp xỉ Royston) ---

_SW_C1 = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056]
_SW_C2 = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633]


def _poly(coefs, x):
    return sum(c * x ** i for i, c in enumerate(coefs))


def _shapiro_weights(n):
    if n == 3:
        s = math.sqrt(0.5)
        return np.array([-s, 0.0, s])
    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    summ2 = float(np.sum(m ** 2))
    u = 1 / math.sqrt(n)
    an = _poly(_SW_C1, u) + m[-1] / math.sqrt(summ2)
    if n > 5:
        an1 = _poly(_SW_C2, u) + m[-2] / math.sqrt(summ2)
        eps = (summ2 - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a = m / math.sqrt(eps)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        eps = (summ2 - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a = m / math.sqrt(eps)
        a[-1], a[0] = an, -an
    return a


def shapiro_wilk(x):
    """Thống kê W và p-value cho 3 ≤ n ≤ 5000."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    n = x.size
    if not 3 <= n <= 5000:
        raise StatsError(f"Shapiro–Wilk cần 3 ≤ n ≤ 5000, nhận n={n}")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss <= 0 or x[-1] - x[0] < 1e-19 * max(abs(x[0]), 1.0):
        raise StatsError("Shapiro–Wilk: mẫu có phương sai bằng 0 (zero variance)")
    a = _shapiro_weights(n)
    w = min(float(np.dot(a, x)) ** 2 / ss, 1.0)

    if n == 3:
        p = (6 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return TestResult("shapiro_wilk", w, float(min(max(p, 0.0), 1.0)), [n])
    if w >= 1.0:
        return TestResult("shapiro_wilk", w, 1.0, [n])
    log1mw = math.log1p(-w)
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        mu = 0.5440 - 0.39978 * n + 0.025054 * n ** 2 - 0.0006714 * n ** 3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n ** 2 - 0.0020322 * n ** 3)
        if log1mw >= gamma:
            return TestResult("shapiro_wilk", w, 0.0, [n])
        z = (-math.log(gamma - log1mw) - mu) / sigma
    else:
        ln = math.log(n)
        mu = -1.5861 - 0.31082 * ln - 0.083751 * ln ** 2 + 0.0038915 * ln ** 3
        sigma = math.exp(-0.4803 - 0.082676 * ln + 0.0030302 * ln ** 2)
        z = (log1mw - mu) / sigma
    return TestResult("shapiro_wilk", w, float(norm.sf(z)), [n])


# --- ANOVA & Levene ---

def _groups(groups, min_n=2):
    gs = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(gs) < 2:
        raise StatsError(f"Cần ít nhất 2 nhóm, nhận {len(gs)}")
    for i, g in enumerate(gs):
        if g.size < min_n:
            raise StatsError(f"Nhóm {i} chỉ có {g.size} giá trị, cần >= {min_n}")
    return gs


def _anova_parts(gs):
    allv = np.concatenate(gs)
    grand = allv.mean()
    ssb = float(sum(g.size * (g.mean() - grand) ** 2 for g in gs))
    ssw = float(sum(np.sum((g - g.mean()) ** 2) for g in gs))
    return ssb, ssw, len(gs) - 1, allv.size - len(gs)


def one_way_anova(groups):
    gs = _groups(groups)
    ssb, ssw, df1, df2 = _anova_parts(gs)
    if ssw <= 0:
        raise StatsError("ANOVA: phương sai trong nhóm bằng 0 (degenerate within-group variance)")
    f_stat = (ssb / df1) / (ssw / df2)
    return TestResult("anova", f_stat, f_survival(f_stat, df1, df2), [g.size for g in gs], df=[df1, df2])


def levene(groups):
    """Levene cổ điển (căn giữa theo trung bình): ANOVA trên |x − mean nhóm|."""
    gs = _groups(groups)
    z = [np.abs(g - g.mean()) for g in gs]
    ssb, ssw, df1, df2 = _anova_parts(z)
    n = [g.size for g in gs]
    if ssw <= 0 and ssb <= 0:
        return TestResult("levene", 0.0, 1.0, n, df=[df1, df2], flags={"degenerate": True})
    if ssw <= 0:
        return TestResult("levene", math.inf, 0.0, n, df=[df1, df2], flags={"degenerate": True})
    f_stat = (ssb / df1) / (ssw / df2)
    return TestResult("levene", f_stat, f_survival(f_stat, df1, df2), n, df=[df1, df2])


# --- t-test & Bonferroni ---

def paired_t_test(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise StatsError(f"t-test ghép cặp cần hai mẫu cùng độ dài ({a.size} ≠ {b.size})")
    if a.size < 2:
        raise StatsError("t-test ghép cặp cần ít nhất 2 cặp")
    d = a - b
    df = d.size - 1
    sd = float(d.std(ddof=1))
    if sd == 0:
        if np.all(d == 0):
            return TestResult("paired_t", 0.0, 1.0, [d.size], df=[df])
        raise StatsError("t-test ghép cặp: hiệu số có phương sai bằng 0 (zero-variance differences)")
    t = float(d.mean() / (sd / math.sqrt(d.size)))
    return TestResult("paired_t", t, t_survival(t, df), [d.size], df=[df])


def unpaired_t_test(a, b):
    """t-test hai mẫu độc lập với phương sai gộp (Student)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise StatsError("t-test độc lập cần mỗi nhóm >= 2 giá trị")
    df = a.size + b.size - 2
    pooled = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / df
    diff = float(a.mean() - b.mean())
    if pooled == 0:
        if diff == 0:
            return TestResult("unpaired_t", 0.0, 1.0, [a.size, b.size], df=[df])
        raise StatsError("t-test độc lập: phương sai gộp bằng 0 (zero variance)")
    t = diff / math.sqrt(pooled * (1 / a.size + 1 / b.size))
    return TestResult("unpaired_t", t, t_survival(t, df), [a.size, b.size], df=[df])


def bonferroni_pairwise(pairs, paired=True, m=None, labels=None, alpha=None):
    """Kiểm định từng cặp rồi hiệu chỉnh p_adj = min(1, m·p); m mặc định = số cặp."""
    m = len(pairs) if m is None else m
    alpha = _CONFIG.STATS_ALPHA if alpha is None else alpha
    out = []
    for i, (ga, gb) in enumerate(pairs):
        res = paired_t_test(ga, gb) if paired else unpaired_t_test(ga, gb)
        res.adjusted_p = min(1.0, m * res.p_value)
        res.alpha = alpha
        if labels:
            res.groups = list(labels[i])
        out.append(res)
    return out


# --- Báo cáo ---

@dataclass
class StatReport:
    """Kết quả theo đúng thứ tự thủ tục: chuẩn → đồng nhất phương sai → ANOVA → so sánh cặp."""
    alpha: float
    normality: list
    homoscedasticity: TestResult
    anova: TestResult
    pairwise: list

    @property
    def normality_ok(self):
        return all(not t.reject for t in self.normality)

    @property
    def homoscedasticity_ok(self):
        return not self.homoscedasticity.reject

    def ordered_tests(self):
        return list(self.normality) + [self.homoscedasticity, self.anova] + list(self.pairwise)

    def to_dict(self):
        tests = []
        for step, t in enumerate(self.ordered_tests(), start=1):
            d = t.to_dict()
            d["step"] = step
            tests.append(d)
        return {"alpha": self.alpha, "normality_ok": self.normality_ok,
                "homoscedasticity_ok": self.homoscedasticity_ok, "tests": tests}


def build_stat_report(columns, methods=None, alpha=None, m=None):
    """columns: {(method, condition): [độ chính xác từng người]} (cùng thứ tự người)."""
    alpha = _CONFIG.STATS_ALPHA if alpha is None else alpha
    methods = methods or list(dict.fromkeys(meth for meth, _ in columns))
    keys = [(meth, cond) for meth in methods for cond in ("wo", "w") if (meth, cond) in columns]
    if len(keys) < 2:
        raise StatsError("Cần ít nhất 2 cột kết quả cho ANOVA")
    normality = []
    for key in keys:
        res = shapiro_wilk(columns[key])
        res.alpha, res.groups = alpha, [f"{key[0]}_{key[1]}"]
        normality.append(res)
    groups = [columns[k] for k in keys]
    names = [f"{k[0]}_{k[1]}" for k in keys]
    homo = levene(groups)
    anova = one_way_anova(groups)
    for t in (homo, anova):
        t.alpha, t.groups = alpha, names
    pair_methods = [meth for meth in methods if (meth, "wo") in columns and (meth, "w") in columns]
    pairs = [(columns[(meth, "wo")], columns[(meth, "w")]) for meth in pair_methods]
    labels = [(f"{meth}_wo", f"{meth}_w") for meth in pair_methods]
    m = m or len(pairs)
    pairwise = bonferroni_pairwise(pairs, paired=True, m=m, labels=labels, alpha=alpha) if pairs else []
    return StatReport(alpha, normality, homo, anova, pairwise)


TABLE_COLUMNS = [("csp_lda", "wo"), ("csp_lda", "w"), ("eegnet", "wo"), ("eegnet", "w"), ("dal", "wo"), ("dal", "w")]


def load_accuracy_table(path=None):
    """Đọc bảng độ chính xác theo người (subject + 6 cột method_condition), đơn vị %."""
    path = path or _project_path(_CONFIG.REFERENCE_TABLE_FILE)
    if not os.path.exists(path):
        raise FormatError(f"Không tìm thấy bảng độ chính xác '{path}'")
    expected = ["subject"] + [f"{m}_{c}" for m, c in TABLE_COLUMNS]
    subjects, columns = [], {k: [] for k in TABLE_COLUMNS}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != expected:
            raise FormatError(f"{os.path.basename(path)} dòng 1: header cần {expected}, nhận {header}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise FormatError(f"{os.path.basename(path)} dòng {row_no}: cần {len(expected)} cột, có {len(row)}")
            subjects.append(row[0])
            for key, val in zip(TABLE_COLUMNS, row[1:]):
                try:
                    columns[key].append(float(val))
                except ValueError:
                    raise FormatError(f"{os.path.basename(path)} dòng {row_no}: '{val}' không phải số")
    return subjects, columns
