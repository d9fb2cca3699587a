"""Báo cáo từ file kết quả: bảng độ chính xác theo người, ma trận nhầm lẫn, biểu đồ SVG, thống kê, provenance.

Mọi file sinh ra chỉ phụ thuộc vào nội dung results.csv nên chạy lại cho kết quả giống hệt từng byte.
"""
import os, csv, io, math
from src.core import _CONFIG, FormatError, StatsError, _canonical_json, _sha256, _atomic_write
from src.process_eval import (
    CONDITIONS, CONDITION_LABELS, METHOD_LABELS, results_header, read_results, aggregate_results,
    pooled_confusion, row_normalize, per_word_tpr,
)
from src.process_stats import build_stat_report
from src.process_log import log_action

REPORT_FILE = "report.json"
STAT_FILE = "stat_report.json"
CHART_FILE = "accuracy_chart.svg"
PROVENANCE_FILE = "provenance.json"
CONFIG_ECHO_FILE = "config.json"
NORMALIZATION_NOTE = "accuracy / grand mean of all method-condition cells"
_FIXED_COLUMNS = 7


def _fmt(value, decimals=None):
    if value is None:
        return None
    decimals = _CONFIG.REPORT_DECIMALS if decimals is None else decimals
    return f"{value:.{decimals}f}"


def infer_n_classes(path):
    """Số lớp suy từ header (các cột c{t}{p} sau 7 cột cố định)."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            header = next(csv.reader(f), None)
    except FileNotFoundError:
        raise FormatError(f"Không tìm thấy file kết quả '{path}'")
    n_conf = len(header or []) - _FIXED_COLUMNS
    k = int(round(math.sqrt(max(n_conf, 0))))
    if not header or n_conf <= 0 or k * k != n_conf or header != results_header(k):
        raise FormatError(f"{os.path.basename(path)} dòng 1: header không đúng schema")
    return k


def chance_level(n_classes):
    return 1.0 / n_classes


def class_names(words, n_classes):
    words = list(words or [])
    return words if len(words) == n_classes else [f"c{i}" for i in range(n_classes)]


def _ordered_methods(results):
    seen = list(dict.fromkeys(r.method for r in results))
    return [m for m in METHOD_LABELS if m in seen] + [m for m in seen if m not in METHOD_LABELS]


def summarize_methods(results):
    """{method: MethodSummary} theo thứ tự CSP-LDA, EEGNet, DAL."""
    return {m: aggregate_results([r for r in results if r.method == m]) for m in _ordered_methods(results)}


def accuracy_columns(summaries):
    """Cột độ chính xác (%) theo người, chỉ giữ những người có mặt ở mọi cột."""
    columns = {(m, c): s.per_subject for m, summ in summaries.items() for c, s in summ.conditions.items()}
    if not columns:
        return [], {}
    subjects = [s for s in next(iter(columns.values())) if all(s in col for col in columns.values())]
    return subjects, {key: [col[s] for s in subjects] for key, col in columns.items()}


def table_analogue(summaries):
    """Bảng độ chính xác: dòng theo người + Avg./Std., cột method_condition, 2 chữ số thập phân."""
    cols, subjects = [], []
    for m, summ in summaries.items():
        for c in CONDITIONS:
            if c in summ.conditions:
                cols.append((m, c))
                subjects.extend(summ.conditions[c].per_subject)
    subjects = list(dict.fromkeys(subjects))
    rows = []
    for subj in subjects:
        row = {"subject": subj}
        for m, c in cols:
            row[f"{m}_{c}"] = _fmt(summaries[m].conditions[c].per_subject.get(subj))
        rows.append(row)
    avg = {f"{m}_{c}": _fmt(summaries[m].conditions[c].mean) for m, c in cols}
    std = {f"{m}_{c}": _fmt(summaries[m].conditions[c].std) for m, c in cols}
    # Mức cải thiện tính trên trung bình đã làm tròn, như bảng hiển thị
    improvement = {m: _fmt(round(s.conditions["w"].mean, _CONFIG.REPORT_DECIMALS)
                           - round(s.conditions["wo"].mean, _CONFIG.REPORT_DECIMALS))
                   for m, s in summaries.items() if s.improvement is not None}
    return {"columns": [f"{m}_{c}" for m, c in cols],
            "labels": {f"{m}_{c}": f"{METHOD_LABELS.get(m, m)} {CONDITION_LABELS[c]}" for m, c in cols},
            "rows": rows, "avg": avg, "std": std, "improvement": improvement}


def confusion_tables(results, n_classes):
    """{(method, condition): ma trận tỉ lệ đã chuẩn hoá theo hàng} gộp mọi fold thành công."""
    out = {}
    for m in _ordered_methods(results):
        for c in CONDITIONS:
            rows = [r for r in results if r.method == m and r.condition == c]
            if rows:
                out[(m, c)] = row_normalize(pooled_confusion(rows, n_classes))
    return out


def confusion_csv(matrix, names):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["target\\predicted"] + list(names))
    for name, row in zip(names, matrix):
        w.writerow([name] + [_fmt(v) for v in row])
    return buf.getvalue()


def normalized_cells(summaries):
    """[(nhãn, điều kiện, độ chính xác chuẩn hoá)] và trung bình chung (%)."""
    cells = [(m, c, s.mean) for m, summ in summaries.items() for c, s in summ.conditions.items()]
    grand = sum(v for _, _, v in cells) / len(cells)
    return [(m, c, v / grand) for m, c, v in cells], grand


def render_chart(summaries, n_classes, width=None, height=None):
    """Biểu đồ cột SVG: độ chính xác / trung bình chung, kèm đường mức ngẫu nhiên."""
    width = width or _CONFIG.REPORT_CHART_WIDTH
    height = height or _CONFIG.REPORT_CHART_HEIGHT
    cells, grand = normalized_cells(summaries)
    chance = chance_level(n_classes)
    chance_norm = 100.0 * chance / grand
    top = max([v for _, _, v in cells] + [chance_norm]) * 1.15
    left, right, upper, lower = 48, 16, 40, 56
    plot_w, plot_h = width - left - right, height - upper - lower
    slot = plot_w / len(cells)
    bar_w = slot * 0.6

    def y(v):
        return upper + plot_h * (1.0 - v / top)

    fill = {"wo": "#9e9e9e", "w": "#1f77b4"}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<title>Normalized decoding accuracy ({NORMALIZATION_NOTE})</title>',
           f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" font-size="13">'
           f'Accuracy normalized to grand mean {_fmt(grand)}%</text>',
           f'<line x1="{left}" y1="{y(0):.2f}" x2="{width - right}" y2="{y(0):.2f}" stroke="#000"/>',
           f'<line x1="{left}" y1="{upper}" x2="{left}" y2="{y(0):.2f}" stroke="#000"/>']
    for tick in (0.0, 0.5, 1.0, 1.5):
        if tick <= top:
            out.append(f'<text x="{left - 6}" y="{y(tick) + 4:.2f}" text-anchor="end">{_fmt(tick)}</text>')
    for i, (m, c, v) in enumerate(cells):
        x = left + i * slot + (slot - bar_w) / 2
        out.append(f'<rect x="{x:.2f}" y="{y(v):.2f}" width="{bar_w:.2f}" height="{y(0) - y(v):.2f}" '
                   f'fill="{fill.get(c, "#555555")}"><title>{m}_{c}: {_fmt(v)}</title></rect>')
        out.append(f'<text x="{x + bar_w / 2:.2f}" y="{y(v) - 4:.2f}" text-anchor="middle">{_fmt(v)}</text>')
        out.append(f'<text x="{x + bar_w / 2:.2f}" y="{y(0) + 16:.2f}" text-anchor="middle">'
                   f'{METHOD_LABELS.get(m, m)}</text>')
        out.append(f'<text x="{x + bar_w / 2:.2f}" y="{y(0) + 30:.2f}" text-anchor="middle">'
                   f'{CONDITION_LABELS.get(c, c)}</text>')
    out.append(f'<line x1="{left}" y1="{y(chance_norm):.2f}" x2="{width - right}" y2="{y(chance_norm):.2f}" '
               f'stroke="#d62728" stroke-dasharray="6,4"/>')
    out.append(f'<text x="{width - right}" y="{y(chance_norm) - 4:.2f}" text-anchor="end" fill="#d62728">'
               f'chance {_fmt(chance)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def stat_report_for(summaries, alpha=None):
    """StatReport trên độ chính xác theo người; None kèm lý do nếu dữ liệu không đủ."""
    subjects, columns = accuracy_columns(summaries)
    if len(columns) < 2:
        return None, "cần ít nhất 2 cột phương pháp × điều kiện"
    if len(subjects) < 3:
        return None, f"cần ít nhất 3 người chung cho mọi cột, có {len(subjects)}"
    try:
        return build_stat_report(columns, list(summaries), alpha), None
    except StatsError as e:
        return None, str(e)


def build_report(results, n_classes, words=None, alpha=None):
    """Trả về (payload report.json, {(m, c): ma trận nhầm lẫn}, StatReport hoặc None)."""
    if not results:
        raise FormatError("File kết quả không có dòng nào")
    names = class_names(words, n_classes)
    summaries = summarize_methods(results)
    confusions = confusion_tables(results, n_classes)
    stat, reason = stat_report_for(summaries, alpha)
    cells, grand = normalized_cells(summaries)
    payload = {
        "toolkit": _CONFIG.TOOLKIT_NAME,
        "version": _CONFIG.TOOLKIT_VERSION,
        "n_classes": n_classes,
        "classes": names,
        "chance_level": chance_level(n_classes),
        "table": table_analogue(summaries),
        "failed_folds": {f"{m}_{c}": s.failed_folds for m, summ in summaries.items()
                         for c, s in summ.conditions.items()},
        "per_word_tpr": {f"{m}_{c}": dict(zip(names, (_fmt(v) for v in per_word_tpr(conf))))
                         for (m, c), conf in confusions.items()},
        "chart": {"normalization": NORMALIZATION_NOTE, "grand_mean": _fmt(grand),
                  "normalized": {f"{m}_{c}": _fmt(v) for m, c, v in cells},
                  "chance_normalized": _fmt(100.0 * chance_level(n_classes) / grand)},
        "stats": stat.to_dict() if stat else {"skipped": reason},
    }
    return payload, confusions, stat


def write_report(results_path, out_dir, words=None, alpha=None):
    """Ghi report.json, stat_report.json, confusion_*.csv, accuracy_chart.svg, provenance.json."""
    n_classes = infer_n_classes(results_path)
    results = read_results(results_path, n_classes)
    payload, confusions, stat = build_report(results, n_classes, words, alpha)
    names = payload["classes"]
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, REPORT_FILE), _canonical_json(payload))
    _atomic_write(os.path.join(out_dir, STAT_FILE), _canonical_json(payload["stats"]))
    for (m, c), conf in confusions.items():
        _atomic_write(os.path.join(out_dir, f"confusion_{m}_{c}.csv"), confusion_csv(conf, names))
    _atomic_write(os.path.join(out_dir, CHART_FILE), render_chart(summarize_methods(results), n_classes))
    with open(results_path, "r", encoding="utf-8", newline="") as f:
        source_hash = _sha256(f.read())
    _atomic_write(os.path.join(out_dir, PROVENANCE_FILE), _canonical_json({
        "toolkit": _CONFIG.TOOLKIT_NAME, "version": _CONFIG.TOOLKIT_VERSION,
        "source": os.path.basename(results_path), "source_sha256": source_hash,
        "reproduce": "python dal_eeg.py report <RESULTS_CSV> --out <REPORT_DIR>",
    }))
    log_action("REPORT", f"{results_path} -> {out_dir} ({len(results)} dòng)")
    return payload, stat


def run_provenance(run_config, datasets=None, command="run"):
    """Provenance của một thư mục chạy; đường dẫn để dạng placeholder để thư mục tái lập được từng byte."""
    commands = {
        "simulate": "python dal_eeg.py simulate --config <RUN_DIR>/config.json --out <DATA_DIR>",
        "run": "python dal_eeg.py run --config <RUN_DIR>/config.json --data <DATA_DIR> --out <NEW_RUN_DIR>",
    }
    return {
        "toolkit": _CONFIG.TOOLKIT_NAME,
        "version": _CONFIG.TOOLKIT_VERSION,
        "config_sha256": run_config.sha256(),
        "seeds": run_config.seeds(),
        "datasets": [{"subject": ds["subject_id"], "seeds": ds["seeds"],
                      "generator_version": ds["generator_version"]} for ds in (datasets or [])],
        "reproduce": commands[command],
    }


def write_run_echo(out_dir, run_config, datasets=None, command="run"):
    """config.json (cấu hình đã resolve) + provenance.json trong thư mục chạy."""
    _atomic_write(os.path.join(out_dir, CONFIG_ECHO_FILE), run_config.to_json())
    _atomic_write(os.path.join(out_dir, PROVENANCE_FILE),
                  _canonical_json(run_provenance(run_config, datasets, command)))
