import dataclasses
import numpy as np
from rich.table import Table
from rich.panel import Panel
from rich import box
from src.core import _CONFIG, console
from src.engine import Tensor, mul, tensor_sum, concat, grad_check
from src.process_layers import (
    ConvSpec, BatchNormState, conv2d_forward, depthwise_conv2d_forward, pointwise_conv2d_forward,
    transpose_conv2d_forward, batch_norm_forward, elu_forward, avg_pool_forward, dense_forward,
    softmax_cross_entropy, l1_reconstruction_loss, l2_reconstruction_loss,
)
from src.process_model import (
    DALConfig, ENCODER_PREFIXES, DECODER_PREFIXES, init_dal_params, dal_forward, dal_variant,
    combined_loss, count_parameters,
)
from src.process_baseline import init_eegnet_params, eegnet_forward
from src.process_data import labels_to_onehot

LAYER_TOL = 1e-6
NETWORK_TOL = 1e-4

# --- KIỂM TRA GRADIENT ---

def _weighted(op, inputs, rng):
    """Loss vô hướng Σ op(x)·R với R ngẫu nhiên cố định (mọi phần tử đầu ra đều có trọng số)."""
    r = Tensor(rng.standard_normal(op(*inputs).shape))
    return lambda *xs: tensor_sum(mul(op(*xs), r))


def _layer_cases(rng):
    t = lambda *shape: Tensor(rng.standard_normal(shape))
    conv = ConvSpec(2, 3, stride_w=2, pad_w=1, in_depth=2, out_depth=3)
    depthwise = ConvSpec(3, 1, in_depth=2, out_depth=4, depth_multiplier=2)
    tconv = ConvSpec(1, 3, stride_w=2, in_depth=2, out_depth=3, output_crop=(1, 8))
    running = BatchNormState(2, np.float64)
    running.mean[:] = rng.standard_normal(2)
    running.var[:] = rng.uniform(0.5, 2.0, 2)
    onehot = labels_to_onehot([0, 3, 1], 4)
    target = rng.standard_normal((2, 1, 3, 4))
    cases = [
        ("conv2d", lambda x, w, b: conv2d_forward(x, conv, w, b), [t(2, 2, 3, 7), t(3, 2, 2, 3), t(3)]),
        ("depthwise_conv2d", lambda x, w: depthwise_conv2d_forward(x, depthwise, w), [t(2, 2, 3, 6), t(4, 1, 3, 1)]),
        ("pointwise_conv2d", pointwise_conv2d_forward, [t(2, 3, 1, 5), t(4, 3), t(4)]),
        ("transpose_conv2d", lambda x, w, b: transpose_conv2d_forward(x, tconv, w, b), [t(2, 2, 1, 4), t(2, 3, 1, 3), t(3)]),
        ("batch_norm[train]", lambda x, g, b: batch_norm_forward(x, g, b, mode="train"), [t(3, 2, 2, 4), t(2), t(2)]),
        ("batch_norm[eval]", lambda x, g, b: batch_norm_forward(x, g, b, mode="eval", running=running),
         [t(3, 2, 2, 4), t(2), t(2)]),
        ("elu", elu_forward, [t(2, 3, 1, 5)]),
        ("avg_pool", lambda x: avg_pool_forward(x, 4), [t(2, 2, 1, 8)]),
        ("dense", dense_forward, [t(3, 5), t(5, 4), t(4)]),
        ("concat", lambda a, b: concat([a, b], axis=1), [t(2, 2, 1, 3), t(2, 3, 1, 3)]),
    ]
    out = [(name, _weighted(op, inputs, rng), inputs) for name, op, inputs in cases]
    out += [
        ("softmax_cross_entropy", lambda z: softmax_cross_entropy(z, onehot), [t(3, 4)]),
        ("l1_reconstruction", lambda p: l1_reconstruction_loss(p, target), [t(2, 1, 3, 4)]),
        ("l2_reconstruction", lambda p: l2_reconstruction_loss(p, target), [t(2, 1, 3, 4)]),
    ]
    return out


def gradcheck_config(samples=64, channels=8):
    """Cấu hình DAL rút gọn cho kiểm tra gradient: float64, không dropout."""
    return dataclasses.replace(DALConfig(), samples=samples, channels=channels, dropout_p=0.0).validate()


def _network_cases(cfg, rng):
    """Mạng đầy đủ ở chế độ eval (BN dùng running stats), batch 3 trial."""
    x = rng.standard_normal((3, cfg.channels, cfg.samples))
    overt = rng.standard_normal((3, cfg.channels, cfg.samples))
    onehot = labels_to_onehot([0, 1, 2], cfg.n_classes)
    dal = init_dal_params(cfg, rng, np.float64)
    variant = dal_variant(cfg, use_overt=True)

    def dal_loss(*_):
        logits, _, recon = dal_forward(x, dal, variant, mode="eval")
        return combined_loss(logits, onehot, recon, overt, variant.alpha, cfg.recon_loss)[0]

    eegnet = init_eegnet_params(cfg, rng, np.float64)

    def eegnet_loss(*_):
        return softmax_cross_entropy(eegnet_forward(x, eegnet, mode="eval")[0], onehot)

    return [("DAL (full)", dal_loss, list(dal.tensors.values())),
            ("EEGNet (full)", eegnet_loss, list(eegnet.tensors.values()))]


def _gradcheck_suite_util(samples=64, channels=8, seed=0, max_checks=6):
    """Chạy toàn bộ kiểm tra gradient. Trả về (danh sách dòng kết quả, số tham số theo mô hình mặc định)."""
    rng = np.random.default_rng(seed)
    rows = []
    for name, fn, inputs in _layer_cases(rng):
        err = grad_check(fn, inputs, rng=rng)
        rows.append({"name": name, "error": err, "tol": LAYER_TOL, "ok": err < LAYER_TOL})
    for name, fn, inputs in _network_cases(gradcheck_config(samples, channels), rng):
        err = grad_check(fn, inputs, max_checks=max_checks, rng=rng)
        rows.append({"name": name, "error": err, "tol": NETWORK_TOL, "ok": err < NETWORK_TOL})
    full = DALConfig()
    dal = init_dal_params(full, np.random.default_rng(seed))
    counts = {
        "dal.encoder": count_parameters(dal, ENCODER_PREFIXES),
        "dal.classifier": count_parameters(dal, ("clf.",)),
        "dal.decoder": count_parameters(dal, DECODER_PREFIXES),
        "dal.total": count_parameters(dal),
        "eegnet.total": count_parameters(init_eegnet_params(full, np.random.default_rng(seed))),
    }
    return rows, counts


# --- HIỂN THỊ ---

def _gradcheck_table(rows, counts):
    table = Table(box=box.ROUNDED, border_style=_CONFIG.COLOR_STATS)
    table.add_column("Phép toán")
    table.add_column("Sai số tương đối", justify="right")
    table.add_column("Ngưỡng", justify="right", style="dim")
    table.add_column("", justify="center")
    for r in rows:
        mark = f"[{_CONFIG.COLOR_SUCCESS}]✔[/]" if r["ok"] else f"[{_CONFIG.COLOR_ERROR}]✘[/]"
        table.add_row(r["name"], f"{r['error']:.2e}", f"{r['tol']:.0e}", mark)
    table.caption = " | ".join(f"{k}: {v}" for k, v in counts.items())
    return Panel(table, title=f"[bold {_CONFIG.COLOR_STATS}]🧮 KIỂM TRA GRADIENT[/]",
                 border_style=_CONFIG.COLOR_STATS, expand=False)


def _accuracy_table(payload):
    """Bảng độ chính xác từ payload report.json."""
    tab = payload["table"]
    table = Table(box=box.MINIMAL_DOUBLE_HEAD, border_style=_CONFIG.COLOR_HEADER)
    table.add_column("Người", style="bold")
    for col in tab["columns"]:
        table.add_column(tab["labels"][col], justify="right")
    for row in tab["rows"]:
        table.add_row(row["subject"], *[row[c] or "-" for c in tab["columns"]])
    table.add_section()
    table.add_row("[bold]Avg.[/]", *[f"[bold]{tab['avg'][c]}[/]" for c in tab["columns"]])
    table.add_row("Std.", *[tab["std"][c] or "n<2" for c in tab["columns"]])
    if tab["improvement"]:
        table.caption = " | ".join(f"{m}: +{v}" if not v.startswith("-") else f"{m}: {v}"
                                   for m, v in tab["improvement"].items())
    return Panel(table, title=f"[bold {_CONFIG.COLOR_HEADER}]📊 ĐỘ CHÍNH XÁC (%)[/]",
                 border_style=_CONFIG.COLOR_HEADER, expand=False)


def _stats_table(stat):
    """Bảng các kiểm định theo đúng thứ tự thủ tục."""
    table = Table(box=box.ROUNDED, border_style=_CONFIG.COLOR_STATS)
    for col, just in (("#", "right"), ("Kiểm định", "left"), ("Nhóm", "left"), ("Thống kê", "right"),
                      ("p", "right"), ("p hiệu chỉnh", "right"), ("", "center")):
        table.add_column(col, justify=just)
    for step, t in enumerate(stat.ordered_tests(), start=1):
        adj = "-" if t.adjusted_p is None else f"{t.adjusted_p:.4g}"
        mark = f"[{_CONFIG.COLOR_WARNING}]bác bỏ H0[/]" if t.reject else ""
        table.add_row(str(step), t.name, ", ".join(t.groups), f"{t.statistic:.4g}", f"{t.p_value:.4g}", adj, mark)
    notes = []
    if not stat.normality_ok:
        notes.append("có cột không đạt giả định chuẩn")
    if not stat.homoscedasticity_ok:
        notes.append("phương sai không đồng nhất")
    table.caption = f"alpha = {stat.alpha}" + (f" | ⚠️ {'; '.join(notes)}" if notes else "")
    return Panel(table, title=f"[bold {_CONFIG.COLOR_STATS}]📐 THỐNG KÊ[/]", border_style=_CONFIG.COLOR_STATS, expand=False)


def _words_table(chosen, pool, min_score):
    table = Table(box=box.ROUNDED, show_header=False, border_style=_CONFIG.COLOR_INFO)
    table.add_row("Kho từ", f"{len(pool)} từ")
    table.add_row("Đã chọn", f"[bold green]{', '.join(chosen)}[/]")
    table.add_row("Điểm cặp nhỏ nhất", str(min_score))
    return Panel(table, title=f"[bold {_CONFIG.COLOR_INFO}]🔤 CHỌN TỪ[/]", border_style=_CONFIG.COLOR_INFO, expand=False)


def _block_done_util(key, block):
    """In một dòng tiến độ sau mỗi khối người × phương pháp × điều kiện."""
    subject, method, condition = key
    ok = [r.accuracy for r in block if r.ok]
    failed = len(block) - len(ok)
    acc = f"{100 * float(np.mean(ok)):.2f}%" if ok else "-"
    tail = f" [{_CONFIG.COLOR_ERROR}]{failed} fold lỗi[/]" if failed else ""
    console.print(f"  [{_CONFIG.COLOR_INFO}]{subject}[/] {method}/{condition}: {acc}{tail}")
