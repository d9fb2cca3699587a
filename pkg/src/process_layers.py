"""Các phép toán lớp có vi phân cho DAL và EEGNet (layout NCHW)."""
from dataclasses import dataclass
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from src.core import _CONFIG, DimensionError, SpecError, ConfigError
from src.engine import Tensor, as_tensor, make_node


def _pads(p):
    return (int(p), int(p)) if np.isscalar(p) else (int(p[0]), int(p[1]))


def same_padding(k):
    """Padding 'same' cho stride 1: kernel chẵn lệch phải một mẫu."""
    return ((k - 1) // 2, k // 2)


@dataclass
class ConvSpec:
    kernel_height: int = 1
    kernel_width: int = 1
    stride_h: int = 1
    stride_w: int = 1
    pad_h: object = 0                 # int hoặc (trước, sau)
    pad_w: object = 0
    in_depth: int = 1
    out_depth: int = 1
    depth_multiplier: int = 1         # chỉ dùng cho depthwise
    output_crop: tuple = None         # (H, W), chỉ dùng cho transpose; cắt phía phải/dưới

    def validate(self):
        sizes = (self.kernel_height, self.kernel_width, self.stride_h, self.stride_w, self.in_depth, self.out_depth)
        if min(sizes) < 1:
            raise SpecError(f"Kích thước ConvSpec phải >= 1: {self}")
        if self.depth_multiplier < 1:
            raise SpecError(f"depth_multiplier phải >= 1, nhận {self.depth_multiplier}")
        if min(_pads(self.pad_h) + _pads(self.pad_w)) < 0:
            raise SpecError("Padding không được âm")
        return self

    def output_shape(self, h, w):
        """(H', W') của tích chập thuận; lỗi nếu phép chia stride không chẵn."""
        ph, pw = _pads(self.pad_h), _pads(self.pad_w)
        hp, wp = h + sum(ph), w + sum(pw)
        if hp < self.kernel_height or wp < self.kernel_width:
            raise DimensionError(f"Đầu vào {h}×{w} (đã pad) nhỏ hơn kernel {self.kernel_height}×{self.kernel_width}")
        if (hp - self.kernel_height) % self.stride_h or (wp - self.kernel_width) % self.stride_w:
            raise SpecError(f"Stride ({self.stride_h},{self.stride_w}) không chia hết cho đầu vào {hp}×{wp}")
        return (hp - self.kernel_height) // self.stride_h + 1, (wp - self.kernel_width) // self.stride_w + 1

    def transpose_shape(self, h, w):
        """(H', W') của tích chập chuyển vị trước và sau khi cắt."""
        ph, pw = _pads(self.pad_h), _pads(self.pad_w)
        full = ((h - 1) * self.stride_h + self.kernel_height - sum(ph),
                (w - 1) * self.stride_w + self.kernel_width - sum(pw))
        if self.output_crop is None:
            return full, full
        ch, cw = self.output_crop
        if ch > full[0] or cw > full[1]:
            raise SpecError(f"output_crop {self.output_crop} lớn hơn kích thước tạo ra {full}")
        return full, (ch, cw)


def _window(spec, i, j, out_h, out_w):
    """Lát cắt (trên đầu vào đã pad) ứng với vị trí kernel (i, j)."""
    return (slice(None), slice(None),
            slice(i, i + spec.stride_h * (out_h - 1) + 1, spec.stride_h),
            slice(j, j + spec.stride_w * (out_w - 1) + 1, spec.stride_w))


def _pad(x, spec):
    ph, pw = _pads(spec.pad_h), _pads(spec.pad_w)
    if not any(ph + pw):
        return x
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _unpad(xp, spec):
    ph, pw = _pads(spec.pad_h), _pads(spec.pad_w)
    return xp[:, :, ph[0]:xp.shape[2] - ph[1], pw[0]:xp.shape[3] - pw[1]]


def _unfold(xp, spec, out_h, out_w):
    """im2col dạng view: [N, C, H', W', kh, kw] trên đầu vào đã pad."""
    win = sliding_window_view(xp, (spec.kernel_height, spec.kernel_width), axis=(2, 3))
    return win[:, :, :spec.stride_h * (out_h - 1) + 1:spec.stride_h, :spec.stride_w * (out_w - 1) + 1:spec.stride_w]


def _conv_raw(x, w, spec):
    _, _, h, wd = x.shape
    oh, ow = spec.output_shape(h, wd)
    cols = _unfold(_pad(x, spec), spec, oh, ow)
    return np.einsum("nchwij,ocij->nohw", cols, w, optimize=True)


def _conv_input_grad(g, w, spec, in_shape):
    """Phép liên hợp của tích chập: rải gradient ngược về đầu vào."""
    n, c, h, wd = in_shape
    ph, pw = _pads(spec.pad_h), _pads(spec.pad_w)
    oh, ow = g.shape[2], g.shape[3]
    dxp = np.zeros((n, c, h + sum(ph), wd + sum(pw)), dtype=np.result_type(g, w))
    for i in range(spec.kernel_height):
        for j in range(spec.kernel_width):
            dxp[_window(spec, i, j, oh, ow)] += np.einsum("nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
    return _unpad(dxp, spec)


def _conv_weight_grad(g, x, spec, w_shape):
    cols = _unfold(_pad(x, spec), spec, g.shape[2], g.shape[3])
    return np.einsum("nohw,nchwij->ocij", g, cols, optimize=True).reshape(w_shape)


def _check_4d(x, name="input"):
    if x.ndim != 4:
        raise DimensionError(f"{name} phải có dạng [N,C,H,W], nhận shape {x.shape}")
    if x.shape[0] == 0:
        raise DimensionError("Batch rỗng (N = 0)")


def conv2d_forward(x, spec, weights, bias=None):
    """Tích chập 2D (cross-correlation). weights: [Cout, Cin, kh, kw]."""
    x, weights = as_tensor(x), as_tensor(weights)
    spec.validate()
    _check_4d(x)
    cout, cin, kh, kw = weights.shape
    if x.shape[1] != cin or (kh, kw) != (spec.kernel_height, spec.kernel_width):
        raise DimensionError(f"Trọng số {weights.shape} không khớp đầu vào {x.shape} / spec {kh}×{kw}")
    out = _conv_raw(x.data, weights.data, spec)
    parents = (x, weights)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"Bias phải có shape ({cout},), nhận {bias.shape}")
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)

    def _bw(g):
        grads = [_conv_input_grad(g, weights.data, spec, x.shape) if x.requires_grad else None,
                 _conv_weight_grad(g, x.data, spec, weights.shape) if weights.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)
    return make_node(out, parents, "conv2d", _bw)


def depthwise_conv2d_forward(x, spec, weights):
    """Tích chập theo độ sâu: kênh ra k chỉ phụ thuộc kênh vào k // Dm. weights: [Cin·Dm, 1, kh, kw]."""
    x, weights = as_tensor(x), as_tensor(weights)
    spec.validate()
    _check_4d(x)
    dm = spec.depth_multiplier
    n, cin, h, wd = x.shape
    if weights.shape != (cin * dm, 1, spec.kernel_height, spec.kernel_width):
        raise DimensionError(f"Trọng số depthwise cần shape {(cin * dm, 1, spec.kernel_height, spec.kernel_width)}, nhận {weights.shape}")
    oh, ow = spec.output_shape(h, wd)
    xp = _pad(x.data, spec)
    cols = _unfold(xp, spec, oh, ow)
    # Kênh ra k = c·Dm + d
    wg = weights.data.reshape(cin, dm, spec.kernel_height, spec.kernel_width)
    out = np.einsum("nchwij,cdij->ncdhw", cols, wg, optimize=True).reshape(n, cin * dm, oh, ow)

    def _bw(g):
        dx = dw = None
        g5 = g.reshape(n, cin, dm, oh, ow)
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=out.dtype)
            for i in range(spec.kernel_height):
                for j in range(spec.kernel_width):
                    dxp[_window(spec, i, j, oh, ow)] += np.einsum("ncdhw,cd->nchw", g5, wg[:, :, i, j], optimize=True)
            dx = _unpad(dxp, spec)
        if weights.requires_grad:
            dw = np.einsum("ncdhw,nchwij->cdij", g5, cols, optimize=True).reshape(weights.shape)
        return dx, dw
    return make_node(out, (x, weights), "depthwise_conv2d", _bw)


def pointwise_conv2d_forward(x, weights, bias=None):
    """Tích chập 1×1: trộn tuyến tính theo độ sâu. weights: [out_depth, in_depth]."""
    x, weights = as_tensor(x), as_tensor(weights)
    _check_4d(x)
    if weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise DimensionError(f"Trọng số pointwise {weights.shape} không khớp độ sâu đầu vào {x.shape[1]}")
    out = np.einsum("oc,nchw->nohw", weights.data, x.data, optimize=True)
    parents = (x, weights)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)

    def _bw(g):
        grads = [np.einsum("oc,nohw->nchw", weights.data, g, optimize=True) if x.requires_grad else None,
                 np.einsum("nohw,nchw->oc", g, x.data, optimize=True) if weights.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)
    return make_node(out, parents, "pointwise_conv2d", _bw)


def transpose_conv2d_forward(x, spec, weights, bias=None):
    """Tích chập chuyển vị (liên hợp của conv2d cùng spec). weights: [Cin, Cout, kh, kw].

    Kích thước chưa cắt: (H−1)·stride + k − padding; sau đó cắt phía phải/dưới về output_crop.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    spec.validate()
    _check_4d(x)
    n, cin, h, wd = x.shape
    if weights.shape[0] != cin or weights.shape[2:] != (spec.kernel_height, spec.kernel_width):
        raise DimensionError(f"Trọng số chuyển vị {weights.shape} không khớp đầu vào {x.shape}")
    full, (ch, cw) = spec.transpose_shape(h, wd)
    ph, pw = _pads(spec.pad_h), _pads(spec.pad_w)
    uncropped = (n, weights.shape[1], full[0], full[1])
    out = _conv_input_grad(x.data, weights.data, spec, uncropped)[:, :, :ch, :cw]
    parents = (x, weights)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)

    def _bw(g):
        gfull = np.zeros(uncropped, dtype=g.dtype)
        gfull[:, :, :ch, :cw] = g
        grads = [_conv_raw(gfull, weights.data, spec) if x.requires_grad else None,
                 _conv_weight_grad(x.data, gfull, spec, weights.shape) if weights.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)
    return make_node(out, parents, "transpose_conv2d", _bw)


class BatchNormState:
    """Thống kê chạy (running mean/var) của một lớp BN; không phải tham số học."""
    def __init__(self, depth, dtype=np.float32):
        self.mean = np.zeros(depth, dtype=dtype)
        self.var = np.ones(depth, dtype=dtype)


def batch_norm_forward(x, gamma, beta, eps=None, mode="train", running=None, momentum=None):
    """BN theo kênh độ sâu, thống kê trên (N, H, W)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_4d(x)
    eps = _CONFIG.MODEL_BN_EPS if eps is None else eps
    momentum = _CONFIG.MODEL_BN_MOMENTUM if momentum is None else momentum
    if eps < 0:
        raise SpecError(f"eps phải >= 0, nhận {eps}")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            m = x.data.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            running.mean[:] = (1 - momentum) * running.mean + momentum * mean
            running.var[:] = (1 - momentum) * running.var + momentum * unbiased
    elif mode == "eval":
        if running is None:
            raise SpecError("Chế độ eval cần running statistics")
        mean, var = running.mean.astype(x.dtype), running.var.astype(x.dtype)
    else:
        raise SpecError(f"mode không hợp lệ: {mode}")

    denom = var + eps
    with np.errstate(divide="ignore"):
        inv_std = np.where(denom > 0, 1.0 / np.sqrt(np.where(denom > 0, denom, 1.0)), 0.0).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def _bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        if mode == "train":
            m = x.data.size // x.shape[1]
            dx = (inv_std.reshape(shape) / m) * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                                 - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            dx = dxhat * inv_std.reshape(shape)
        return dx, dgamma, dbeta
    return make_node(out, (x, gamma, beta), f"batch_norm_{mode}", _bw)


def elu_forward(x, a=None):
    x = as_tensor(x)
    a = _CONFIG.MODEL_ELU_ALPHA if a is None else a
    if a <= 0:
        raise SpecError(f"Hệ số ELU phải > 0, nhận {a}")
    neg_part = a * np.expm1(np.minimum(x.data, 0))
    out = np.where(x.data > 0, x.data, neg_part)

    def _bw(g):
        return (g * np.where(x.data > 0, 1.0, neg_part + a).astype(x.dtype),)
    return make_node(out, (x,), "elu", _bw)


def avg_pool_forward(x, pool_w, stride_w=None):
    """Average pooling chỉ theo trục thời gian (W)."""
    x = as_tensor(x)
    _check_4d(x)
    stride_w = pool_w if stride_w is None else stride_w
    w = x.shape[3]
    if pool_w > w:
        raise DimensionError(f"Cửa sổ pool {pool_w} lớn hơn độ dài {w}")
    if pool_w < 1 or stride_w < 1 or (w - pool_w) % stride_w:
        raise SpecError(f"Pool {pool_w}/stride {stride_w} không chia chẵn độ dài {w}")
    ow = (w - pool_w) // stride_w + 1
    span = stride_w * (ow - 1) + 1
    out = sum(x.data[..., k:k + span:stride_w] for k in range(pool_w)) / pool_w

    def _bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        for k in range(pool_w):
            dx[..., k:k + span:stride_w] += g / pool_w
        return (dx,)
    return make_node(out, (x,), "avg_pool", _bw)


def dropout_forward(x, p, mode="train", rng=None):
    """Inverted dropout: chế độ eval là hàm đồng nhất."""
    x = as_tensor(x)
    if not 0 <= p < 1:
        raise ConfigError(f"Xác suất dropout phải thuộc [0, 1), nhận {p}")
    if mode != "train" or p == 0:
        return x
    if rng is None:
        raise ConfigError("Dropout ở chế độ train cần rng đã seed")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return make_node(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


def dense_forward(x, weights, bias=None):
    """Ánh xạ affine [N,F] @ [F,K] + [K]."""
    x, weights = as_tensor(x), as_tensor(weights)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense: không khớp chiều {x.shape} @ {weights.shape}")
    out = x.data @ weights.data
    parents = (x, weights)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise DimensionError(f"Bias dense cần shape ({weights.shape[1]},), nhận {bias.shape}")
        out = out + bias.data
        parents = parents + (bias,)

    def _bw(g):
        grads = [g @ weights.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)
    return make_node(out, parents, "dense", _bw)


def flatten(x):
    x = as_tensor(x)
    return x.reshape((x.shape[0], -1))


def softmax(logits):
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_onehot(onehot, k):
    oh = np.asarray(onehot)
    if oh.ndim != 2 or oh.shape[1] != k:
        raise DimensionError(f"one-hot cần shape [N,{k}], nhận {oh.shape}")
    if not (np.all((oh == 0) | (oh == 1)) and np.all(oh.sum(axis=1) == 1)):
        raise SpecError("Ma trận one-hot sai định dạng: mỗi hàng phải có đúng một số 1")
    return oh


def softmax_cross_entropy(logits, onehot):
    """L = −(1/N) Σ log softmax(logits)[class]; gradient = (softmax − onehot)/N."""
    logits = as_tensor(logits)
    oh = _check_onehot(onehot, logits.shape[1]).astype(logits.dtype)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -(oh * log_probs).sum() / n
    probs = np.exp(log_probs)
    return make_node(np.asarray(loss), (logits,), "softmax_ce", lambda g: (g * (probs - oh) / n,))


def l1_reconstruction_loss(pred, target):
    """Trung bình |pred − target| trên mọi phần tử."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"Shape dự đoán {pred.shape} khác target {t.shape}")
    diff = pred.data - t
    m = diff.size
    return make_node(np.asarray(np.abs(diff).mean()), (pred,), "l1_loss", lambda g: (g * np.sign(diff) / m,))


def l2_reconstruction_loss(pred, target):
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"Shape dự đoán {pred.shape} khác target {t.shape}")
    diff = pred.data - t
    m = diff.size
    return make_node(np.asarray((diff ** 2).mean()), (pred,), "l2_loss", lambda g: (g * 2 * diff / m,))


def reconstruction_loss(pred, target, kind="l1"):
    if kind == "l1":
        return l1_reconstruction_loss(pred, target)
    if kind == "l2":
        return l2_reconstruction_loss(pred, target)
    raise ConfigError(f"recon_loss không hợp lệ: '{kind}' (chọn l1 | l2)")
