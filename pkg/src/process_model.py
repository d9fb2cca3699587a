"""Deep-autolearner (DAL): encoder, decoder với C-Box, classifier và loss kết hợp.

Layout tensor là [N, depth, H, W] với H = kênh EEG, W = thời gian. Encoder và
classifier cũng được EEGNet dùng lại (xem process_baseline).
"""
from dataclasses import dataclass, field
from collections import OrderedDict
import numpy as np
from src.core import _CONFIG, ConfigError, DimensionError, SpecError, DivergenceError, PairingError, FormatError
from src.engine import Tensor, backward, concat
from src.process_layers import (
    ConvSpec, BatchNormState, same_padding, conv2d_forward, depthwise_conv2d_forward,
    pointwise_conv2d_forward, transpose_conv2d_forward, batch_norm_forward, elu_forward,
    avg_pool_forward, dropout_forward, dense_forward, flatten, softmax,
    softmax_cross_entropy, reconstruction_loss,
)
from src.process_file import FileManager
from src.process_data import labels_to_onehot
from src.process_log import log_action


@dataclass
class DALConfig:
    channels: int = _CONFIG.GEN_CHANNELS
    samples: int = int(round(_CONFIG.PREP_TARGET_FS * _CONFIG.PREP_WINDOW_S))
    n_classes: int = len(_CONFIG.GEN_WORDS)
    f1: int = _CONFIG.MODEL_F1
    dm: int = _CONFIG.MODEL_DM
    f2: int = _CONFIG.MODEL_F2
    temporal_kernel: int = _CONFIG.MODEL_TEMPORAL_KERNEL
    sep_kernel: int = _CONFIG.MODEL_SEP_KERNEL
    pool1: int = _CONFIG.MODEL_POOL1
    pool2: int = _CONFIG.MODEL_POOL2
    dec_kernel1: int = _CONFIG.MODEL_DEC_KERNEL1
    dec_stride1: int = _CONFIG.MODEL_DEC_STRIDE1
    dec_kernel2: int = _CONFIG.MODEL_DEC_KERNEL2
    dec_stride2: int = _CONFIG.MODEL_DEC_STRIDE2
    dropout_p: float = _CONFIG.MODEL_DROPOUT_P
    alpha: float = _CONFIG.MODEL_ALPHA
    recon_loss: str = _CONFIG.MODEL_RECON_LOSS
    elu_alpha: float = _CONFIG.MODEL_ELU_ALPHA
    bn_eps: float = _CONFIG.MODEL_BN_EPS
    bn_momentum: float = _CONFIG.MODEL_BN_MOMENTUM

    @property
    def depth1(self):
        return self.f1 * self.dm

    @property
    def len_pool1(self):
        return self.samples // self.pool1

    @property
    def len_feature(self):
        return self.samples // (self.pool1 * self.pool2)

    @property
    def feature_size(self):
        return self.f2 * self.len_feature

    def validate(self):
        sizes = ("channels", "samples", "n_classes", "f1", "dm", "f2", "temporal_kernel", "sep_kernel",
                 "pool1", "pool2", "dec_kernel1", "dec_stride1", "dec_kernel2", "dec_stride2")
        for name in sizes:
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} phải >= 1, nhận {getattr(self, name)}")
        if self.samples % (self.pool1 * self.pool2):
            raise ConfigError(f"model.samples={self.samples} không chia hết cho pool1·pool2={self.pool1 * self.pool2}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"model.alpha phải thuộc [0, 1], nhận {self.alpha}")
        if self.recon_loss not in ("l1", "l2"):
            raise ConfigError(f"model.recon_loss không hợp lệ: '{self.recon_loss}'")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"model.dropout_p phải thuộc [0, 1), nhận {self.dropout_p}")
        if (self.len_feature - 1) * self.dec_stride1 + self.dec_kernel1 < self.len_pool1:
            raise SpecError(f"Decoder block 1 tạo ít hơn {self.len_pool1} mẫu")
        if (self.len_pool1 - 1) * self.dec_stride2 + self.dec_kernel2 < self.samples:
            raise SpecError(f"Decoder block 2 tạo ít hơn {self.samples} mẫu")
        return self

    # --- ConvSpec của từng lớp ---
    def temporal_spec(self):
        return ConvSpec(1, self.temporal_kernel, pad_w=same_padding(self.temporal_kernel), in_depth=1, out_depth=self.f1)

    def spatial_spec(self):
        return ConvSpec(self.channels, 1, in_depth=self.f1, out_depth=self.depth1, depth_multiplier=self.dm)

    def separable_spec(self):
        return ConvSpec(1, self.sep_kernel, pad_w=same_padding(self.sep_kernel), in_depth=self.depth1, out_depth=self.depth1)

    def dec1_spec(self):
        return ConvSpec(1, self.dec_kernel1, stride_w=self.dec_stride1, in_depth=self.f2, out_depth=self.depth1,
                        output_crop=(1, self.len_pool1))

    def dec2_spec(self):
        return ConvSpec(1, self.dec_kernel2, stride_w=self.dec_stride2, in_depth=2 * self.depth1, out_depth=self.f1,
                        output_crop=(1, self.samples))

    def dec_spatial_spec(self):
        return ConvSpec(self.channels, 1, in_depth=self.f1, out_depth=self.f1)


@dataclass
class TrainConfig:
    lr: float = _CONFIG.TRAIN_LR
    beta1: float = _CONFIG.TRAIN_BETA1
    beta2: float = _CONFIG.TRAIN_BETA2
    adam_eps: float = _CONFIG.TRAIN_ADAM_EPS
    batch: int = _CONFIG.TRAIN_BATCH
    epochs: int = _CONFIG.TRAIN_EPOCHS
    seed: int = _CONFIG.TRAIN_SEED
    dtype: str = _CONFIG.TRAIN_DTYPE

    def validate(self):
        if self.lr < 0 or self.batch < 1 or self.epochs < 0:
            raise ConfigError(f"train: lr >= 0, batch >= 1, epochs >= 0 (nhận {self.lr}, {self.batch}, {self.epochs})")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1/beta2 phải thuộc [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype không hợp lệ: '{self.dtype}'")
        return self


@dataclass
class LossBreakdown:
    ce: float
    recon: float              # None khi decoder không nằm trong đồ thị
    total: float
    alpha: float


@dataclass
class TrainingMode:
    """Mô tả biến thể huấn luyện: w/ overt (loss đầy đủ) hoặc w/o (chỉ encoder + classifier)."""
    use_overt: bool
    alpha: float
    include_decoder: bool
    head: str = "clf"         # tên lớp dense phân loại trong registry

    @property
    def condition(self):
        return "w" if self.use_overt else "wo"


def dal_variant(config, use_overt):
    if use_overt:
        return TrainingMode(True, float(config.alpha), True)
    return TrainingMode(False, 1.0, False)


# --- Tham số ---

ENCODER_PREFIXES = ("enc1.", "enc2.")
DECODER_PREFIXES = ("dec1.", "dec2.", "out.")
BN_LAYERS = ("enc1.bn1", "enc1.bn2", "enc2.bn", "dec1.bn", "dec2.bn")


def _encoder_shapes(cfg):
    return [
        ("enc1.temporal.weight", (cfg.f1, 1, 1, cfg.temporal_kernel)),
        ("enc1.bn1.gamma", (cfg.f1,)), ("enc1.bn1.beta", (cfg.f1,)),
        ("enc1.spatial.weight", (cfg.depth1, 1, cfg.channels, 1)),
        ("enc1.bn2.gamma", (cfg.depth1,)), ("enc1.bn2.beta", (cfg.depth1,)),
        ("enc2.depthwise.weight", (cfg.depth1, 1, 1, cfg.sep_kernel)),
        ("enc2.pointwise.weight", (cfg.f2, cfg.depth1)),
        ("enc2.bn.gamma", (cfg.f2,)), ("enc2.bn.beta", (cfg.f2,)),
    ]


def _head_shapes(cfg, head):
    return [(f"{head}.weight", (cfg.feature_size, cfg.n_classes)), (f"{head}.bias", (cfg.n_classes,))]


def _decoder_shapes(cfg):
    return [
        ("dec1.tconv.weight", (cfg.f2, cfg.depth1, 1, cfg.dec_kernel1)),
        ("dec1.bn.gamma", (cfg.depth1,)), ("dec1.bn.beta", (cfg.depth1,)),
        ("dec2.tconv.weight", (2 * cfg.depth1, cfg.f1, 1, cfg.dec_kernel2)),
        ("dec2.bn.gamma", (cfg.f1,)), ("dec2.bn.beta", (cfg.f1,)),
        ("dec2.spatial.weight", (cfg.f1, cfg.f1, cfg.channels, 1)),
        ("dec2.spatial.bias", (cfg.f1,)),
        ("out.pointwise.weight", (1, 2 * cfg.f1)),
        ("out.bias", (1,)),
    ]


def _glorot(rng, shape):
    rf = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * rf, shape[0] * rf
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class DALParams:
    """Registry tham số có thứ tự (tên → Tensor) cùng running stats của BN."""

    def __init__(self, config, tensors, buffers):
        self.config = config
        self.tensors = tensors
        self.buffers = buffers

    def __getitem__(self, name):
        return self.tensors[name]

    def registry(self):
        return [(name, t.shape) for name, t in self.tensors.items()]

    def names(self, prefixes=None):
        return [n for n in self.tensors if prefixes is None or n.startswith(tuple(prefixes))]

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def gradient(self, name):
        """Gradient hiện tại; tham số nằm ngoài đồ thị có gradient 0."""
        t = self.tensors[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def all_finite(self):
        return all(t.is_valid() for t in self.tensors.values())

    def count(self, prefixes=None):
        return int(sum(self.tensors[n].data.size for n in self.names(prefixes)))

    def state_dict(self):
        out = OrderedDict((n, t.data) for n, t in self.tensors.items())
        for layer, st in self.buffers.items():
            out[f"{layer}.running_mean"] = st.mean
            out[f"{layer}.running_var"] = st.var
        return out

    def load_state_dict(self, tensors, prefixes=None):
        """Nạp theo tên; kiểm tra từng shape với registry của config hiện tại."""
        loaded = 0
        expected = OrderedDict((n, t.shape) for n, t in self.tensors.items())
        for layer, st in self.buffers.items():
            expected[f"{layer}.running_mean"] = st.mean.shape
            expected[f"{layer}.running_var"] = st.var.shape
        for name, shape in expected.items():
            if prefixes is not None and not name.startswith(tuple(prefixes)):
                continue
            if name not in tensors:
                raise FormatError(f"Checkpoint thiếu tensor '{name}'")
            arr = np.asarray(tensors[name])
            if tuple(arr.shape) != tuple(shape):
                raise FormatError(f"Tensor '{name}': shape {tuple(arr.shape)} khác cấu hình {tuple(shape)}")
            if name.endswith(".running_mean"):
                self.buffers[name[:-len(".running_mean")]].mean[:] = arr
            elif name.endswith(".running_var"):
                self.buffers[name[:-len(".running_var")]].var[:] = arr
            else:
                self.tensors[name].data = arr.astype(self.tensors[name].dtype, copy=True)
            loaded += 1
        return loaded

    def astype(self, dtype):
        tensors = OrderedDict((n, Tensor(t.data.astype(dtype), requires_grad=True)) for n, t in self.tensors.items())
        buffers = OrderedDict()
        for layer, st in self.buffers.items():
            nb = BatchNormState(st.mean.shape[0], dtype)
            nb.mean[:], nb.var[:] = st.mean, st.var
            buffers[layer] = nb
        return DALParams(self.config, tensors, buffers)


def init_params(config, rng, dtype=np.float32, head="clf", include_decoder=True):
    """Khởi tạo Glorot-uniform cho trọng số, gamma=1, beta/bias=0."""
    config.validate()
    shapes = _encoder_shapes(config) + _head_shapes(config, head)
    if include_decoder:
        shapes += _decoder_shapes(config)
    tensors = OrderedDict()
    for name, shape in shapes:
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".beta", ".bias")):
            data = np.zeros(shape)
        else:
            data = _glorot(rng, shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    buffers = OrderedDict((layer, BatchNormState(tensors[f"{layer}.gamma"].shape[0], dtype))
                          for layer in BN_LAYERS if f"{layer}.gamma" in tensors)
    return DALParams(config, tensors, buffers)


def init_dal_params(config, rng, dtype=np.float32):
    return init_params(config, rng, dtype, head="clf", include_decoder=True)


def count_parameters(params, prefixes=None):
    """Số tham số học được (không tính running stats của BN)."""
    return params.count(prefixes)


# --- Forward ---

def _bn(h, params, layer, mode):
    cfg = params.config
    return batch_norm_forward(h, params[f"{layer}.gamma"], params[f"{layer}.beta"], eps=cfg.bn_eps,
                              mode=mode, running=params.buffers[layer], momentum=cfg.bn_momentum)


def _dropout(h, cfg, mode, rng):
    return dropout_forward(h, cfg.dropout_p, mode=mode, rng=rng)


def encoder_forward(x, params, mode="eval", rng=None):
    """Trả về (feature_map [N,F2,1,S/(p1·p2)], skip1 [N,F1,C,S], skip2 [N,F1·Dm,1,S/p1])."""
    cfg = params.config
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=params["enc1.temporal.weight"].dtype)
    if x.ndim == 3:
        x = x.reshape((x.shape[0], 1, x.shape[1], x.shape[2]))
    if x.ndim != 4 or tuple(x.shape[1:]) != (1, cfg.channels, cfg.samples):
        raise DimensionError(f"Đầu vào encoder cần [N,1,{cfg.channels},{cfg.samples}], nhận {x.shape}")

    # Block 1: temporal conv → BN → (skip1) → spatial depthwise → BN → ELU → pool → dropout → (skip2)
    h = conv2d_forward(x, cfg.temporal_spec(), params["enc1.temporal.weight"])
    skip1 = _bn(h, params, "enc1.bn1", mode)
    h = depthwise_conv2d_forward(skip1, cfg.spatial_spec(), params["enc1.spatial.weight"])
    h = elu_forward(_bn(h, params, "enc1.bn2", mode), cfg.elu_alpha)
    h = avg_pool_forward(h, cfg.pool1)
    skip2 = _dropout(h, cfg, mode, rng)

    # Block 2: separable conv (depthwise + pointwise) → BN → ELU → pool → dropout
    h = depthwise_conv2d_forward(skip2, cfg.separable_spec(), params["enc2.depthwise.weight"])
    h = pointwise_conv2d_forward(h, params["enc2.pointwise.weight"])
    h = elu_forward(_bn(h, params, "enc2.bn", mode), cfg.elu_alpha)
    h = avg_pool_forward(h, cfg.pool2)
    feature_map = _dropout(h, cfg, mode, rng)
    return feature_map, skip1, skip2


def c_box(decoder_feat, tap):
    """Nối đặc trưng decoder với nhánh skip theo độ sâu; shape không gian phải khớp."""
    if decoder_feat.shape[0] != tap.shape[0] or decoder_feat.shape[2:] != tap.shape[2:]:
        raise DimensionError(f"C-Box: decoder {decoder_feat.shape} không khớp skip {tap.shape}")
    return concat([decoder_feat, tap], axis=1)


def decoder_forward(feature_map, skip1, skip2, params, mode="eval"):
    cfg = params.config
    # D-Block 1 + C-Box 1
    d = transpose_conv2d_forward(feature_map, cfg.dec1_spec(), params["dec1.tconv.weight"])
    d = elu_forward(_bn(d, params, "dec1.bn", mode), cfg.elu_alpha)
    d = c_box(d, skip2)
    # D-Block 2 + C-Box 2
    d = transpose_conv2d_forward(d, cfg.dec2_spec(), params["dec2.tconv.weight"])
    d = elu_forward(_bn(d, params, "dec2.bn", mode), cfg.elu_alpha)
    d = transpose_conv2d_forward(d, cfg.dec_spatial_spec(), params["dec2.spatial.weight"], params["dec2.spatial.bias"])
    d = c_box(d, skip1)
    return pointwise_conv2d_forward(d, params["out.pointwise.weight"], params["out.bias"])


def classifier_forward(feature_map, params, head="clf"):
    """Dense duy nhất trên feature map đã làm phẳng. Trả về (logits Tensor, probs ndarray)."""
    logits = dense_forward(flatten(feature_map), params[f"{head}.weight"], params[f"{head}.bias"])
    return logits, softmax(logits)


def dal_forward(x, params, variant, mode="eval", rng=None):
    feat, skip1, skip2 = encoder_forward(x, params, mode, rng)
    logits, probs = classifier_forward(feat, params, variant.head)
    recon = decoder_forward(feat, skip1, skip2, params, mode) if variant.include_decoder else None
    return logits, probs, recon


def combined_loss(logits, onehot, recon, overt_target, alpha, kind="l1"):
    """total = alpha·CE + (1−alpha)·recon. Trả về (Tensor tổng để backward, LossBreakdown)."""
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha phải thuộc [0, 1], nhận {alpha}")
    ce = softmax_cross_entropy(logits, onehot)
    if alpha < 1 and (recon is None or overt_target is None):
        raise PairingError("alpha < 1 cần trial overt ghép cặp và đầu ra decoder")
    if recon is None or overt_target is None:
        return ce, LossBreakdown(ce.item(), None, ce.item(), float(alpha))
    target = np.asarray(overt_target)
    if target.ndim == 3:
        target = target[:, None, :, :]
    rec = reconstruction_loss(recon, target, kind)
    ce_v, rec_v = ce.item(), rec.item()
    if alpha == 1:
        return ce, LossBreakdown(ce_v, rec_v, ce_v, 1.0)
    if alpha == 0:
        return rec, LossBreakdown(ce_v, rec_v, rec_v, 0.0)
    total = ce * alpha + rec * (1 - alpha)
    return total, LossBreakdown(ce_v, rec_v, alpha * ce_v + (1 - alpha) * rec_v, float(alpha))


# --- Tối ưu ---

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params, state, train_cfg, names=None):
    """Một bước Adam; tham số không có gradient giữ nguyên."""
    state.step += 1
    b1, b2 = train_cfg.beta1, train_cfg.beta2
    c1, c2 = 1 - b1 ** state.step, 1 - b2 ** state.step
    for name in names or params.tensors:
        t = params.tensors[name]
        if t.grad is None:
            continue
        m = state.m.get(name, np.zeros_like(t.data))
        v = state.v.get(name, np.zeros_like(t.data))
        m = b1 * m + (1 - b1) * t.grad
        v = b2 * v + (1 - b2) * t.grad * t.grad
        state.m[name], state.v[name] = m, v
        step = train_cfg.lr * (m / c1) / (np.sqrt(v / c2) + train_cfg.adam_eps)
        t.data = (t.data - step).astype(t.dtype)


def _check_finite(breakdown, where):
    if not np.isfinite(breakdown.ce):
        raise DivergenceError(f"{where}: loss CE không hữu hạn ({breakdown.ce})")
    if breakdown.recon is not None and not np.isfinite(breakdown.recon):
        raise DivergenceError(f"{where}: loss tái tạo không hữu hạn ({breakdown.recon})")
    if not np.isfinite(breakdown.total):
        raise DivergenceError(f"{where}: loss tổng không hữu hạn ({breakdown.total})")


def dal_train_step(batch, params, opt_state, config, train_cfg, variant=None, rng=None):
    """batch = (imagined [B,C,S], onehot [B,K], overt [B,C,S] hoặc None)."""
    variant = variant or dal_variant(config, use_overt=True)
    x, onehot, overt = batch
    params.zero_grad()
    logits, _, recon = dal_forward(x, params, variant, mode="train", rng=rng)
    total, breakdown = combined_loss(logits, onehot, recon, overt if variant.use_overt else None,
                                     variant.alpha, config.recon_loss)
    _check_finite(breakdown, f"bước {opt_state.step + 1}")
    backward(total)
    adam_update(params, opt_state, train_cfg)
    params.zero_grad()
    if not params.all_finite():
        raise DivergenceError(f"bước {opt_state.step}: tham số không hữu hạn sau cập nhật")
    return params, breakdown


def iterate_batches(n, batch, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def train_dal(x, labels, overt, config, train_cfg, variant, seed, n_classes=None):
    """Huấn luyện từ đầu (DAL hoặc EEGNet tuỳ variant.head); trả về (params, lịch sử LossBreakdown trung bình theo epoch)."""
    config.validate()
    train_cfg.validate()
    dtype = np.dtype(train_cfg.dtype)
    init_rng, batch_rng, drop_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    params = init_params(config, init_rng, dtype, head=variant.head, include_decoder=(variant.head == "clf"))
    state = AdamState()
    onehot = labels_to_onehot(labels, n_classes or config.n_classes)
    x = np.asarray(x, dtype=dtype)
    overt = None if overt is None else np.asarray(overt, dtype=dtype)
    history = []
    for epoch in range(train_cfg.epochs):
        parts = []
        for idx in iterate_batches(len(x), train_cfg.batch, batch_rng):
            batch = (x[idx], onehot[idx], None if overt is None else overt[idx])
            _, bd = dal_train_step(batch, params, state, config, train_cfg, variant, drop_rng)
            parts.append(bd)
        history.append(_mean_breakdown(parts))
    return params, history


def _mean_breakdown(parts):
    ce = float(np.mean([p.ce for p in parts]))
    recon = None if parts[0].recon is None else float(np.mean([p.recon for p in parts]))
    total = float(np.mean([p.total for p in parts]))
    return LossBreakdown(ce, recon, total, parts[0].alpha)


def predict_proba(params, x, batch=None, head="clf"):
    """Xác suất lớp ở chế độ eval, tính theo lô."""
    batch = batch or _CONFIG.TRAIN_BATCH
    dtype = params[f"{head}.weight"].dtype
    out = []
    for start in range(0, len(x), batch):
        feat, _, _ = encoder_forward(np.asarray(x[start:start + batch], dtype=dtype), params, "eval")
        out.append(classifier_forward(feat, params, head)[1])
    return np.concatenate(out, axis=0)


def save_params(params, folder, meta=None):
    FileManager().write_checkpoint(folder, params.state_dict(), meta)


def load_params(folder, params, prefixes=None):
    tensors, meta = FileManager().read_checkpoint(folder)
    n = params.load_state_dict(tensors, prefixes)
    log_action("LOAD_CHECKPOINT", f"{n} tensors <- {folder}")
    return meta


class DALMethod:
    """DAL trong ma trận thí nghiệm: 'w' dùng loss kết hợp, 'wo' chỉ encoder + classifier."""
    name = "dal"

    def __init__(self, model_cfg=None, train_cfg=None):
        self.model_cfg = model_cfg or DALConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.params = None
        self.history = []

    def fit(self, x, labels, overt, condition, seed):
        variant = dal_variant(self.model_cfg, use_overt=(condition == "w"))
        self.params, self.history = train_dal(x, labels, overt if variant.use_overt else None,
                                              self.model_cfg, self.train_cfg, variant, seed)
        return self

    def predict(self, x):
        return np.argmax(predict_proba(self.params, x, self.train_cfg.batch), axis=1)

    def save(self, folder, meta=None):
        save_params(self.params, folder, meta)
