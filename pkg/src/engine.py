"""Engine vi phân tự động ngược (reverse-mode) tối giản trên numpy.

Mỗi Tensor giữ `data` (ndarray), `grad` (cùng shape, hoặc None) và một nút đồ thị:
tag phép toán, các tensor đầu vào và closure `_backward(g)` trả về gradient cho
từng đầu vào. Closure giữ lại các giá trị cần cho lượt ngược.
"""
import numpy as np
from src.core import DimensionError, NumericalError


def _as_float_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    def __init__(self, data, requires_grad=False, dtype=None, _children=(), _op=""):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = tuple(_children)
        self._op = _op
        self._backward = None

    # --- Thuộc tính ---
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def is_valid(self):
        """False nếu dữ liệu chứa NaN/Inf (trạng thái lỗi)."""
        return bool(np.all(np.isfinite(self.data)))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op='{self._op}', requires_grad={self.requires_grad})"

    # --- Toán tử cơ bản ---
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return add(self, neg(other) if isinstance(other, Tensor) else -np.asarray(other))
    def __rsub__(self, other): return add(other, neg(self))
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)

    def sum(self): return tensor_sum(self)
    def mean(self): return tensor_mean(self)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_node(data, parents, op, backward_fn):
    """Tạo tensor kết quả; chỉ gắn closure ngược khi có đầu vào cần gradient."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _children=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Cộng dồn gradient về đúng shape của đầu vào đã bị broadcast."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    # Hằng số Python theo dtype của toán hạng tensor (float32 không bị nâng lên float64)
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _pair(a, b)
    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return make_node(a.data + b.data, (a, b), "add", _bw)


def mul(a, b):
    a, b = _pair(a, b)
    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return make_node(a.data * b.data, (a, b), "mul", _bw)


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), "neg", lambda g: (-g,))


def tensor_sum(a):
    def _bw(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
    return make_node(np.asarray(a.data.sum()), (a,), "sum", _bw)


def tensor_mean(a):
    n = a.data.size
    def _bw(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)
    return make_node(np.asarray(a.data.mean()), (a,), "mean", _bw)


def reshape(a, shape):
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def concat(tensors, axis=1):
    """Nối các tensor theo một trục (dùng cho C-Box)."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"Không thể nối shape {t.shape} với {ref} theo trục {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", _bw)


def _topological_order(root):
    """Thứ tự topo lặp (không đệ quy); mỗi nút xuất hiện đúng một lần."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """Lan truyền ngược từ một loss vô hướng.

    Gradient của tensor lá được CỘNG DỒN vào `.grad`: gọi hai lần mà không reset
    thì gradient gấp đôi. Gradient trung gian chỉ sống trong lượt gọi này.
    """
    if root.data.size != 1:
        raise DimensionError(f"backward() cần loss vô hướng, nhận shape {root.shape}")
    if not root.requires_grad:
        return
    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.dtype, copy=True) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._prev, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def grad_check(forward_fn, inputs, eps=1e-5, max_checks=None, rng=None):
    """So sánh gradient của backward() với sai phân trung tâm.

    forward_fn(*inputs) phải trả về Tensor vô hướng. Trả về sai số tương đối lớn
    nhất |a-b| / max(|a|, |b|, 1e-8). `max_checks` giới hạn số phần tử được
    kiểm tra ngẫu nhiên trên mỗi đầu vào (cho các mạng lớn).
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise NumericalError("grad_check cần tensor float64")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    loss = forward_fn(*inputs)
    backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        ga_flat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(forward_fn(*inputs).data)
            flat[i] = orig - eps
            f_minus = float(forward_fn(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(ga_flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
