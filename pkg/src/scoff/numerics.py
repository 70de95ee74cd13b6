"""Tensors with taped reverse-mode differentiation.

All arithmetic is in 64-bit floats. Gradients are recorded define-by-run: ops
executed while a Tape is active append themselves to it in creation order,
which is by construction a topological order, so the backward pass is a single
reverse scan. With no active tape, ops run in plain evaluation mode and record
nothing.

Interior op results skip the finiteness check for speed; enable
``strict_checks`` to validate every op output. Tensors built from external
data are always validated.
"""

import math
import struct
import threading

import numpy as np

from .rng import Rng

# per-thread active-tape stacks: independent passes may run concurrently as
# long as each owns its Tape and Rng
_TLS = threading.local()

strict_checks = False


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = _TLS.stack = []
    return stack


class Tape:
    """Ordered record of op outputs; every parent precedes its consumers."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array, the sole numeric carrier and autodiff node.

    ``grad`` is populated by :func:`backward` and has the same shape as
    ``data``. Gradient arrays are never mutated in place by the engine;
    treat them as read-only and replace rather than update.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.size == 0:
            raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor rejects non-finite entries")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._tape = None

    @staticmethod
    def _lift(arr: np.ndarray) -> "Tensor":
        # trusted float64 constant, skips validation
        t = Tensor.__new__(Tensor)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._lift(self.data.copy())

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis, keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out_data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    if strict_checks and not np.isfinite(out_data).all():
        raise FloatingPointError("op produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.grad = None
    t._parents = ()
    t._backward = None
    t._tape = None
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward_fn
        t._tape = tape
        tape.nodes.append(t)
    else:
        t.requires_grad = False
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- elementwise ops ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), back)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        _accum(a, g * out * (1.0 - out))

    return _record(out, (a,), back)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out * out))

    return _record(out, (a,), back)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        _accum(a, g * out)

    return _record(out, (a,), back)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.min() <= 0.0:
        raise ValueError("log requires strictly positive inputs")
    out = np.log(a.data)

    def back(g):
        _accum(a, g / a.data)

    return _record(out, (a,), back)


# ---- shape ops ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def back(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), back)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def back(g):
        _accum(a, np.transpose(g, inv))

    return _record(out, (a,), back)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, offsets, axis=axis)):
            _accum(p, piece)

    return _record(out, tuple(parts), back)


def stack(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("stack needs at least one tensor")
    out = np.stack([p.data for p in parts], axis=axis)

    def back(g):
        for i, p in enumerate(parts):
            _accum(p, np.take(g, i, axis=axis))

    return _record(out, tuple(parts), back)


# ---- reductions ----------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _record(np.asarray(out), (a,), back)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis, keepdims), 1.0 / n)


# ---- core contracted ops -------------------------------------------------


def matmul(a, b) -> Tensor:
    """Strict 2-D matrix product; backward dA = g·Bᵀ, dB = Aᵀ·g."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), back)


def softmax(x, axis: int) -> Tensor:
    """Exp-normalization along ``axis`` with max-subtraction for stability."""
    x = _as_tensor(x)
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"softmax axis {axis} out of range for rank {nd}")
    if x.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _record(s, (x,), back)


def straight_through(x, forward_values) -> Tensor:
    """Forward takes ``forward_values``; the gradient passes to ``x`` unchanged."""
    x = _as_tensor(x)
    vals = np.asarray(forward_values, dtype=np.float64)
    if vals.shape != x.data.shape:
        raise ValueError(f"straight_through shape mismatch: {vals.shape} vs {x.shape}")

    def back(g):
        _accum(x, g)

    return _record(vals.copy(), (x,), back)


def logistic_loss_mean(logits, targets) -> Tensor:
    """Mean binary cross entropy against {0,1} targets, in stable logit form."""
    lt = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != lt.data.shape:
        raise ValueError(f"target shape {y.shape} does not match logits {lt.shape}")
    d = lt.data
    loss = np.maximum(d, 0.0) - d * y + np.log1p(np.exp(-np.abs(d)))
    out = np.asarray(loss.mean())
    n = d.size

    def back(g):
        e = np.exp(-np.abs(d))
        sig = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        _accum(lt, (sig - y) * (g / n))

    return _record(out, (lt,), back)


def sample_gumbel(rng: Rng, shape) -> Tensor:
    """Gumbel(0,1) noise, -log(-log(u)); deterministic given the rng state."""
    return Tensor._lift(np.asarray(rng.gumbel(shape), dtype=np.float64))


# ---- backward engine ------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of everything the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        node._backward(node.grad)


def grad_check(f, params: list, eps: float = 1e-5) -> float:
    """Max relative error between taped grads and central differences.

    ``f`` maps the given parameter tensors to a scalar Tensor and must be
    deterministic across calls (fix any noise before calling).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f(params)
        if loss.data.size != 1:
            raise ValueError("grad_check requires a scalar-valued function")
    backward(loss, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        ana = analytic[pi].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data)
            flat[i] = orig - eps
            fm = float(f(params).data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(
                    f"function non-finite at perturbed parameter {pi}, coordinate {i}"
                )
            num = (fp - fm) / (2.0 * eps)
            rel = abs(ana[i] - num) / max(1.0, abs(ana[i]), abs(num))
            if rel > worst:
                worst = rel
    return worst


# ---- serialization --------------------------------------------------------

_MAGIC = b"SCFT"


def write_tensor(f, t: Tensor) -> None:
    """Binary record: magic "SCFT", u32 rank, u64 extents, little-endian f64 payload."""
    f.write(_MAGIC)
    f.write(struct.pack("<I", t.data.ndim))
    for extent in t.data.shape:
        f.write(struct.pack("<Q", extent))
    f.write(t.data.astype("<f8").tobytes(order="C"))


def read_tensor(f) -> Tensor:
    magic = f.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad tensor record magic: {magic!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    if rank > 32:
        raise ValueError(f"implausible tensor rank {rank}")
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
    count = 1
    for s in shape:
        count *= s
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor record")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return Tensor(arr)


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        write_tensor(f, t)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return read_tensor(f)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def glorot(rng: Rng, rows: int, cols: int, requires_grad: bool = True) -> Tensor:
    """Uniform init in ±sqrt(6/(fan_in+fan_out))."""
    bound = math.sqrt(6.0 / (rows + cols))
    u = np.asarray(rng.uniform((rows, cols)))
    return Tensor(-bound + 2.0 * bound * u, requires_grad=requires_grad)
