"""
Dense float32 tensors with a reverse-mode differentiation tape.

Only the operations the generator, discriminator and conditioner need are
provided. Feature maps follow the batch x channels x height x width layout and
every convolution is "valid" (no padding).
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32
MAX_RANK = 4

_state = threading.local()

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _dtype():
    return getattr(_state, "dtype", DEFAULT_DTYPE)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        values = np.array(data, dtype=_dtype())
        if values.ndim > MAX_RANK:
            raise DimensionError("tensor", values.shape)
        self.data = values
        self.grad = np.zeros_like(values)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations; replayed backwards by `backward`."""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, fn: BackwardFn):
        self.nodes.append(Node(op, inputs, output, fn))

    def clear(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape() -> Optional[Tape]:
    """Innermost open tape, or None; ops run outside every tape are not recorded."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def precision(dtype):
    previous = _dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def frozen(tensors: Iterable[Tensor]):
    """Temporarily exclude tensors from differentiation (they still feed forward passes)."""
    tensors = list(tensors)
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, flags):
            t.requires_grad = flag


def apply_op(op: str, inputs: Sequence[Tensor], data: np.ndarray, fn: BackwardFn) -> Tensor:
    inputs = tuple(inputs)
    tape = current_tape()
    requires = tape is not None and _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape.record(op, inputs, out, fn)
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None):
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if tape is None:
        raise ContractError("backward() needs a Tape; run the forward pass inside `with Tape()`")
    seed = np.ones_like(loss.data)
    loss.grad += seed
    pending = {id(loss): seed}
    for node in reversed(tape.nodes):
        upstream = pending.pop(id(node.output), None)
        if upstream is None:
            continue
        for tensor, g in zip(node.inputs, node.backward(upstream)):
            if g is None or not tensor.requires_grad:
                continue
            tensor.grad += g
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + g
            else:
                pending[key] = g


######################################
# Operations
######################################

def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError("fully_connected", x.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise DimensionError("fully_connected bias", bias.shape, weight.shape)
    xd, wd = x.data, weight.data

    def grad_fn(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return apply_op("fully_connected", (x, weight, bias), xd @ wd + bias.data, grad_fn)


def _windows(a: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # B x C x H' x W' x kh x kw view, no copy
    return sliding_window_view(a, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def _im2col(a: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Contiguous (B*H'*W') x (C*kh*kw) patch matrix plus the output grid size."""
    win = _windows(a, kh, kw, sh, sw)
    b, c, h, w = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * kh * kw)
    return cols, (h, w)


def _col2im(cols: np.ndarray, grid: Tuple[int, int], channels: int, kh: int, kw: int,
            out_hw: Tuple[int, int], sh: int, sw: int) -> np.ndarray:
    h, w = grid
    b = cols.shape[0] // (h * w)
    patches = cols.reshape(b, h, w, channels, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((b, channels) + tuple(out_hw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * h:sh, j:j + sw * w:sw] += patches[..., i, j]
    return out


def _to_rows(a: np.ndarray) -> np.ndarray:
    b, c, h, w = a.shape
    return np.ascontiguousarray(a.transpose(0, 2, 3, 1)).reshape(b * h * w, c)


def _from_rows(rows: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(rows.reshape(b, h, w, -1).transpose(0, 3, 1, 2))


def _channel_bias(bias: Optional[Tensor], channels: int):
    if bias is None:
        return ()
    if bias.shape != (channels,):
        raise DimensionError("bias", bias.shape, (channels,))
    return (bias,)


def conv2d(x: Tensor, filters: Tensor, stride: Tuple[int, int] = (1, 1), bias: Optional[Tensor] = None) -> Tensor:
    if x.data.ndim != 4 or filters.data.ndim != 4 or x.shape[1] != filters.shape[1]:
        raise DimensionError("conv2d", x.shape, filters.shape)
    b, c, h, w = x.shape
    f, _, kh, kw = filters.shape
    if kh > h or kw > w:
        raise DimensionError("conv2d kernel larger than input", x.shape, filters.shape)
    sh, sw = stride
    extra = _channel_bias(bias, f)
    wmat = filters.data.reshape(f, c * kh * kw)
    cols, grid = _im2col(x.data, kh, kw, sh, sw)
    out = _from_rows(cols @ wmat.T, b, *grid)
    if extra:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        grows = _to_rows(g)
        dw = (grows.T @ cols).reshape(filters.shape)
        dx = _col2im(grows @ wmat, grid, c, kh, kw, (h, w), sh, sw)
        return (dx, dw) + ((g.sum(axis=(0, 2, 3)),) if extra else ())

    return apply_op("conv2d", (x, filters) + extra, out, grad_fn)


def transposed_conv2d(x: Tensor, filters: Tensor, stride: Tuple[int, int] = (1, 1), bias: Optional[Tensor] = None) -> Tensor:
    if x.data.ndim != 4 or filters.data.ndim != 4 or x.shape[1] != filters.shape[0]:
        raise DimensionError("transposed_conv2d", x.shape, filters.shape)
    b, c, h, w = x.shape
    _, f, kh, kw = filters.shape
    sh, sw = stride
    extra = _channel_bias(bias, f)
    wmat = filters.data.reshape(c, f * kh * kw)
    xrows = _to_rows(x.data)
    out_hw = ((h - 1) * sh + kh, (w - 1) * sw + kw)
    out = _col2im(xrows @ wmat, (h, w), f, kh, kw, out_hw, sh, sw)
    if extra:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gcols, _ = _im2col(g, kh, kw, sh, sw)
        dx = _from_rows(gcols @ wmat.T, b, h, w)
        dw = (xrows.T @ gcols).reshape(filters.shape)
        return (dx, dw) + ((g.sum(axis=(0, 2, 3)),) if extra else ())

    return apply_op("transposed_conv2d", (x, filters) + extra, out, grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise DimensionError("concat_channels", a.shape, b.shape)
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError("concat_channels", a.shape, b.shape)
    split = a.shape[1]

    def grad_fn(g):
        return g[:, :split], g[:, split:]

    return apply_op("concat_channels", (a, b), np.concatenate([a.data, b.data], axis=1), grad_fn)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if not 0.0 <= alpha < 1.0:
        raise ContractError(f"leaky_relu slope must lie in [0, 1), got {alpha}")
    positive = x.data > 0
    slope = np.where(positive, 1.0, alpha).astype(x.data.dtype)

    def grad_fn(g):
        return (g * slope,)

    return apply_op("leaky_relu", (x,), x.data * slope, grad_fn)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -a))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def grad_fn(g):
        return (g * s * (1.0 - s),)

    return apply_op("sigmoid", (x,), s, grad_fn)


def sigmoid_cross_entropy(logits: Tensor, targets) -> Tensor:
    targets = _as_tensor(targets)
    x = logits.data.reshape(-1)
    t = targets.data.reshape(-1).astype(x.dtype)
    if x.shape != t.shape:
        raise DimensionError("sigmoid_cross_entropy", logits.shape, targets.shape)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractError("cross-entropy targets must lie in [0, 1]")
    n = x.size
    loss = np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x))))
    shape = logits.shape

    def grad_fn(g):
        return (g * (_sigmoid(x) - t).reshape(shape) / n, None)

    return apply_op("sigmoid_cross_entropy", (logits, targets), loss, grad_fn)


def l2_diff(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("l2_diff", a.shape, b.shape)
    d = a.data - b.data

    def grad_fn(g):
        return 2.0 * g * d, -2.0 * g * d

    return apply_op("l2_diff", (a, b), np.sum(d * d), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def grad_fn(g):
        return (g.reshape(original),)

    return apply_op("reshape", (x,), x.data.reshape(tuple(shape)), grad_fn)


def batch_mean(x: Tensor) -> Tensor:
    """Mean over the leading (batch) axis."""
    n = x.shape[0]

    def grad_fn(g):
        return (np.broadcast_to(g / n, x.shape),)

    return apply_op("batch_mean", (x,), x.data.mean(axis=0), grad_fn)


def total(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.broadcast_to(g, x.shape),)

    return apply_op("sum", (x,), x.data.sum(), grad_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    def grad_fn(g):
        return (g * factor,)

    return apply_op("scale", (x,), x.data * factor, grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError("add", a.shape, b.shape)

    def grad_fn(g):
        return g, g

    return apply_op("add", (a, b), a.data + b.data, grad_fn)


######################################
# Gradient checking
######################################

def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
               samples: Optional[int] = None, seed: int = 0) -> float:
    """
    Compare tape gradients of the scalar `f(*inputs)` with central differences.

    Runs in float64 so the comparison measures the backward pass rather than
    rounding. `samples` limits how many elements per input are perturbed.
    Returns the largest relative error seen; inputs and their grads are restored.
    """
    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")
    inputs = list(inputs)
    checked = [t for t in inputs if t.requires_grad]
    saved = [(t.data, t.grad) for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        with precision(np.float64):
            for t in inputs:
                t.data = t.data.astype(np.float64)
            for t in checked:
                t.grad = np.zeros_like(t.data)
            with Tape() as tape:
                loss = f(*inputs)
                backward(loss, tape)
            analytic = [t.grad.reshape(-1).copy() for t in checked]
            with no_grad():
                for t, exact in zip(checked, analytic):
                    flat = t.data.reshape(-1)
                    if samples is None or samples >= flat.size:
                        positions = range(flat.size)
                    else:
                        positions = rng.choice(flat.size, size=samples, replace=False)
                    for k in positions:
                        original = flat[k]
                        flat[k] = original + eps
                        plus = f(*inputs).item()
                        flat[k] = original - eps
                        minus = f(*inputs).item()
                        flat[k] = original
                        numeric = (plus - minus) / (2.0 * eps)
                        denom = max(abs(numeric), abs(exact[k]), 1e-6)
                        worst = max(worst, abs(numeric - exact[k]) / denom)
    finally:
        for t, (data, grad) in zip(inputs, saved):
            t.data = data
            t.grad = grad
    return worst
