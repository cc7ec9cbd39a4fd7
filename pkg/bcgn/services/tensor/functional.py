"""
Differentiable operations over `Tensor`.

Broadcasting is limited to what the networks need: a scalar operand, or an
operand missing (or of size 1 in) the leading batch dimension.
"""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from bcgn.core.errors import ShapeError
from bcgn.services.tensor.tensor import Function, Tensor

LOG_CLAMP = 1e-12
LEAKY_SLOPE = 0.2

Operand = Union[Tensor, float, int]

# side of every non-smooth point (relu, leaky relu, abs, log clamp) visited while tracing
_KINK_TRACE: ContextVar[Optional[List[np.ndarray]]] = ContextVar("bcgn_kink_trace", default=None)


@contextmanager
def kink_trace() -> Iterator[List[np.ndarray]]:
    """Record which side of each kink the forward passes in this block land on."""
    trace: List[np.ndarray] = []
    token = _KINK_TRACE.set(trace)
    try:
        yield trace
    finally:
        _KINK_TRACE.reset(token)


def _trace_side(mask: np.ndarray) -> None:
    trace = _KINK_TRACE.get()
    if trace is not None:
        trace.append(np.packbits(mask))


def _as_tensor(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), dtype=like.dtype)


def _check_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> None:
    if a == b or a == () or b == ():
        return
    for big, small in ((a, b), (b, a)):
        if small == big[1:] or (len(small) == len(big) and small[0] == 1 and small[1:] == big[1:]):
            return
    raise ShapeError(f"{op}: cannot combine shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    if len(shape) == grad.ndim - 1:
        return grad.sum(axis=0)
    return grad.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad: np.ndarray):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad: np.ndarray):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray):
        return (
            _unbroadcast(grad * self.b, self.a.shape),
            _unbroadcast(grad * self.a, self.b.shape),
        )


class Relu(Function):
    name = "relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        _trace_side(self.mask)
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class LeakyRelu(Function):
    name = "leaky_relu"

    def forward(self, x: np.ndarray) -> np.ndarray:
        _trace_side(x > 0)
        self.slope = np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)
        return x * self.slope

    def backward(self, grad: np.ndarray):
        return (grad * self.slope,)


class Tanh(Function):
    name = "tanh"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * (1 - self.out * self.out),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x: np.ndarray) -> np.ndarray:
        # tanh form stays finite for large |x|
        self.out = (0.5 * (1 + np.tanh(0.5 * x))).astype(x.dtype)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out * (1 - self.out),)


class Log(Function):
    name = "log"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        _trace_side(x > LOG_CLAMP)
        return np.log(np.maximum(x, LOG_CLAMP)).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        safe = np.where(self.x > LOG_CLAMP, self.x, 1)
        return (np.where(self.x > LOG_CLAMP, grad / safe, 0).astype(grad.dtype),)


class Exp(Function):
    name = "exp"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out,)


class Square(Function):
    name = "square"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return x * x

    def backward(self, grad: np.ndarray):
        return (2 * grad * self.x,)


class Abs(Function):
    name = "abs"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.sign = np.sign(x)
        _trace_side(x > 0)
        return np.abs(x)

    def backward(self, grad: np.ndarray):
        return (grad * self.sign,)


def add(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a.shape, b.shape, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a.shape, b.shape, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a.shape, b.shape, "mul")
    return Mul.apply(a, b)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def leaky_relu(x: Tensor) -> Tensor:
    return LeakyRelu.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def log(x: Tensor) -> Tensor:
    """Natural log with the operand clamped to at least 1e-12."""
    return Log.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


_UNARY = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "square": square,
    "abs": absolute,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Tensor, b: Optional[Operand] = None) -> Tensor:
    """
    Dispatch an elementwise operation by name.

    Args:
        kind: One of add, sub, mul, relu, leaky_relu, tanh, sigmoid, log, exp, square, abs
        a: First operand
        b: Second operand for binary kinds

    Returns:
        Result tensor
    """
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"Unknown elementwise kind '{kind}'")


# ---------------------------------------------------------------------------
# Linear algebra and convolution
# ---------------------------------------------------------------------------


class MatMul(Function):
    name = "matmul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad: np.ndarray):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an M×K and a K×N tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return MatMul.apply(a, b)


def _conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv2d: output size ({size}+2*{pad}-{kernel})/{stride}+1 is not integral"
        )
    return span // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # (N, C, oh, ow, kh, kw) view over the padded input
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :oh, :ow]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    _, _, h, w = x.shape
    _, _, kh, kw = k.shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    win = _windows(_pad(x, pad), kh, kw, stride, oh, ow)
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad(
    grad: np.ndarray, k: np.ndarray, x_shape: Tuple[int, ...], stride: int, pad: int
) -> np.ndarray:
    n, c, h, w = x_shape
    _, _, kh, kw = k.shape
    _, _, oh, ow = grad.shape
    cols = np.tensordot(grad, k, axes=([1], [0]))  # (N, oh, ow, C, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w])


def _conv_kernel_grad(
    x: np.ndarray, grad: np.ndarray, k_shape: Tuple[int, ...], stride: int, pad: int
) -> np.ndarray:
    _, _, kh, kw = k_shape
    _, _, oh, ow = grad.shape
    win = _windows(_pad(x, pad), kh, kw, stride, oh, ow)
    return np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x: np.ndarray, k: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
        self.x, self.k, self.stride, self.pad = x, k, stride, pad
        return _conv_forward(x, k, stride, pad)

    def backward(self, grad: np.ndarray):
        dx = _conv_input_grad(grad, self.k, self.x.shape, self.stride, self.pad)
        dk = _conv_kernel_grad(self.x, grad, self.k.shape, self.stride, self.pad)
        return dx, dk


class ConvTranspose2d(Function):
    name = "conv_transpose2d"

    def forward(self, y: np.ndarray, k: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
        n, _, oh, ow = y.shape
        _, c, kh, kw = k.shape
        h = (oh - 1) * stride + kh - 2 * pad
        w = (ow - 1) * stride + kw - 2 * pad
        if h <= 0 or w <= 0:
            raise ShapeError(f"conv_transpose2d: empty output for input {y.shape}")
        self.y, self.k, self.stride, self.pad = y, k, stride, pad
        return _conv_input_grad(y, k, (n, c, h, w), stride, pad)

    def backward(self, grad: np.ndarray):
        dy = _conv_forward(grad, self.k, self.stride, self.pad)
        dk = _conv_kernel_grad(grad, self.y, self.k.shape, self.stride, self.pad)
        return dy, dk


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Cross-correlation of an N×C×H×W input with an F×C×Kh×Kw kernel.

    Raises:
        ShapeError: On channel mismatch or a non-integral output size
    """
    if x.ndim != 4 or k.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {k.shape}")
    return Conv2d.apply(x, k, stride=stride, pad=pad)


def conv_transpose2d(y: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Adjoint of `conv2d` for the same kernel: maps N×F×H'×W' back to N×C×H×W.
    """
    if y.ndim != 4 or k.ndim != 4 or y.shape[1] != k.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {y.shape} incompatible with kernel {k.shape}")
    return ConvTranspose2d.apply(y, k, stride=stride, pad=pad)


class AddBias(Function):
    name = "add_bias"

    def forward(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return x + b.reshape(1, -1, 1, 1)

    def backward(self, grad: np.ndarray):
        return grad, grad.sum(axis=(0, 2, 3))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to an N×C×H×W tensor."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias {b.shape} does not match input {x.shape}")
    return AddBias.apply(x, b)


# ---------------------------------------------------------------------------
# Normalization and channel plumbing
# ---------------------------------------------------------------------------


class InstanceNorm(Function):
    name = "instance_norm"

    def forward(self, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        mean = x.mean(axis=(2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(2, 3), keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.inv_std
        return self.xhat.astype(x.dtype)

    def backward(self, grad: np.ndarray):
        g_mean = grad.mean(axis=(2, 3), keepdims=True)
        gx_mean = (grad * self.xhat).mean(axis=(2, 3), keepdims=True)
        return (self.inv_std * (grad - g_mean - self.xhat * gx_mean),)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (item, channel) plane to zero mean and unit variance."""
    if x.ndim != 4 or x.shape[2] * x.shape[3] < 1:
        raise ShapeError(f"instance_norm: expected N×C×H×W with H·W ≥ 1, got {x.shape}")
    return InstanceNorm.apply(x, eps=eps)


class ConcatChannels(Function):
    name = "concat_channels"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad: np.ndarray):
        return grad[:, : self.split], grad[:, self.split :]


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two N×C×H×W tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4 or (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"concat_channels: mismatched shapes {a.shape} and {b.shape}")
    return ConcatChannels.apply(a, b)


class SliceChannels(Function):
    name = "slice_channels"

    def forward(self, x: np.ndarray, start: int = 0, stop: int = 0) -> np.ndarray:
        self.shape, self.start, self.stop = x.shape, start, stop
        return np.ascontiguousarray(x[:, start:stop])

    def backward(self, grad: np.ndarray):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[:, self.start : self.stop] = grad
        return (full,)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for {x.shape}")
    return SliceChannels.apply(x, start=start, stop=stop)


class RepeatBatch(Function):
    name = "repeat_batch"

    def forward(self, x: np.ndarray, n: int = 1) -> np.ndarray:
        return np.repeat(x, n, axis=0)

    def backward(self, grad: np.ndarray):
        return (grad.sum(axis=0, keepdims=True),)


def repeat_batch(x: Tensor, n: int) -> Tensor:
    """Repeat a batch-1 tensor n times along the batch axis."""
    if x.shape[0] != 1:
        raise ShapeError(f"repeat_batch expects batch size 1, got {x.shape}")
    return RepeatBatch.apply(x, n=n)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


class Sum(Function):
    name = "sum"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad: np.ndarray):
        count = max(int(np.prod(self.shape)), 1)
        return (np.broadcast_to(grad / count, self.shape).copy(),)


class ItemMean(Function):
    name = "item_mean"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return x.reshape(x.shape[0], -1).mean(axis=1)

    def backward(self, grad: np.ndarray):
        per_item = int(np.prod(self.shape[1:]))
        g = grad.reshape((-1,) + (1,) * (len(self.shape) - 1)) / per_item
        return (np.broadcast_to(g, self.shape).copy(),)


def sum_all(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def item_mean(x: Tensor) -> Tensor:
    """Mean over every axis but the first: N×... -> N."""
    return ItemMean.apply(x)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences divided by the batch size."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: mismatched shapes {a.shape} and {b.shape}")
    batch = a.shape[0] if a.ndim > 1 else 1
    return mul(sum_all(absolute(sub(a, b))), 1.0 / batch)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: mismatched shapes {a.shape} and {b.shape}")
    return mean(square(sub(a, b)))


def reduce(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Scalar reductions: mean, sum, l1_distance, mse.
    """
    if kind == "mean":
        return mean(a)
    if kind == "sum":
        return sum_all(a)
    if kind in ("l1_distance", "mse"):
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return l1_distance(a, b) if kind == "l1_distance" else mse(a, b)
    raise ValueError(f"Unknown reduction '{kind}'")


def add_all(terms: List[Tensor]) -> Tensor:
    """Sum a non-empty list of same-shaped tensors in list order."""
    if not terms:
        raise ValueError("add_all needs at least one term")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total
