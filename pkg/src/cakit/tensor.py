"""Dense float64 tensors with reverse-mode automatic differentiation.

Feature maps use the [N, C, H, W] layout and channel descriptors use [N, C].
All data is contiguous float64: the point of this library is verification,
so gradient checks need double precision, not throughput.

Each differentiable op computes its result eagerly with numpy and, when
gradient recording is enabled, attaches an adjoint closure to the output.
``Tensor.backward()`` collects the ops behind a scalar into a ``GradTape``
and replays the closures in reverse topological order.

Data buffers are treated as immutable after construction; optimizers rebind
``.data`` to a fresh array instead of writing in place, so tensors are safe
to share read-only across threads. A backward replay is confined to the
thread that built the graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable adjoint recording inside the block (cheap inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Seed d(self)/d(self) = 1 and propagate adjoints to every leaf."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output")
        self.grad = np.ones_like(self.data)
        GradTape(self).replay_adjoints()

    # Arithmetic sugar; the module-level functions hold the actual rules.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, smul(other, -1.0))

    def __neg__(self) -> "Tensor":
        return smul(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return smul(self, float(other))

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


class GradTape:
    """Ordered record of the differentiable ops behind one root tensor.

    Replaying the record in reverse pushes adjoints through every recorded
    op, leaving each ``requires_grad`` input with a gradient of its own
    shape. The order is a topological sort of the op graph, so every op
    sees its output gradient fully accumulated before it runs.
    """

    def __init__(self, root: "Tensor"):
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.ops = order

    def replay_adjoints(self) -> None:
        for node in reversed(self.ops):
            if node._backward is not None:
                node._backward()


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, allocating on first touch."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def register_op(out: Tensor, inputs: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    """Mark ``out`` as produced from ``inputs`` with the given adjoint closure.

    No-op while gradients are disabled or no input requires them, so
    inference passes build no graph.
    """
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._prev = tuple(inputs)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch for add: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward():
        accumulate_grad(a, out.grad)
        accumulate_grad(b, out.grad)

    return register_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch for mul: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward():
        accumulate_grad(a, out.grad * b.data)
        accumulate_grad(b, out.grad * a.data)

    return register_op(out, (a, b), backward)


def smul(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def backward():
        accumulate_grad(a, out.grad * s)

    return register_op(out, (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def backward():
        accumulate_grad(a, np.broadcast_to(out.grad, a.shape))

    return register_op(out, (a,), backward)


def tensor_mean(a: Tensor) -> Tensor:
    inv = 1.0 / a.size
    out = Tensor(a.data.sum() * inv)

    def backward():
        accumulate_grad(a, np.broadcast_to(out.grad * inv, a.shape))

    return register_op(out, (a,), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward():
        accumulate_grad(x, out.grad * (x.data > 0.0))

    return register_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form saturates cleanly for large |x| instead of overflowing exp.
    out = Tensor(0.5 * (1.0 + np.tanh(0.5 * x.data)))

    def backward():
        accumulate_grad(x, out.grad * out.data * (1.0 - out.data))

    return register_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# channel-descriptor ops
# ---------------------------------------------------------------------------

def gap(x: Tensor) -> Tensor:
    """Global average pooling: [N, C, H, W] -> per-channel spatial mean [N, C]."""
    if x.ndim != 4:
        raise ValueError(f"gap expects [N, C, H, W], got shape {x.shape}")
    n, c, h, w = x.shape
    if h * w == 0:
        raise ValueError("empty spatial extent")
    inv = 1.0 / (h * w)
    out = Tensor(x.data.mean(axis=(2, 3)))

    def backward():
        accumulate_grad(x, np.broadcast_to(out.grad[:, :, None, None] * inv, x.shape))

    return register_op(out, (x,), backward)


def scale_channels(x: Tensor, omega: Tensor) -> Tensor:
    """Recalibrate: out[n,c,h,w] = omega[n,c] * x[n,c,h,w]."""
    if x.ndim != 4 or omega.ndim != 2 or x.shape[:2] != omega.shape:
        raise ValueError(
            f"shape mismatch for scale_channels: x {x.shape} vs omega {omega.shape}"
        )
    out = Tensor(x.data * omega.data[:, :, None, None])

    def backward():
        accumulate_grad(x, out.grad * omega.data[:, :, None, None])
        accumulate_grad(omega, (out.grad * x.data).sum(axis=(2, 3)))

    return register_op(out, (x, omega), backward)


def linear(y: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Batched matrix-vector product: [N, Cin] x [Cout, Cin] -> [N, Cout]."""
    if y.ndim != 2 or weight.ndim != 2 or y.shape[1] != weight.shape[1]:
        raise ValueError(f"shape mismatch for linear: y {y.shape} vs W {weight.shape}")
    data = y.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match Cout {weight.shape[0]}")
        data = data + bias.data
    out = Tensor(data)
    inputs = (y, weight) if bias is None else (y, weight, bias)

    def backward():
        accumulate_grad(y, out.grad @ weight.data)
        accumulate_grad(weight, out.grad.T @ y.data)
        if bias is not None:
            accumulate_grad(bias, out.grad.sum(axis=0))

    return register_op(out, inputs, backward)


def conv1d_channels(y: Tensor, kernel: Tensor, padding: int | None = None) -> Tensor:
    """Slide one shared kernel along the channel axis of [N, C].

    Zero padding of (k-1)/2 on both ends keeps the output length at C, so
    the result can gate the same channels it was computed from.
    """
    if y.ndim != 2:
        raise ValueError(f"conv1d_channels expects [N, C], got shape {y.shape}")
    if kernel.ndim != 1:
        raise ValueError(f"kernel must be 1D, got shape {kernel.shape}")
    k = kernel.size
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    p = (k - 1) // 2
    if padding is not None and padding != p:
        raise ValueError(f"padding must be (k-1)/2 = {p}, got {padding}")
    n, c = y.shape
    ypad = np.pad(y.data, ((0, 0), (p, p)))
    windows = sliding_window_view(ypad, k, axis=1)  # [N, C, k]
    out = Tensor(windows @ kernel.data)

    def backward():
        g = out.grad
        accumulate_grad(kernel, np.einsum("nck,nc->k", windows, g))
        # Adjoint of a correlation is a correlation with the flipped kernel.
        gpad = np.pad(g, ((0, 0), (p, p)))
        gwin = sliding_window_view(gpad, k, axis=1)
        accumulate_grad(y, gwin @ kernel.data[::-1].copy())

    return register_op(out, (y, kernel), backward)


# ---------------------------------------------------------------------------
# 2D convolution (backbone support)
# ---------------------------------------------------------------------------

def _im2col(xpad: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n = xpad.shape[0]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)


def conv2d(x: Tensor, filters: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlate [N, Cin, H, W] with [Cout, Cin, k, k], zero padded.

    Square odd kernels only; default padding k//2 preserves spatial size at
    stride 1.
    """
    if x.ndim != 4 or filters.ndim != 4:
        raise ValueError("conv2d expects x [N, Cin, H, W] and filters [Cout, Cin, k, k]")
    n, cin, h, w = x.shape
    cout, cin_f, kh, kw = filters.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"filters must be square with odd size, got {kh}x{kw}")
    if cin != cin_f:
        raise ValueError(f"channel mismatch: input has {cin}, filters expect {cin_f}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    k = kh
    p = k // 2 if padding is None else padding
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    xpad = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    wmat = filters.data.reshape(cout, -1)
    cols = _im2col(xpad, k, stride, ho, wo)
    out = Tensor((cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    del cols  # rebuilt on demand in backward; keeps peak memory at one copy

    def backward():
        g = out.grad.transpose(0, 2, 3, 1).reshape(-1, cout)
        if filters.requires_grad:
            accumulate_grad(filters, (g.T @ _im2col(xpad, k, stride, ho, wo)).reshape(filters.shape))
        if x.requires_grad:
            dcols = (g @ wmat).reshape(n, ho, wo, cin, k, k)
            dxpad = np.zeros_like(xpad)
            for ki in range(k):
                for kj in range(k):
                    dxpad[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                        dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            accumulate_grad(x, dxpad[:, :, p:p + h, p:p + w])

    return register_op(out, (x, filters), backward)


# ---------------------------------------------------------------------------
# channels-last variants used inside the CNN
#
# The public contract is channels-first, but an im2col gather over [N, C, H,
# W] float64 runs at a fraction of memcpy speed. The network therefore keeps
# its feature maps channels-last internally, where every convolution copy is
# a run of whole contiguous channel vectors. Same math, same gradients.
# ---------------------------------------------------------------------------

def nchw_to_nhwc(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"expected [N, C, H, W], got shape {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)))

    def backward():
        accumulate_grad(x, out.grad.transpose(0, 3, 1, 2))

    return register_op(out, (x,), backward)


def gap_nhwc(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"expected [N, H, W, C], got shape {x.shape}")
    n, h, w, c = x.shape
    if h * w == 0:
        raise ValueError("empty spatial extent")
    inv = 1.0 / (h * w)
    out = Tensor(x.data.mean(axis=(1, 2)))

    def backward():
        accumulate_grad(x, np.broadcast_to(out.grad[:, None, None, :] * inv, x.shape))

    return register_op(out, (x,), backward)


def scale_channels_nhwc(x: Tensor, omega: Tensor) -> Tensor:
    if x.ndim != 4 or omega.ndim != 2 or (x.shape[0], x.shape[3]) != omega.shape:
        raise ValueError(
            f"shape mismatch for scale_channels_nhwc: x {x.shape} vs omega {omega.shape}"
        )
    out = Tensor(x.data * omega.data[:, None, None, :])

    def backward():
        accumulate_grad(x, out.grad * omega.data[:, None, None, :])
        accumulate_grad(omega, (out.grad * x.data).sum(axis=(1, 2)))

    return register_op(out, (x, omega), backward)


def conv2d_nhwc(x: Tensor, filters: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    """Channels-last twin of :func:`conv2d`; filters stay [Cout, Cin, k, k].

    Computed as k*k shifted channel-mixing matmuls, which keeps every copy
    contiguous over the channel axis.
    """
    if x.ndim != 4 or filters.ndim != 4:
        raise ValueError("conv2d_nhwc expects x [N, H, W, Cin] and filters [Cout, Cin, k, k]")
    n, h, w, cin = x.shape
    cout, cin_f, kh, kw = filters.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"filters must be square with odd size, got {kh}x{kw}")
    if cin != cin_f:
        raise ValueError(f"channel mismatch: input has {cin}, filters expect {cin_f}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    k = kh
    p = k // 2 if padding is None else padding
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    xpad = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    wtaps = np.ascontiguousarray(filters.data.transpose(2, 3, 1, 0)).reshape(k * k, cin, cout)
    # one contiguous copy per tap, shared between the forward matmuls and
    # the weight-gradient matmuls in backward
    blocks = np.empty((k * k, n * ho * wo, cin))
    for ki in range(k):
        for kj in range(k):
            blocks[ki * k + kj] = xpad[
                :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :
            ].reshape(-1, cin)
    acc = blocks[0] @ wtaps[0]
    for t in range(1, k * k):
        acc += blocks[t] @ wtaps[t]
    out = Tensor(acc.reshape(n, ho, wo, cout))

    def backward():
        g = out.grad.reshape(-1, cout)
        if filters.requires_grad:
            dtaps = np.empty_like(wtaps)
            for t in range(k * k):
                dtaps[t] = blocks[t].T @ g
            accumulate_grad(filters, dtaps.reshape(k, k, cin, cout).transpose(3, 2, 0, 1))
        if x.requires_grad:
            dxpad = np.zeros_like(xpad)
            for ki in range(k):
                for kj in range(k):
                    dblk = (g @ wtaps[ki * k + kj].T).reshape(n, ho, wo, cin)
                    dxpad[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride, :] += dblk
            accumulate_grad(x, dxpad[:, p:p + h, p:p + w, :])

    return register_op(out, (x, filters), backward)


# ---------------------------------------------------------------------------
# loss and the training entry point
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of [N, K] logits against integer labels [N]."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N, K], got shape {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError("label out of range")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    out = Tensor(-logp[np.arange(n), labels].mean())

    def backward():
        p = ez / ez.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, out.grad * p / n)

    return register_op(out, (logits,), backward)


def value_and_grad(f, params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate a scalar tensor program and return (value, dvalue/dparam).

    ``f`` receives the parameter list and must return a scalar Tensor built
    from the primitives in this module.
    """
    for p in params:
        p.requires_grad = True
        p.grad = None
    out = f(list(params))
    if not isinstance(out, Tensor):
        raise ValueError("program must return a Tensor")
    if out.data.size != 1:
        raise ValueError("program output must be a scalar")
    out.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    return float(out.data.reshape(())), grads
