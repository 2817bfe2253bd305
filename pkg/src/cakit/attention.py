"""Channel-attention variants over [N, C, H, W] feature maps.

Seven gate constructions share one contract: squeeze the map to a [N, C]
descriptor with global average pooling, transform it, squash through a
sigmoid into per-channel weights in (0, 1), and multiply those weights back
onto the input. They differ only in the transform:

  se        two-layer bottleneck, C -> C/r -> C with a ReLU between
  se-var1   identity (no parameters)
  se-var2   per-channel scalar weight (diagonal transform)
  se-var3   full CxC matrix
  se-gc     block-diagonal matrix, G independent channel groups
  eca-ns    each channel mixes its k-neighborhood with its own kernel
  eca       one shared k-tap kernel slid along the channel axis, no bias

Every ``*_forward`` function returns ``(omega, out)`` where ``omega`` is the
[N, C] gate and ``out = scale_channels(x, omega)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError
from .kernel_policy import KernelPolicy, adaptive_kernel_size
from .tensor import (
    Tensor,
    accumulate_grad,
    conv1d_channels,
    gap,
    linear,
    register_op,
    relu,
    scale_channels,
    sigmoid,
)

ATTENTION_KINDS = ("se", "se-var1", "se-var2", "se-var3", "se-gc", "eca-ns", "eca")


@dataclass(frozen=True)
class AttentionConfig:
    """Which gate to build and its hyperparameters.

    ``channels <= 0`` marks a template to be resolved per insertion site
    with :meth:`with_channels`. ``k=None`` on the eca kinds means the kernel
    size is chosen adaptively from the channel count.
    """

    kind: str
    channels: int = 0
    r: int = 16
    groups: int = 8
    k: int | None = None
    gamma: int = 2
    b: int = 1

    def with_channels(self, channels: int) -> "AttentionConfig":
        return dataclasses.replace(self, channels=channels)

    def policy(self) -> KernelPolicy:
        return KernelPolicy(gamma=self.gamma, b=self.b)

    def resolved_k(self) -> int | None:
        """Concrete kernel size for the eca kinds, None for the others."""
        if self.kind not in ("eca", "eca-ns"):
            return None
        if self.k is not None:
            return self.k
        return adaptive_kernel_size(self.channels, self.policy())

    def validate(self) -> None:
        if self.kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.kind!r}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kind == "se":
            if self.r < 1:
                raise ConfigError(f"reduction ratio must be >= 1, got {self.r}")
            if self.channels % self.r != 0:
                raise ConfigError(f"channels {self.channels} not divisible by r={self.r}")
        elif self.kind == "se-gc":
            if self.groups < 1:
                raise ConfigError(f"group count must be >= 1, got {self.groups}")
            if self.channels % self.groups != 0:
                raise ConfigError(
                    f"channels {self.channels} not divisible by G={self.groups}"
                )
        elif self.kind in ("eca", "eca-ns"):
            k = self.resolved_k()
            if k % 2 == 0:
                raise ConfigError(f"kernel size must be odd, got {k}")
            if not 1 <= k <= self.channels:
                raise ConfigError(f"kernel size {k} outside [1, C={self.channels}]")

    def detail(self) -> str:
        """Short hyperparameter tag for reports, e.g. 'r=16' or 'k=5'."""
        if self.kind == "se":
            return f"r={self.r}"
        if self.kind == "se-gc":
            return f"G={self.groups}"
        if self.kind in ("eca", "eca-ns"):
            return f"k={self.resolved_k()}"
        return "-"


# ---------------------------------------------------------------------------
# descriptor transforms that are not general tensor primitives
# ---------------------------------------------------------------------------

def channel_mul(y: Tensor, w: Tensor) -> Tensor:
    """Per-channel product of a [N, C] descriptor with a length-C weight."""
    if y.ndim != 2 or w.ndim != 1 or y.shape[1] != w.size:
        raise ValueError(f"shape mismatch for channel_mul: y {y.shape} vs w {w.shape}")
    out = Tensor(y.data * w.data)

    def backward():
        accumulate_grad(y, out.grad * w.data)
        accumulate_grad(w, (out.grad * y.data).sum(axis=0))

    return register_op(out, (y, w), backward)


def block_diag_matvec(y: Tensor, blocks: Sequence[Tensor]) -> Tensor:
    """Apply a block-diagonal matrix given as per-group square blocks.

    Each block g maps its own contiguous slice of channels; groups do not
    interact. Per-block products go through the same matmul kernel as
    ``linear``, so a single full-size block reproduces it bit for bit.
    """
    if y.ndim != 2:
        raise ValueError(f"block_diag_matvec expects [N, C], got {y.shape}")
    sizes = []
    for blk in blocks:
        if blk.ndim != 2 or blk.shape[0] != blk.shape[1]:
            raise ValueError(f"blocks must be square, got {blk.shape}")
        sizes.append(blk.shape[0])
    if sum(sizes) != y.shape[1]:
        raise ValueError(f"block sizes {sizes} do not cover {y.shape[1]} channels")

    bounds = np.cumsum([0] + sizes)
    parts = [y.data[:, bounds[g]:bounds[g + 1]] @ blk.data.T for g, blk in enumerate(blocks)]
    out = Tensor(np.concatenate(parts, axis=1))

    def backward():
        gy = np.zeros_like(y.data) if y.requires_grad else None
        for g, blk in enumerate(blocks):
            lo, hi = bounds[g], bounds[g + 1]
            gslice = out.grad[:, lo:hi]
            accumulate_grad(blk, gslice.T @ y.data[:, lo:hi])
            if gy is not None:
                gy[:, lo:hi] = gslice @ blk.data
        if gy is not None:
            accumulate_grad(y, gy)

    return register_op(out, (y, *blocks), backward)


def per_channel_conv1d(y: Tensor, kernels: Tensor) -> Tensor:
    """Mix each channel with its zero-padded k-neighborhood using that
    channel's own k-tap kernel.

    ``kernels`` is [C, k] with k odd; row i is the kernel for channel i.
    """
    if y.ndim != 2 or kernels.ndim != 2:
        raise ValueError("per_channel_conv1d expects y [N, C] and kernels [C, k]")
    c, k = kernels.shape
    if y.shape[1] != c:
        raise ValueError(f"kernel rows {c} do not match channels {y.shape[1]}")
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    p = (k - 1) // 2
    ypad = np.pad(y.data, ((0, 0), (p, p)))
    windows = sliding_window_view(ypad, k, axis=1)  # [N, C, k]
    out = Tensor((windows * kernels.data).sum(axis=2))

    def backward():
        g = out.grad
        accumulate_grad(kernels, (windows * g[:, :, None]).sum(axis=0))
        if y.requires_grad:
            gpad = np.zeros_like(ypad)
            for j in range(k):
                gpad[:, j:j + c] += g * kernels.data[:, j]
            accumulate_grad(y, gpad[:, p:p + c])

    return register_op(out, (y, kernels), backward)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def se_forward(x: Tensor, w1: Tensor, w2: Tensor) -> tuple[Tensor, Tensor]:
    """Bottleneck gate: sigmoid(W2 relu(W1 gap(x)))."""
    c = x.shape[1]
    if w1.shape[1] != c or w2.shape[0] != c or w2.shape[1] != w1.shape[0]:
        raise ConfigError(
            f"se weights {w1.shape}/{w2.shape} do not chain over {c} channels"
        )
    omega = sigmoid(linear(relu(linear(gap(x), w1)), w2))
    return omega, scale_channels(x, omega)


def se_var1_forward(x: Tensor) -> tuple[Tensor, Tensor]:
    """Parameter-free gate: sigmoid of the raw channel descriptor."""
    omega = sigmoid(gap(x))
    return omega, scale_channels(x, omega)


def se_var2_forward(x: Tensor, w_diag: Tensor) -> tuple[Tensor, Tensor]:
    """Diagonal gate: each channel weighted by its own scalar."""
    if w_diag.size != x.shape[1]:
        raise ConfigError(f"w_diag length {w_diag.size} != channels {x.shape[1]}")
    omega = sigmoid(channel_mul(gap(x), w_diag))
    return omega, scale_channels(x, omega)


def se_var3_forward(x: Tensor, w_full: Tensor) -> tuple[Tensor, Tensor]:
    """Full-matrix gate: every channel attends to every other."""
    c = x.shape[1]
    if w_full.shape != (c, c):
        raise ConfigError(f"w_full shape {w_full.shape} != ({c}, {c})")
    omega = sigmoid(linear(gap(x), w_full))
    return omega, scale_channels(x, omega)


def se_gc_forward(x: Tensor, blocks: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    """Grouped gate: block-diagonal transform, one block per channel group."""
    omega = sigmoid(block_diag_matvec(gap(x), blocks))
    return omega, scale_channels(x, omega)


def eca_ns_forward(x: Tensor, kernels: Tensor) -> tuple[Tensor, Tensor]:
    """Banded gate without sharing: per-channel kernels over k neighbors."""
    omega = sigmoid(per_channel_conv1d(gap(x), kernels))
    return omega, scale_channels(x, omega)


def eca_forward(x: Tensor, kernel: Tensor) -> tuple[Tensor, Tensor]:
    """Shared-kernel gate: one k-tap 1D convolution along channels, no bias."""
    omega = sigmoid(conv1d_channels(gap(x), kernel))
    return omega, scale_channels(x, omega)


# ---------------------------------------------------------------------------
# banded-matrix reference (test oracle)
# ---------------------------------------------------------------------------

def band_matrix(channels: int, kernel: np.ndarray) -> np.ndarray:
    """Materialize the C x C banded matrix equivalent to sliding ``kernel``.

    Row i carries the kernel centered on column i; entries falling outside
    the matrix are dropped, matching zero padding of the descriptor.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.size
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    p = (k - 1) // 2
    mat = np.zeros((channels, channels))
    for i in range(channels):
        for j in range(k):
            col = i + j - p
            if 0 <= col < channels:
                mat[i, col] = kernel[j]
    return mat


def band_matrix_oracle(y, kernel) -> np.ndarray:
    """Gate computed the slow way: sigmoid of an explicit banded matmul.

    Test oracle only; shares no code with the sliding-window path.
    """
    arr = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    ker = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel, dtype=np.float64)
    mat = band_matrix(arr.shape[1], ker)
    z = arr @ mat.T
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# parameter-owning modules
# ---------------------------------------------------------------------------

def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    # zero-mean uniform, scale 1/sqrt(fan_in): keeps initial gates near 0.5
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


class AttentionModule:
    """Immutable bundle of gate parameters with a callable forward.

    ``gate`` maps a pooled [N, C] descriptor to the [N, C] weights; the
    feature-map ``__call__`` is always gap -> gate -> rescale.
    """

    kind = ""

    def __init__(self, channels: int):
        self.channels = channels

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def param_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def gate(self, y: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        omega = self.gate(gap(x))
        return omega, scale_channels(x, omega)


class SE(AttentionModule):
    kind = "se"

    def __init__(self, channels, r=16, rng=None, w1=None, w2=None):
        super().__init__(channels)
        AttentionConfig("se", channels, r=r).validate()
        self.r = r
        hidden = channels // r
        if w1 is None:
            w1 = _uniform(rng, channels, (hidden, channels))
        if w2 is None:
            w2 = _uniform(rng, hidden, (channels, hidden))
        self.w1 = Tensor(w1, requires_grad=True)
        self.w2 = Tensor(w2, requires_grad=True)

    def parameters(self):
        return [("w1", self.w1), ("w2", self.w2)]

    def gate(self, y):
        return sigmoid(linear(relu(linear(y, self.w1)), self.w2))


class SEVar1(AttentionModule):
    kind = "se-var1"

    def gate(self, y):
        return sigmoid(y)


class SEVar2(AttentionModule):
    kind = "se-var2"

    def __init__(self, channels, rng=None, w=None):
        super().__init__(channels)
        if w is None:
            w = _uniform(rng, 1, channels)
        self.w = Tensor(w, requires_grad=True)

    def parameters(self):
        return [("w", self.w)]

    def gate(self, y):
        return sigmoid(channel_mul(y, self.w))


class SEVar3(AttentionModule):
    kind = "se-var3"

    def __init__(self, channels, rng=None, w=None):
        super().__init__(channels)
        if w is None:
            w = _uniform(rng, channels, (channels, channels))
        self.w = Tensor(w, requires_grad=True)

    def parameters(self):
        return [("w", self.w)]

    def gate(self, y):
        return sigmoid(linear(y, self.w))


class SEGC(AttentionModule):
    kind = "se-gc"

    def __init__(self, channels, groups=8, rng=None, blocks=None):
        super().__init__(channels)
        AttentionConfig("se-gc", channels, groups=groups).validate()
        self.groups = groups
        m = channels // groups
        if blocks is None:
            blocks = [_uniform(rng, m, (m, m)) for _ in range(groups)]
        self.blocks = [Tensor(b, requires_grad=True) for b in blocks]

    def parameters(self):
        return [(f"block{g}", blk) for g, blk in enumerate(self.blocks)]

    def gate(self, y):
        return sigmoid(block_diag_matvec(y, self.blocks))


class ECANS(AttentionModule):
    kind = "eca-ns"

    def __init__(self, channels, k, rng=None, kernels=None):
        super().__init__(channels)
        AttentionConfig("eca-ns", channels, k=k).validate()
        self.k = k
        if kernels is None:
            kernels = _uniform(rng, k, (channels, k))
        self.kernels = Tensor(kernels, requires_grad=True)

    def parameters(self):
        return [("kernels", self.kernels)]

    def gate(self, y):
        return sigmoid(per_channel_conv1d(y, self.kernels))


class ECA(AttentionModule):
    kind = "eca"

    def __init__(self, channels, k, rng=None, kernel=None):
        super().__init__(channels)
        AttentionConfig("eca", channels, k=k).validate()
        self.k = k
        if kernel is None:
            kernel = _uniform(rng, k, k)
        self.kernel = Tensor(kernel, requires_grad=True)

    def parameters(self):
        return [("kernel", self.kernel)]

    def gate(self, y):
        return sigmoid(conv1d_channels(y, self.kernel))


def make_attention(config: AttentionConfig, rng: np.random.Generator) -> AttentionModule:
    """Build the configured gate with freshly initialized parameters."""
    config.validate()
    c = config.channels
    if config.kind == "se":
        return SE(c, r=config.r, rng=rng)
    if config.kind == "se-var1":
        return SEVar1(c)
    if config.kind == "se-var2":
        return SEVar2(c, rng=rng)
    if config.kind == "se-var3":
        return SEVar3(c, rng=rng)
    if config.kind == "se-gc":
        return SEGC(c, groups=config.groups, rng=rng)
    if config.kind == "eca-ns":
        return ECANS(c, k=config.resolved_k(), rng=rng)
    return ECA(c, k=config.resolved_k(), rng=rng)
