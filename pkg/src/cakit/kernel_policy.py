"""Adaptive 1D kernel sizing from channel count.

Channel dimension and kernel size are linked through the exponential map
C = 2^(gamma*k - b). Inverting it and snapping to the nearest odd integer
gives the kernel size the shared-kernel attention module should use for a
given channel count: wide layers get wider cross-channel coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_EXPONENT = 62  # keep 2**e inside a signed 64-bit range


@dataclass(frozen=True)
class KernelPolicy:
    gamma: int = 2
    b: int = 1
    tie_break: str = "down"

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.tie_break not in ("down", "up"):
            raise ValueError("tie_break must be 'down' or 'up'")


DEFAULT_POLICY = KernelPolicy()


def phi(k: int, policy: KernelPolicy = DEFAULT_POLICY) -> int:
    """Channel count whose preferred kernel size is k: 2**(gamma*k - b)."""
    if k < 1:
        raise ValueError("kernel size must be >= 1")
    exponent = policy.gamma * k - policy.b
    if exponent < 0:
        raise ValueError("gamma*k - b must be non-negative")
    if exponent > _MAX_EXPONENT:
        raise OverflowError(f"2**{exponent} exceeds the supported channel range")
    return 2 ** exponent


def adaptive_kernel_sizes(channels, policy: KernelPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Vectorized kernel-size selection for an array of channel counts."""
    c = np.asarray(channels, dtype=np.float64)
    if c.size and c.min() < 1:
        raise ValueError("channel counts must be >= 1")
    t = np.log2(c) / policy.gamma + policy.b / policy.gamma
    k_lo = 2.0 * np.floor((t - 1.0) / 2.0) + 1.0  # largest odd <= t
    k_hi = k_lo + 2.0
    if policy.tie_break == "down":
        k = np.where(t - k_lo <= k_hi - t, k_lo, k_hi)
    else:
        k = np.where(k_hi - t <= t - k_lo, k_hi, k_lo)
    return np.maximum(k, 1.0).astype(np.int64)


def adaptive_kernel_size(channels: int, policy: KernelPolicy = DEFAULT_POLICY) -> int:
    """Odd kernel size nearest to log2(C)/gamma + b/gamma, clamped to >= 1.

    A tie (the target landing exactly between two odd integers) resolves
    per ``policy.tie_break``; the default rounds down.
    """
    if channels < 1:
        raise ValueError("channel count must be >= 1")
    return int(adaptive_kernel_sizes(np.array([channels]), policy)[0])
