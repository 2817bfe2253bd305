"""Exact parameter counts and FLOP accounting for attention modules.

Parameter closed forms per variant, for channel count C:

  se       2*C^2/r        se-var1  0           se-var2  C
  se-var3  C^2            se-gc    C^2/G
  eca-ns   k*C            eca      k  (shared kernel, reused at every channel)

Transform work is counted in multiply-accumulates (MACs) so the convention
is explicit: the published GFLOP overhead figures for these modules do not
state theirs, so reports carry a named convention (mac2 = 2 FLOPs per MAC,
mac1 = 1) and comparisons against published totals are order-of-magnitude
only. The headline attention overhead is the transform MACs; pooling,
sigmoid and rescaling work are reported as separate components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attention import AttentionConfig
from .errors import DataFormatError

FLOPS_PER_MAC = {"mac2": 2, "mac1": 1}

# Bottleneck-block output channels of a 50-layer residual net, in stage order.
RESNET50_BLOCK_CHANNELS = (256,) * 3 + (512,) * 4 + (1024,) * 6 + (2048,) * 3

# Published backbone cost of that net, used only as a denominator for
# overhead ratios, never re-derived here.
RESNET50_BASELINE_GFLOPS = 3.86


def count_params(config: AttentionConfig) -> int:
    """Learnable scalars in one attention module."""
    config.validate()
    c = config.channels
    if config.kind == "se":
        return 2 * c * (c // config.r)
    if config.kind == "se-var1":
        return 0
    if config.kind == "se-var2":
        return c
    if config.kind == "se-var3":
        return c * c
    if config.kind == "se-gc":
        return config.groups * (c // config.groups) ** 2
    if config.kind == "eca-ns":
        return config.resolved_k() * c
    return config.resolved_k()  # eca: the shared kernel only


def transform_macs(config: AttentionConfig) -> int:
    """Multiply-accumulates of the descriptor transform, per sample.

    Equal to the parameter count except for the shared-kernel module, whose
    k weights are each reused at every channel position.
    """
    config.validate()
    if config.kind == "eca":
        return config.resolved_k() * config.channels
    return count_params(config)


@dataclass(frozen=True)
class ModuleFlops:
    """Per-sample work of one attention module, split by component."""

    gap_adds: int
    transform_macs: int
    sigmoid_evals: int
    scale_muls: int

    def total(self, convention: str = "mac2") -> int:
        return (
            self.gap_adds
            + FLOPS_PER_MAC[convention] * self.transform_macs
            + self.sigmoid_evals
            + self.scale_muls
        )


def count_flops(config: AttentionConfig, spatial: tuple[int, int]) -> ModuleFlops:
    """Component-wise work of one module on an HxW feature map."""
    h, w = spatial
    c = config.channels
    return ModuleFlops(
        gap_adds=c * (h * w - 1),
        transform_macs=transform_macs(config),
        sigmoid_evals=c,
        scale_muls=c * h * w,
    )


@dataclass(frozen=True)
class BlockEntry:
    index: int
    channels: int
    detail: str
    params: int
    transform_macs: int


@dataclass
class ComplexityReport:
    attention: str
    convention: str
    breakdown: list[BlockEntry] = field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(e.params for e in self.breakdown)

    @property
    def transform_macs(self) -> int:
        return sum(e.transform_macs for e in self.breakdown)

    @property
    def flops(self) -> int:
        return FLOPS_PER_MAC[self.convention] * self.transform_macs

    def overhead_ratio(self, baseline_gflops: float = RESNET50_BASELINE_GFLOPS) -> float:
        return self.flops / (baseline_gflops * 1e9)

    def to_csv(self) -> str:
        lines = ["block,channels,detail,params,transform_macs"]
        for e in self.breakdown:
            lines.append(f"{e.index},{e.channels},{e.detail},{e.params},{e.transform_macs}")
        lines.append(f"total,,,{self.params},{self.transform_macs}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return "\n".join(
            [
                f"attention: {self.attention}",
                f"blocks: {len(self.breakdown)}",
                f"convention: {self.convention}",
                f"params: {self.params}",
                f"transform_macs: {self.transform_macs}",
                f"flops: {self.flops}",
            ]
        )


def count_network_params(
    block_channels,
    kind: str,
    *,
    r: int = 16,
    groups: int = 8,
    k: int | None = None,
    gamma: int = 2,
    b: int = 1,
    convention: str = "mac2",
) -> ComplexityReport:
    """Sum attention cost over one module per block of a network layout.

    ``kind='none'`` yields an all-zero report with one entry per block, so
    deltas against an attention-free baseline fall out of the same shape.
    """
    if convention not in FLOPS_PER_MAC:
        raise ValueError(f"unknown convention {convention!r}")
    report = ComplexityReport(attention=kind, convention=convention)
    for i, c in enumerate(block_channels):
        if kind == "none":
            report.breakdown.append(BlockEntry(i, int(c), "-", 0, 0))
            continue
        cfg = AttentionConfig(kind, int(c), r=r, groups=groups, k=k, gamma=gamma, b=b)
        report.breakdown.append(
            BlockEntry(i, int(c), cfg.detail(), count_params(cfg), transform_macs(cfg))
        )
    return report


def load_layout(path) -> list[int]:
    """Parse a network layout file: one ``channels=<C>`` line per block.

    Blank lines and ``#`` comments are ignored. Errors carry the 1-based
    line number.
    """
    channels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if key.strip() != "channels" or not sep:
                raise DataFormatError(f"line {lineno}: expected 'channels=<int>', got {line!r}")
            try:
                c = int(value.strip())
            except ValueError:
                raise DataFormatError(f"line {lineno}: channel count {value.strip()!r} is not an integer") from None
            if c < 1:
                raise DataFormatError(f"line {lineno}: channel count must be >= 1")
            channels.append(c)
    return channels
