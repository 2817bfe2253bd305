"""Micro residual CNN with pluggable channel attention, plus checkpoint IO.

The backbone is deliberately small: a 3x3 stem, three stages of basic
residual blocks (two 3x3 convs each, no normalization layers), global
average pooling and a linear classifier. The attention gate sits after the
second convolution of each block, before the residual addition, so every
block is an insertion site and the three stage widths exercise more than
one adaptive kernel size.

Checkpoint format (little-endian):

  magic  b"CAKC"
  u32    version (1)
  u32    spec length, then the network spec as UTF-8 JSON
  u32    parameter count, then per parameter: u32 ndim, u32 dims..., f64 data
  u64    FNV-1a hash of everything between the version field and the hash
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, AttentionModule, make_attention
from .errors import CheckpointError, ConfigError
from .tensor import (
    Tensor,
    add,
    conv2d_nhwc,
    gap_nhwc,
    linear,
    nchw_to_nhwc,
    relu,
    scale_channels_nhwc,
)

CHECKPOINT_MAGIC = b"CAKC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StageSpec:
    channels: int
    blocks: int
    stride: int


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 3
    stem_channels: int = 16
    stem_kernel: int = 3
    stages: tuple[StageSpec, ...] = (
        StageSpec(16, 2, 1),
        StageSpec(32, 2, 2),
        StageSpec(64, 2, 2),
    )
    num_classes: int = 10
    attention: AttentionConfig | None = None

    def validate(self) -> None:
        if self.stem_channels < 1 or self.in_channels < 1 or self.num_classes < 1:
            raise ConfigError("channel and class counts must be >= 1")
        if self.stem_kernel % 2 == 0:
            raise ConfigError("stem kernel must be odd")
        for st in self.stages:
            if st.channels < 1 or st.blocks < 1:
                raise ConfigError("stage channels and block counts must be >= 1")
            if st.stride not in (1, 2):
                raise ConfigError(f"stage stride must be 1 or 2, got {st.stride}")
        if self.attention is not None:
            for c in self.block_channels():
                self.attention.with_channels(c).validate()

    def block_channels(self) -> list[int]:
        """Output channels of every residual block, i.e. every attention site."""
        return [st.channels for st in self.stages for _ in range(st.blocks)]

    def to_json(self) -> str:
        d = {
            "in_channels": self.in_channels,
            "stem_channels": self.stem_channels,
            "stem_kernel": self.stem_kernel,
            "stages": [[s.channels, s.blocks, s.stride] for s in self.stages],
            "num_classes": self.num_classes,
            "attention": None
            if self.attention is None
            else {
                "kind": self.attention.kind,
                "r": self.attention.r,
                "groups": self.attention.groups,
                "k": self.attention.k,
                "gamma": self.attention.gamma,
                "b": self.attention.b,
            },
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid network spec JSON: {exc}") from None
        try:
            attn = d.get("attention")
            return cls(
                in_channels=int(d.get("in_channels", 3)),
                stem_channels=int(d["stem_channels"]),
                stem_kernel=int(d["stem_kernel"]),
                stages=tuple(StageSpec(int(c), int(n), int(s)) for c, n, s in d["stages"]),
                num_classes=int(d["num_classes"]),
                attention=None
                if attn is None
                else AttentionConfig(
                    kind=attn["kind"],
                    channels=0,
                    r=int(attn.get("r", 16)),
                    groups=int(attn.get("groups", 8)),
                    k=None if attn.get("k") is None else int(attn["k"]),
                    gamma=int(attn.get("gamma", 2)),
                    b=int(attn.get("b", 1)),
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid network spec: {exc}") from None


class Conv2dLayer:
    # feature maps flow channels-last inside the network; the weight layout
    # [Cout, Cin, k, k] is the public/checkpoint convention
    def __init__(self, cin, cout, k, stride, rng):
        std = np.sqrt(2.0 / (cin * k * k))
        self.weight = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)), requires_grad=True)
        self.stride = stride

    def __call__(self, x):
        return conv2d_nhwc(x, self.weight, stride=self.stride)


class BasicBlock:
    def __init__(self, site, cin, cout, stride, attn_cfg, rng):
        self.site = site
        self.conv1 = Conv2dLayer(cin, cout, 3, stride, rng)
        self.conv2 = Conv2dLayer(cout, cout, 3, 1, rng)
        self.attn: AttentionModule | None = None
        if attn_cfg is not None:
            self.attn = make_attention(attn_cfg.with_channels(cout), rng)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv2dLayer(cin, cout, 1, stride, rng)

    def __call__(self, x, gates=None):
        h = relu(self.conv1(x))
        h = self.conv2(h)
        if self.attn is not None:
            omega = self.attn.gate(gap_nhwc(h))
            h = scale_channels_nhwc(h, omega)
            if gates is not None:
                gates.append((self.site, omega))
        shortcut = x if self.proj is None else self.proj(x)
        return relu(add(h, shortcut))

    def parameters(self):
        out = [(f"{self.site}.conv1", self.conv1.weight), (f"{self.site}.conv2", self.conv2.weight)]
        if self.proj is not None:
            out.append((f"{self.site}.proj", self.proj.weight))
        if self.attn is not None:
            out.extend((f"{self.site}.attn.{n}", p) for n, p in self.attn.parameters())
        return out


class Network:
    def __init__(self, spec: NetworkSpec, seed: int):
        spec.validate()
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.stem = Conv2dLayer(spec.in_channels, spec.stem_channels, spec.stem_kernel, 1, rng)
        self.blocks: list[BasicBlock] = []
        cin = spec.stem_channels
        for si, st in enumerate(spec.stages, start=1):
            for bi in range(1, st.blocks + 1):
                stride = st.stride if bi == 1 else 1
                self.blocks.append(
                    BasicBlock(f"s{si}b{bi}", cin, st.channels, stride, spec.attention, rng)
                )
                cin = st.channels
        std = 1.0 / np.sqrt(cin)
        self.head_w = Tensor(rng.normal(0.0, std, size=(spec.num_classes, cin)), requires_grad=True)
        self.head_b = Tensor(np.zeros(spec.num_classes), requires_grad=True)

    def forward(self, x: Tensor, gates: list | None = None) -> Tensor:
        """Logits for a [N, C, H, W] batch; appends (site, omega) to ``gates``."""
        h = relu(self.stem(nchw_to_nhwc(x)))
        for block in self.blocks:
            h = block(h, gates)
        return linear(gap_nhwc(h), self.head_w, self.head_b)

    __call__ = forward

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("stem", self.stem.weight)]
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend([("head.w", self.head_w), ("head.b", self.head_b)])
        return out

    def param_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def attention_sites(self) -> list[tuple[str, int]]:
        return [
            (b.site, b.attn.channels) for b in self.blocks if b.attn is not None
        ]


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    """Deterministic construction: same spec and seed, bitwise-same weights."""
    return Network(spec, seed)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _params_blob(network: Network) -> bytes:
    parts = [struct.pack("<I", len(network.parameters()))]
    for _, p in network.parameters():
        arr = p.data
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(network: Network, path) -> None:
    spec_bytes = network.spec.to_json().encode("utf-8")
    payload = struct.pack("<I", len(spec_bytes)) + spec_bytes + _params_blob(network)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(payload)
        fh.write(struct.pack("<Q", fnv1a64(payload)))


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a CAKC checkpoint file")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"version mismatch: file has {version}, expected {CHECKPOINT_VERSION}")
    payload = blob[8:-8]
    (stored_hash,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if fnv1a64(payload) != stored_hash:
        raise CheckpointError("hash mismatch: checkpoint payload corrupted")

    off = 0

    def take(n):
        nonlocal off
        if off + n > len(payload):
            raise CheckpointError("truncated checkpoint")
        chunk = payload[off:off + n]
        off += n
        return chunk

    (spec_len,) = struct.unpack("<I", take(4))
    spec = NetworkSpec.from_json(take(spec_len).decode("utf-8"))
    network = build_network(spec, seed=0)
    params = network.parameters()
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise CheckpointError(
            f"parameter count mismatch: file has {count}, spec implies {len(params)}"
        )
    for name, p in params:
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {shape} vs {p.data.shape}")
        n = int(np.prod(shape)) if ndim else 1
        p.data = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
    if off != len(payload):
        raise CheckpointError("trailing bytes in checkpoint payload")
    return network
