"""Central-difference verification of the reverse-mode gradients.

A check target is a scalar loss built from the tensor graph over named
parameter arrays. Analytic gradients come from one backward pass; numeric
gradients come from central differences of the forward value, one sampled
coordinate at a time. The reported number per parameter group is the worst
relative error over the sampled coordinates.

Losses are random linear projections of the op outputs so every coordinate
of every gradient is exercised with O(1) magnitudes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .attention import (
    AttentionConfig,
    block_diag_matvec,
    channel_mul,
    eca_forward,
    eca_ns_forward,
    make_attention,
    per_channel_conv1d,
    se_forward,
    se_gc_forward,
    se_var1_forward,
    se_var2_forward,
    se_var3_forward,
)
from .tensor import (
    Tensor,
    add,
    conv1d_channels,
    conv2d,
    gap,
    linear,
    mul,
    relu,
    scale_channels,
    sigmoid,
    softmax_cross_entropy,
    tensor_mean,
    tensor_sum,
)

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-6
# Below this scale "relative" error degenerates; treat tiny gradients on an
# absolute scale instead of dividing by finite-difference noise.
REL_FLOOR = 1e-4

LossFn = Callable[[dict[str, Tensor]], Tensor]


def check_gradients(
    loss_fn: LossFn,
    params: dict[str, np.ndarray],
    *,
    n_coords: int = 120,
    eps: float = DEFAULT_EPS,
    rng: np.random.Generator | None = None,
    grad_fault: float = 0.0,
) -> dict[str, float]:
    """Worst relative error per parameter group, analytic vs central difference.

    Groups smaller than ``n_coords`` are checked exhaustively. ``grad_fault``
    adds a constant to every analytic gradient; it exists as a negative
    control so the check provably fails when the adjoints are wrong.
    """
    rng = rng or np.random.default_rng(0)

    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = loss_fn(tensors)
    loss.backward()
    analytic = {
        k: (np.zeros_like(v) if tensors[k].grad is None else tensors[k].grad) + grad_fault
        for k, v in params.items()
    }

    def value_at(perturbed: dict[str, np.ndarray]) -> float:
        plain = {k: Tensor(v) for k, v in perturbed.items()}
        return float(loss_fn(plain).data)

    worst: dict[str, float] = {}
    for name, arr in params.items():
        size = arr.size
        if size <= n_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=n_coords, replace=False)
        err = 0.0
        for flat in coords:
            plus = {k: v.copy() if k == name else v for k, v in params.items()}
            minus = {k: v.copy() if k == name else v for k, v in params.items()}
            plus[name].flat[flat] += eps
            minus[name].flat[flat] -= eps
            numeric = (value_at(plus) - value_at(minus)) / (2.0 * eps)
            a = analytic[name].flat[flat]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            err = max(err, rel)
        worst[name] = err
    return worst


def _projection(rng, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _project(t: Tensor, r: np.ndarray) -> Tensor:
    return tensor_sum(mul(t, Tensor(r)))


# ---------------------------------------------------------------------------
# tensor primitives
# ---------------------------------------------------------------------------

def primitive_checks(
    seed: int = 0, *, n_coords: int = 120, eps: float = DEFAULT_EPS
) -> dict[str, float]:
    """One finite-difference check per tensor primitive; name -> worst error."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}

    def run(name, loss_fn, params):
        results[name] = max(
            check_gradients(loss_fn, params, n_coords=n_coords, eps=eps, rng=rng).values()
        )

    def rand(*shape):
        return rng.uniform(-2.0, 2.0, size=shape)

    x4 = rand(2, 3, 5, 4)
    r_nc = _projection(rng, (2, 3))
    run("gap", lambda p: _project(gap(p["x"]), r_nc), {"x": x4})

    r34 = _projection(rng, (3, 4))
    run("sigmoid", lambda p: _project(sigmoid(p["x"]), r34), {"x": rand(3, 4)})

    # keep relu inputs clear of the kink at 0: |x| >= 0.1 so the eps-ball
    # never crosses it
    relu_in = (rng.uniform(0.1, 2.0, size=(3, 4))) * rng.choice([-1.0, 1.0], size=(3, 4))
    run("relu", lambda p: _project(relu(p["x"]), r34), {"x": relu_in})

    r29 = _projection(rng, (2, 9))
    run(
        "conv1d_channels",
        lambda p: _project(conv1d_channels(p["y"], p["w"]), r29),
        {"y": rand(2, 9), "w": rand(5)},
    )

    r_sc = _projection(rng, (2, 3, 4, 4))
    run(
        "scale_channels",
        lambda p: _project(scale_channels(p["x"], p["omega"]), r_sc),
        {"x": rand(2, 3, 4, 4), "omega": rng.uniform(0.1, 0.9, size=(2, 3))},
    )

    r35 = _projection(rng, (3, 4))
    run(
        "linear",
        lambda p: _project(linear(p["y"], p["w"], p["b"]), r35),
        {"y": rand(3, 5), "w": rand(4, 5), "b": rand(4)},
    )

    r_c1 = _projection(rng, (2, 4, 6, 6))
    run(
        "conv2d",
        lambda p: _project(conv2d(p["x"], p["f"]), r_c1),
        {"x": rand(2, 3, 6, 6), "f": rand(4, 3, 3, 3)},
    )
    r_c2 = _projection(rng, (2, 4, 3, 3))
    run(
        "conv2d_stride2",
        lambda p: _project(conv2d(p["x"], p["f"], stride=2), r_c2),
        {"x": rand(2, 3, 6, 6), "f": rand(4, 3, 3, 3)},
    )

    r_ab = _projection(rng, (4, 5))
    run("add", lambda p: _project(add(p["a"], p["b"]), r_ab), {"a": rand(4, 5), "b": rand(4, 5)})
    run("mul", lambda p: _project(mul(p["a"], p["b"]), r_ab), {"a": rand(4, 5), "b": rand(4, 5)})
    run("sum", lambda p: tensor_sum(p["x"]), {"x": rand(4, 5)})
    run("mean", lambda p: tensor_mean(p["x"]), {"x": rand(4, 5)})

    labels = rng.integers(0, 6, size=4)
    run(
        "softmax_cross_entropy",
        lambda p: softmax_cross_entropy(p["logits"], labels),
        {"logits": rand(4, 6)},
    )

    r_cm = _projection(rng, (3, 6))
    run(
        "channel_mul",
        lambda p: _project(channel_mul(p["y"], p["w"]), r_cm),
        {"y": rand(3, 6), "w": rand(6)},
    )
    run(
        "block_diag_matvec",
        lambda p: _project(block_diag_matvec(p["y"], [p["b0"], p["b1"]]), r_cm),
        {"y": rand(3, 6), "b0": rand(3, 3), "b1": rand(3, 3)},
    )
    run(
        "per_channel_conv1d",
        lambda p: _project(per_channel_conv1d(p["y"], p["kernels"]), r_cm),
        {"y": rand(3, 6), "kernels": rand(6, 3)},
    )
    return results


# ---------------------------------------------------------------------------
# attention variants
# ---------------------------------------------------------------------------

def attention_checks(
    kind: str,
    channels: int = 16,
    *,
    r: int = 4,
    groups: int = 4,
    k: int | None = 3,
    seed: int = 0,
    n_coords: int = 120,
    eps: float = DEFAULT_EPS,
    grad_fault: float = 0.0,
) -> dict[str, float]:
    """Check d(loss)/d(parameters) and d(loss)/d(input) for one variant.

    The loss projects both the recalibrated map and the gate so gradients
    flow through every output of the forward pass.
    """
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(kind, channels, r=r, groups=groups, k=k)
    module = make_attention(cfg, rng)

    params = {name: p.data.copy() for name, p in module.parameters()}
    params["input"] = rng.uniform(-2.0, 2.0, size=(2, channels, 4, 4))
    r_out = _projection(rng, (2, channels, 4, 4))
    r_gate = _projection(rng, (2, channels))

    def loss_fn(tensors: dict[str, Tensor]) -> Tensor:
        x = tensors["input"]
        if kind == "se":
            omega, out = se_forward(x, tensors["w1"], tensors["w2"])
        elif kind == "se-var1":
            omega, out = se_var1_forward(x)
        elif kind == "se-var2":
            omega, out = se_var2_forward(x, tensors["w"])
        elif kind == "se-var3":
            omega, out = se_var3_forward(x, tensors["w"])
        elif kind == "se-gc":
            blocks = [tensors[f"block{g}"] for g in range(groups)]
            omega, out = se_gc_forward(x, blocks)
        elif kind == "eca-ns":
            omega, out = eca_ns_forward(x, tensors["kernels"])
        else:
            omega, out = eca_forward(x, tensors["kernel"])
        return add(_project(out, r_out), _project(omega, r_gate))

    return check_gradients(
        loss_fn, params, n_coords=n_coords, eps=eps, rng=rng, grad_fault=grad_fault
    )
