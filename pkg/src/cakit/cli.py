"""Command-line interface.

Subcommands: count, kpolicy, gradcheck, train, export-weights, bench.

Exit codes are a stable contract: 0 success, 1 check failure, 2 input
error, 3 numerical abort.

Every subcommand writes a ``manifest.json`` next to its outputs with all
defaults materialized; re-running the recorded argv reproduces the outputs
byte for byte (bench timings excepted).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention import ATTENTION_KINDS, AttentionConfig, make_attention
from .complexity import FLOPS_PER_MAC, count_network_params, load_layout
from .data import load_dataset, split_dataset, synth_dataset
from .errors import CheckpointError, ConfigError, DataFormatError, NumericalAbort
from .gradcheck import DEFAULT_TOL, attention_checks, primitive_checks
from .kernel_policy import KernelPolicy, adaptive_kernel_size
from .net import NetworkSpec, build_network, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad
from .train import TrainConfig, channel_weights_csv, evaluate, export_channel_weights, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_ABORT = 3


def _add_attention_flags(p, default_kind=None):
    p.add_argument("--attn", choices=("none",) + ATTENTION_KINDS, default=default_kind)
    p.add_argument("--r", type=int, default=16, help="reduction ratio (se)")
    p.add_argument("--g", type=int, default=8, help="group count (se-gc)")
    kgrp = p.add_mutually_exclusive_group()
    kgrp.add_argument("--k", type=int, default=None, help="fixed odd kernel size (eca, eca-ns)")
    kgrp.add_argument("--adaptive", action="store_true", help="choose k from the channel count")
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--b", type=int, default=1)


def _attention_from_args(args) -> AttentionConfig | None:
    if args.attn in (None, "none"):
        return None
    return AttentionConfig(
        kind=args.attn,
        channels=0,
        r=args.r,
        groups=args.g,
        k=None if args.adaptive else args.k,
        gamma=args.gamma,
        b=args.b,
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cakit",
        description="Channel-attention toolkit: complexity accounting, kernel policy, "
        "gradient checks, desk-scale training, gate export, micro-benchmarks.",
    )
    p.add_argument("--version", action="version", version=f"cakit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("count", help="parameter/FLOP report for a network layout")
    c.add_argument("--layout", required=True, help="file with one 'channels=<C>' line per block")
    _add_attention_flags(c)
    c.add_argument("--convention", choices=sorted(FLOPS_PER_MAC), default="mac2")
    c.add_argument("--out", default=None, help="directory for report.csv and manifest.json")
    c.set_defaults(func=cmd_count)

    kp = sub.add_parser("kpolicy", help="adaptive kernel size for a channel count")
    kp.add_argument("--channels", type=int, required=True)
    kp.add_argument("--gamma", type=int, default=2)
    kp.add_argument("--b", type=int, default=1)
    kp.add_argument("--tie-break", choices=("down", "up"), default="down")
    kp.set_defaults(func=cmd_kpolicy)

    g = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    g.add_argument("--attn", choices=("all",) + ATTENTION_KINDS, default="all")
    g.add_argument("--channels", type=int, default=16)
    g.add_argument("--r", type=int, default=4)
    g.add_argument("--g", type=int, default=4)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=DEFAULT_TOL)
    g.add_argument(
        "--corrupt-adjoint",
        action="store_true",
        help="negative control: perturb the analytic gradients so the check must fail",
    )
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train the micro CNN and write metrics + checkpoint")
    t.add_argument("--spec", default=None, help="network spec JSON file (default: built-in micro net)")
    _add_attention_flags(t)
    data = t.add_mutually_exclusive_group(required=True)
    data.add_argument("--synth", action="store_true", help="use the built-in synthetic dataset")
    data.add_argument("--data", default=None, help="training dataset file (.cakd)")
    t.add_argument("--val-data", default=None, help="validation dataset file (.cakd)")
    t.add_argument("--classes", type=int, default=10)
    t.add_argument("--train-per-class", type=int, default=50)
    t.add_argument("--val-per-class", type=int, default=10)
    t.add_argument("--image-size", type=int, default=32)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--lr-milestones", default="15,25", help="comma-separated decay epochs")
    t.add_argument("--lr-decay-factor", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=".")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export-weights", help="per-class mean attention gates to CSV")
    e.add_argument("--checkpoint", required=True)
    data = e.add_mutually_exclusive_group(required=True)
    data.add_argument("--synth", action="store_true")
    data.add_argument("--data", default=None, help="dataset file (.cakd)")
    e.add_argument("--split", choices=("train", "val", "test"), default="val")
    e.add_argument("--classes", type=int, default=10)
    e.add_argument("--per-class", type=int, default=10)
    e.add_argument("--image-size", type=int, default=32)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_export_weights)

    b = sub.add_parser("bench", help="wall-clock latency of one attention forward pass")
    b.add_argument("--attn", choices=ATTENTION_KINDS, required=True)
    b.add_argument("--channels", type=int, default=256)
    b.add_argument("--spatial", type=int, default=14)
    b.add_argument("--iters", type=int, default=50)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--r", type=int, default=16)
    b.add_argument("--g", type=int, default=8)
    b.add_argument("--k", type=int, default=None)
    b.add_argument("--adaptive", action="store_true")
    b.add_argument("--gamma", type=int, default=2)
    b.add_argument("--b", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    return p


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

_NON_CONFIG_KEYS = ("func", "command")


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_KEYS}
    return cfg


def _resolved_argv(command: str, config: dict) -> list[str]:
    argv = [command]
    for key in sorted(config):
        value = config[key]
        flag = "--" + key.replace("_", "-")
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    return argv


def write_manifest(outdir: Path, command: str, config: dict, artifacts: dict) -> Path:
    manifest = {
        "tool": "cakit",
        "version": __version__,
        "subcommand": command,
        "seed": config.get("seed"),
        "config": config,
        "argv": _resolved_argv(command, config),
        "artifacts": artifacts,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _outdir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_count(args) -> int:
    channels = load_layout(args.layout)
    report = count_network_params(
        channels,
        args.attn or "none",
        r=args.r,
        groups=args.g,
        k=None if args.adaptive else args.k,
        gamma=args.gamma,
        b=args.b,
        convention=args.convention,
    )
    print(report.summary())
    out = _outdir(args)
    if out is not None:
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        write_manifest(out, "count", _resolved_config(args), {"report": "report.csv"})
    return EXIT_OK


def cmd_kpolicy(args) -> int:
    policy = KernelPolicy(gamma=args.gamma, b=args.b, tie_break=args.tie_break)
    print(adaptive_kernel_size(args.channels, policy))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    fault = 1e-3 if args.corrupt_adjoint else 0.0
    kinds = ATTENTION_KINDS if args.attn == "all" else (args.attn,)
    rows: list[tuple[str, float]] = []
    if args.attn == "all":
        for name, err in primitive_checks(args.seed).items():
            rows.append((f"primitive/{name}", err))
    for kind in kinds:
        errors = attention_checks(
            kind,
            args.channels,
            r=args.r,
            groups=args.g,
            k=args.k,
            seed=args.seed,
            grad_fault=fault,
        )
        rows.extend((f"{kind}/{group}", err) for group, err in errors.items())

    width = max(len(name) for name, _ in rows)
    print(f"{'group'.ljust(width)}  max_rel_err  status")
    ok = True
    for name, err in rows:
        passed = np.isfinite(err) and err < args.tol
        ok &= passed
        print(f"{name.ljust(width)}  {err:<11.3e}  {'ok' if passed else 'FAIL'}")
    print(f"RESULT: {'pass' if ok else 'FAIL'} (tolerance {args.tol:g})")

    out = _outdir(args)
    if out is not None:
        lines = ["group,max_rel_err,status"]
        lines += [f"{n},{e:.6e},{'ok' if e < args.tol else 'fail'}" for n, e in rows]
        (out / "gradcheck.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_manifest(out, "gradcheck", _resolved_config(args), {"table": "gradcheck.csv"})
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _load_spec(args) -> NetworkSpec:
    if args.spec is not None:
        spec = NetworkSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = NetworkSpec(num_classes=args.classes)
    if args.attn is not None:
        spec = dataclasses.replace(spec, attention=_attention_from_args(args))
    return spec


def _train_datasets(args):
    if args.synth:
        train_set = synth_dataset(
            args.classes, args.train_per_class, args.image_size, args.seed, "train"
        )
        val_set = synth_dataset(
            args.classes, args.val_per_class, args.image_size, args.seed, "val"
        )
        return train_set, val_set
    train_set = load_dataset(args.data, split="train")
    if args.val_data is not None:
        return train_set, load_dataset(args.val_data, split="val")
    return split_dataset(train_set)


def cmd_train(args) -> int:
    spec = _load_spec(args)
    train_set, val_set = _train_datasets(args)
    if spec.num_classes != train_set.num_classes:
        spec = dataclasses.replace(spec, num_classes=train_set.num_classes)
    spec.validate()

    milestones = tuple(int(m) for m in str(args.lr_milestones).split(",") if m.strip())
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_decay_factor=args.lr_decay_factor,
        lr_milestones=milestones,
        seed=args.seed,
    )
    network = build_network(spec, seed=args.seed)
    report = train(network, train_set, val_set, cfg)

    out = _outdir(args)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    save_checkpoint(network, out / "model.cakc")
    write_manifest(
        out,
        "train",
        _resolved_config(args),
        {"metrics": "metrics.csv", "checkpoint": "model.cakc"},
    )
    final = report.final
    print(
        f"final epoch {final.epoch}: train_loss {final.train_loss:.4f} "
        f"train_acc {final.train_acc:.4f} val_loss {final.val_loss:.4f} "
        f"val_acc {final.val_acc:.4f}"
    )
    print(f"wrote {out / 'metrics.csv'} and {out / 'model.cakc'}")
    return EXIT_OK


def cmd_export_weights(args) -> int:
    network = load_checkpoint(args.checkpoint)
    if args.synth:
        dataset = synth_dataset(
            args.classes, args.per_class, args.image_size, args.seed, args.split
        )
    else:
        dataset = load_dataset(args.data, split=args.split)
    rows = export_channel_weights(network, dataset)
    out = _outdir(args)
    (out / "weights.csv").write_text(channel_weights_csv(rows), encoding="utf-8")
    write_manifest(out, "export-weights", _resolved_config(args), {"weights": "weights.csv"})
    print(f"wrote {len(rows)} rows to {out / 'weights.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise ConfigError("iters must be >= 1")
    rng = np.random.default_rng(args.seed)
    cfg = AttentionConfig(
        kind=args.attn,
        channels=args.channels,
        r=args.r,
        groups=args.g,
        k=None if args.adaptive else args.k,
        gamma=args.gamma,
        b=args.b,
    )
    module = make_attention(cfg, rng)
    x = Tensor(rng.standard_normal((1, args.channels, args.spatial, args.spatial)))
    times_ms = np.empty(args.iters)
    with no_grad():
        for _ in range(args.warmup):
            module(x)
        for i in range(args.iters):
            t0 = time.perf_counter()
            module(x)
            times_ms[i] = (time.perf_counter() - t0) * 1e3

    median = float(np.median(times_ms))
    p95 = float(np.percentile(times_ms, 95))
    var = float(times_ms.var(ddof=1)) if args.iters > 1 else 0.0
    header = "variant,channels,spatial,iters,median_ms,p95_ms,var_ms2"
    line = (
        f"{args.attn},{args.channels},{args.spatial},{args.iters},"
        f"{median:.6g},{p95:.6g},{var:.6g}"
    )
    print(header)
    print(line)
    out = _outdir(args)
    if out is not None:
        (out / "bench.csv").write_text(header + "\n" + line + "\n", encoding="utf-8")
        write_manifest(out, "bench", _resolved_config(args), {"bench": "bench.csv"})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad input and 0 on --help; keep its codes
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ABORT
    except (ConfigError, DataFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
