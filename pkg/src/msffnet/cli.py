"""Command-line entry point: train, infer, eval, synth, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numeric failure (non-finite loss).
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("msffnet")


class UsageError(Exception):
    pass


def _thread_limit():
    value = os.environ.get("MSFF_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"MSFF_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("MSFF_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    from .config import load_config
    from .data import list_scenes, load_scene
    from .train import train

    config = load_config(args.config, args.profile, lam=args.lam, seed=args.seed, epochs=args.epochs)
    scenes = list_scenes(args.data) if Path(args.data).is_dir() else []
    if not scenes:
        raise UsageError(f"no scenes found under {args.data}")
    samples = [load_scene(s) for s in scenes]
    if any(s.gt is None for s in samples):
        raise UsageError("every training scene needs gt.pfm")
    trainer = train(config, samples, args.out, resume=args.resume,
                    on_step=lambda r: log.debug("epoch %d step %d total %.6f", r.epoch, r.step, r.total))
    last = trainer.history[-1] if trainer.history else None
    print(f"trained {trainer.step} steps over {trainer.epoch} epochs"
          + (f"; last loss {last.total:.6f}" if last else ""))
    print(f"checkpoint: {Path(args.out) / 'final.ckpt'}")
    return EXIT_OK


def _flow_rgb(flow: np.ndarray) -> np.ndarray:
    h, w = flow.shape[1:]
    return np.concatenate([flow.transpose(1, 2, 0), np.zeros((h, w, 1), flow.dtype)], axis=2)


def cmd_infer(args) -> int:
    from .data import io, load_scene
    from .metrics import tonemap_mu_np
    from .checkpoint import load_checkpoint
    from .train import model_from_checkpoint, predict

    stack = load_scene(args.scene)
    ckpt = load_checkpoint(args.ckpt)
    hdr, flows = predict(model_from_checkpoint(ckpt), stack, ckpt.config.gamma)
    io.write_pfm(args.out, hdr)
    print(f"wrote {args.out} ({hdr.shape[0]}x{hdr.shape[1]})")
    if args.tonemapped:
        io.write_ldr_pixels(args.tonemapped, tonemap_mu_np(hdr), bits=8)
    if args.dump_flow:
        out = Path(args.dump_flow)
        out.mkdir(parents=True, exist_ok=True)
        for s, f in enumerate(flows):
            io.write_pfm(out / f"flow_s{s}.pfm", _flow_rgb(f))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import list_scenes, load_scene
    from .checkpoint import load_checkpoint
    from .train import evaluate, model_from_checkpoint

    scenes = [(p.name, load_scene(p)) for p in list_scenes(args.data)] if Path(args.data).is_dir() else []
    if not any(stack.gt is not None for _, stack in scenes):
        raise UsageError(f"no scene with gt.pfm under {args.data}")
    ckpt = load_checkpoint(args.ckpt)
    report = evaluate(model_from_checkpoint(ckpt), scenes, ckpt.config.gamma, ckpt.config.mu)
    report.write_csv(args.csv)
    print(report.summary())
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import io, save_scene, synth_scene

    if args.count < 1 or args.size < 16 or args.size % 4:
        raise UsageError("--count must be >= 1 and --size a multiple of 4, at least 16")
    if args.max_shift < 0 or args.max_shift > args.size / 4:
        raise UsageError(f"--max-shift must lie in [0, {args.size / 4}]")
    if not 0 <= args.saturation < 1:
        raise UsageError("--saturation must lie in [0, 1)")
    rng = np.random.default_rng(args.seed)
    root = Path(args.out)
    for i in range(args.count):
        shift = rng.uniform(-args.max_shift, args.max_shift, 2) if args.max_shift else (0.0, 0.0)
        sample = synth_scene(int(rng.integers(2 ** 31)), translation=shift, size=args.size,
                             saturation_fraction=args.saturation)
        scene = root / f"scene_{i:03d}"
        save_scene(scene, sample.stack)
        io.write_pfm(scene / "gt_flow.pfm", _flow_rgb(sample.gt_flow))
        io.write_ldr_pixels(scene / "mask.png", sample.occlusion_mask.astype(np.float32), bits=8)
    print(f"wrote {args.count} scenes under {root}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import SUITE, THRESHOLD, run_checks

    name = args.op or args.op_positional or "all"
    if name != "all" and name not in SUITE:
        raise UsageError(f"unknown op {name!r}; choose from all, {', '.join(SUITE)}")
    results = run_checks(None if name == "all" else [name], eps=args.eps)
    for r in results:
        print(f"{r.name:<20} max rel err {r.error:.3e}  {'PASS' if r.passed else 'FAIL'}  ({r.seconds:.1f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED (threshold {THRESHOLD:g}): {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} checks below {THRESHOLD:g}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msffnet", description="Two-exposure HDR deghosting network.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train on a directory of scenes")
    p.add_argument("--config", type=Path, help="TOML file with TrainConfig fields")
    p.add_argument("--data", type=Path, required=True, help="directory of scene folders with gt.pfm")
    p.add_argument("--out", type=Path, required=True, help="output directory for checkpoints and losses.csv")
    p.add_argument("--profile", choices=("desk", "paper"), help="base settings (default: paper)")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the warped-feature loss (default 2)")
    p.add_argument("--seed", type=int, help="seed for initialization, shuffling and augmentation")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="merge one scene into an HDR image")
    p.add_argument("--ckpt", type=Path, required=True, help="trained checkpoint")
    p.add_argument("--scene", type=Path, required=True, help="scene folder (input_1, input_2, exposures.txt)")
    p.add_argument("--out", type=Path, required=True, help="output PFM path")
    p.add_argument("--dump-flow", type=Path, help="directory for per-scale flow PFMs (dx, dy, 0)")
    p.add_argument("--tonemapped", type=Path, help="8-bit mu-law preview PNG path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint over scenes with gt.pfm")
    p.add_argument("--ckpt", type=Path, required=True, help="trained checkpoint")
    p.add_argument("--data", type=Path, required=True, help="directory of scene folders")
    p.add_argument("--csv", type=Path, required=True, help="per-scene metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render synthetic scenes with known motion")
    p.add_argument("--out", type=Path, required=True, help="output root directory")
    p.add_argument("--count", type=int, default=4, help="number of scenes (default 4)")
    p.add_argument("--size", type=int, default=64, help="square image size (default 64)")
    p.add_argument("--max-shift", type=float, default=4.0, help="max |dx|, |dy| in pixels (default 4)")
    p.add_argument("--saturation", type=float, default=0.0,
                   help="fraction of saturated reference pixels (default 0)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks in float64")
    p.add_argument("op_positional", nargs="?", metavar="OP", help="check name or 'all' (same as --op)")
    p.add_argument("--op", help="check name or 'all' (default all)")
    p.add_argument("--eps", type=float, default=1e-6, help="central-difference step (default 1e-6)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .data import ImageIOError
    from .train import NonFiniteLossError

    try:
        with _thread_limit():
            return args.func(args)
    except NonFiniteLossError as err:
        where = f" (batch dumped to {err.dump_path})" if err.dump_path else ""
        print(f"error: {err}{where}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, CheckpointError, ImageIOError, FileNotFoundError, KeyError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
