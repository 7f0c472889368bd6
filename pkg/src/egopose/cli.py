"""Command-line entry point: ``egopose {synth,train,eval,bench,fov-sim}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 config mismatch.
Every command except ``fov-sim`` writes a JSON run manifest recording the
exact argv, resolved configs, seeds, timings and outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import (
    ConfigMismatch,
    EmptyDataset,
    FormatError,
    InvalidProfile,
    MissingWeights,
    TooFewSequences,
    TooShort,
)
from .fov import PRESETS, FovConfig, random_mask, visibility_mask
from .ingest import PROFILES, extract_three_point, load_dataset, sample_shape, save_sequence, synthesize_sequence
from .network import ModelConfig, PoseNet, load_weights, save_weights
from .skeleton import NUM_BETAS, load_skeleton, t_pose_measurements
from .training import LossWeights, TrainConfig, strip_training_state, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("egopose")

TINY_MODEL = {"embed_dim": 32, "num_layers": 2, "num_heads": 4, "mlp_hidden": 128}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path: str | Path, manifest: dict) -> None:
    """Atomic JSON write (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, default=str))
    os.replace(tmp, path)


def _manifest(args, argv, started, outputs, **extra) -> dict:
    return {
        "command": args.command,
        "argv": list(argv),
        "code_version": _code_version(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_seconds": time.time() - started,
        "outputs": [str(o) for o in outputs],
        **extra,
    }


def _fov_from_args(args) -> FovConfig | None:
    if getattr(args, "fov_preset", None):
        return PRESETS[args.fov_preset]
    if getattr(args, "fov_h", None) is not None:
        h = args.fov_h
        v = args.fov_v if args.fov_v is not None else min(h, 179.9)
        return FovConfig(h, v)
    return None


def _add_fov_flags(p, preset_flag="--fov-preset"):
    p.add_argument(preset_flag, dest="fov_preset", choices=sorted(PRESETS))
    p.add_argument("--fov-h", type=float, help="horizontal FoV in degrees")
    p.add_argument("--fov-v", type=float, help="vertical FoV in degrees (default: horizontal)")


# --- synth -------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    started = time.time()
    skel = load_skeleton(args.skeleton)
    out = Path(args.out)
    rng = np.random.default_rng([args.seed, 7919])
    files = []
    for i in range(args.count):
        beta = sample_shape(rng) if args.diverse_shapes else np.zeros(NUM_BETAS)
        seq = synthesize_sequence(args.seed * 1000 + i, args.profile, args.seconds, args.fps, beta, skel,
                                  subject_id=f"s{args.seed}-{i}", sequence_id=f"{args.profile}-{args.seed}-{i}")
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{seq.sequence_id}.epsq"
        save_sequence(seq, path)
        h, _ = t_pose_measurements(skel, beta)
        print(f"{path}: {seq.n_frames} frames @ {seq.fps:g} fps, height {h:.3f} m")
        files.append(path)
    write_manifest(args.manifest or out / "manifest.json",
                   _manifest(args, argv, started, files, seeds={"seed": args.seed}))
    return EXIT_OK


# --- train -------------------------------------------------------------------

def _train_configs(args) -> tuple[ModelConfig, TrainConfig]:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    model = dict(doc.get("model", {}))
    tr = dict(doc.get("train", {}))
    if args.model_size == "tiny":
        model = {**model, **TINY_MODEL}
    for flag, key in (("tau", "tau"), ("model_seed", "seed"), ("feature_mode", "feature_mode"), ("fusion", "fusion")):
        if getattr(args, flag) is not None:
            model[key] = getattr(args, flag)
    overrides = {"iters": "max_iters", "batch_size": "batch_size", "lr": "lr", "seed": "seed",
                 "mask": "mask", "p": "mask_p", "shape_mode": "shape_mode",
                 "checkpoint_every": "checkpoint_every", "decay_every": "decay_every", "stride": "window_stride"}
    for flag, key in overrides.items():
        if getattr(args, flag) is not None:
            tr[key] = getattr(args, flag)
    fov = _fov_from_args(args)
    if fov is not None:
        tr["fov_h"], tr["fov_v"] = fov.alpha_h, fov.alpha_v
    if args.lambda_beta is not None:
        tr["loss_weights"] = {**tr.get("loss_weights", {}), "beta": args.lambda_beta}
    if "loss_weights" in tr:
        tr["loss_weights"] = LossWeights(**{**LossWeights().__dict__, **tr["loss_weights"]})
    return ModelConfig(**model), TrainConfig(**tr)


def cmd_train(args, argv) -> int:
    started = time.time()
    skel = load_skeleton(args.skeleton)
    seqs = load_dataset(args.data)
    if not seqs:
        raise EmptyDataset(f"no .epsq files in {args.data}")
    model_cfg, train_cfg = _train_configs(args)
    resume = load_weights(args.resume) if args.resume else None
    if resume is not None and resume.config != model_cfg:
        raise ConfigMismatch("checkpoint config differs from the requested model config")
    out = Path(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out.with_suffix(".ckpt.epwt")
    log_path = args.log or out.with_suffix(".log.jsonl")
    ws, history = train(model_cfg, train_cfg, seqs, skel, resume=resume, checkpoint_path=ckpt,
                        log_path=log_path, stop_at=args.stop_at)
    save_weights(strip_training_state(ws), out)
    outputs = [out, log_path] + ([ckpt] if ckpt.exists() else [])
    if args.stop_at is not None:
        save_weights(ws, ckpt)
    final = history[-1]["loss"] if history else None
    print(f"trained {ws.meta['iteration']} iterations, final loss {final}")
    write_manifest(args.manifest or out.with_suffix(".manifest.json"), _manifest(
        args, argv, started, outputs,
        seeds={"train": train_cfg.seed, "model": model_cfg.seed},
        model_config=model_cfg.to_dict(), train_config=train_cfg.to_dict(),
        fov_deg=[train_cfg.fov_h, train_cfg.fov_v] if train_cfg.mask == "fov" else None,
        data=[s.sequence_id for s in seqs]))
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def _load_net(path) -> PoseNet:
    return PoseNet.from_weight_set(load_weights(path)).eval()


def _parse_pairs(text: str) -> dict:
    pairs = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"expected name=path, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def cmd_eval(args, argv) -> int:
    from .evaluation import evaluate, fov_strategy_compare, offset_sweep, shape_strategy_compare, write_csv

    started = time.time()
    skel = load_skeleton(args.skeleton)
    seqs = load_dataset(args.data)
    if not seqs:
        raise EmptyDataset(f"no .epsq files in {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fov = _fov_from_args(args)
    outputs = []
    if args.compare_fov:
        nets = {k: _load_net(v) for k, v in _parse_pairs(args.compare_fov).items()}
        rows = fov_strategy_compare(nets, seqs, skel, shape_strategy=args.shape_strategy)
        write_csv(out / "fov_compare.csv", rows)
        outputs.append(out / "fov_compare.csv")
        for r in rows:
            print(f"{r['strategy']:>8} fov {r['fov_deg']:5.1f}  MPJPE {r['mpjpe']:7.3f}  MPJVE {r['mpjve']:8.3f}")
    elif args.compare_shape:
        nets = {k: _load_net(v) for k, v in _parse_pairs(args.compare_shape).items()}
        rows = shape_strategy_compare(nets, seqs, skel, fov=fov)
        write_csv(out / "shape_compare.csv", rows)
        outputs.append(out / "shape_compare.csv")
        for r in rows:
            print(f"{r['strategy']:>8}  MPJPE {r['mpjpe']:.3f} MVE {r['mve']:.3f} height {r['height_err']:.3f} "
                  f"arm {r['arm_err']:.3f} GP {r['gp']:.3f} FF {r['ff']:.3f}")
    else:
        if not args.weights:
            raise UsageError("--weights is required")
        net = _load_net(args.weights)
        if args.offsets:
            offsets = [float(o) for o in args.offsets.split(",")]
            rep = offset_sweep(net, seqs, skel, offsets, fov=fov, shape_strategy=args.shape_strategy)
            write_csv(out / "offsets.csv", rep.offsets)
            outputs.append(out / "offsets.csv")
            for r in rep.offsets:
                print(f"offset {r['offset_m']:6.1f} m  MPJPE {r['mpjpe']:.6f}  MPJVE {r['mpjve']:.6f}")
        else:
            rep = evaluate(net, seqs, skel, fov=fov, shape_strategy=args.shape_strategy)
            print("  ".join(f"{k} {v:.4f}" for k, v in rep.aggregate.items() if k != "frames"))
        rep.to_json(out / "report.json")
        rep.to_csv(out / "report.csv")
        outputs += [out / "report.json", out / "report.csv"]
    write_manifest(args.manifest or out / "manifest.json", _manifest(
        args, argv, started, outputs, fov_deg=None if fov is None else [fov.alpha_h, fov.alpha_v]))
    return EXIT_OK


# --- bench -------------------------------------------------------------------

def cmd_bench(args, argv) -> int:
    from .bench import run_benchmark

    started = time.time()
    torch.set_num_threads(args.threads)
    skel = load_skeleton(args.skeleton)
    net = _load_net(args.weights) if args.weights else PoseNet(ModelConfig())
    report = run_benchmark(net, skel, seconds=args.seconds, fov=_fov_from_args(args))
    text = json.dumps(report, indent=2)
    print(text)
    outputs = []
    if args.out:
        Path(args.out).write_text(text)
        outputs.append(args.out)
    if args.manifest:
        write_manifest(args.manifest, _manifest(args, argv, started, outputs))
    return EXIT_OK


# --- fov-sim -----------------------------------------------------------------

def cmd_fov_sim(args, argv) -> int:
    skel = load_skeleton(args.skeleton)
    fov = _fov_from_args(args)
    if fov is None and args.random_p is None:
        raise UsageError("give --preset, --fov-h, or --random-p")
    rows = []
    for i, seq in enumerate(load_dataset(args.data)):
        track = extract_three_point(seq, skel)
        mask = visibility_mask(fov, track) if fov is not None else random_mask(args.random_p, args.seed + i, track)
        rows.append({"sequence": seq.sequence_id, "frames": seq.n_frames,
                     "left_visible": float(mask[:, 0].mean()), "right_visible": float(mask[:, 1].mean())})
    doc = {"fov_deg": None if fov is None else [fov.alpha_h, fov.alpha_v], "random_p": args.random_p,
           "sequences": rows}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egopose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic .epsq sequences")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--profile", choices=PROFILES, default="mixed")
    s.add_argument("--seconds", type=float, default=30.0)
    s.add_argument("--fps", type=float, default=60.0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--diverse-shapes", action="store_true", help="sample a body shape per sequence")
    s.add_argument("--out", default="data")

    t = sub.add_parser("train", help="train a pose network")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output weight file (.epwt)")
    t.add_argument("--config", help="JSON with 'model' and 'train' sections; flags override")
    t.add_argument("--model-size", choices=("default", "tiny"), default="default")
    t.add_argument("--tau", type=int)
    t.add_argument("--fusion", choices=("slowfast", "plain"))
    t.add_argument("--feature-mode", choices=("decomposed", "global"))
    t.add_argument("--model-seed", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--decay-every", type=int)
    t.add_argument("--stride", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--mask", choices=("none", "random", "fov"))
    t.add_argument("--p", type=float, help="random masking probability")
    _add_fov_flags(t)
    t.add_argument("--shape-mode", choices=("estimate", "mean", "scale"))
    t.add_argument("--lambda-beta", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--checkpoint")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-at", type=int, help="stop after this iteration, leaving a checkpoint")
    t.add_argument("--log")

    e = sub.add_parser("eval", help="evaluate trained weights")
    e.add_argument("--weights")
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="eval_out")
    e.add_argument("--offsets", help="comma-separated offsets in meters, e.g. 0,2,5,10,50")
    _add_fov_flags(e)
    e.add_argument("--shape-strategy", choices=("mean", "calib", "estimate"), default="estimate")
    e.add_argument("--compare-fov", help="full=W1,random=W2,fov=W3")
    e.add_argument("--compare-shape", help="mean=W1,calib=W2,estimate=W3")

    b = sub.add_parser("bench", help="real-time single-stream benchmark")
    b.add_argument("--weights", help="weights to benchmark (default: untrained default config)")
    b.add_argument("--seconds", type=float, default=10.0)
    b.add_argument("--threads", type=int, default=1)
    _add_fov_flags(b)
    b.add_argument("--out")

    f = sub.add_parser("fov-sim", help="report simulated hand visibility")
    f.add_argument("--data", required=True)
    _add_fov_flags(f, preset_flag="--preset")
    f.add_argument("--random-p", type=float)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")

    for sp in (s, t, e, b, f):
        sp.add_argument("--skeleton", help="skeleton JSON (default: shipped model)")
        if sp is not f:
            sp.add_argument("--manifest", help="manifest path")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "fov-sim": cmd_fov_sim}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (UsageError, InvalidProfile, TooShort, ValueError) as exc:
        print(f"egopose {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigMismatch as exc:
        print(f"egopose {args.command}: config mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError, FormatError, EmptyDataset, TooFewSequences, MissingWeights) as exc:
        print(f"egopose {args.command}: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
