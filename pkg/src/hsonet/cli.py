"""Command-line entry point: ``hsonet {synth,train,eval,predict,metrics}``.

Exit codes: 0 success, 2 usage/config/input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from hsonet import __version__
from hsonet.config import ConfigError, SynthConfig, TrainConfig, dump_config, load_config, to_dict
from hsonet.metrics import colorize, compute_metrics, confusion, merge, write_report_csv, write_report_json

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("hsonet")


class UsageError(Exception):
    pass


def _build_id() -> str:
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if sha.returncode == 0 and sha.stdout.strip():
            return f"{__version__}+g{sha.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_run_manifest(out: Path, command: str, config: dict, seed: int | None, extra: dict | None = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": config, "seed": seed, "build": _build_id(),
           "started": _now(), "argv": sys.argv[1:]}
    if extra:
        doc.update(extra)
    path = out / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_configs(args) -> tuple[TrainConfig, SynthConfig]:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        return load_config(path)
    return TrainConfig(), SynthConfig()


def _override(obj, **values):
    """Replace fields whose CLI value was given (not None)."""
    given = {k: v for k, v in values.items() if v is not None}
    return dataclasses.replace(obj, **given) if given else obj


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required for this command")
    return Path(args.out)


# --- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    from hsonet.experiment import data_seeds
    from hsonet.synthdata import make_spec, render, write_manifest, write_pair

    _, synth = _load_configs(args)
    synth = _override(synth, size=args.size, hard_case_rate=args.hard_case_rate,
                      shadow_prob=args.shadow_prob, seasonal_prob=args.seasonal_prob)
    problems = synth.problems()
    if args.n is None or args.n < 0:
        problems.append(f"--n must be a nonnegative integer, got {args.n}")
    if problems:
        raise ConfigError(problems)
    out = _require_out(args)
    seed = args.seed if args.seed is not None else 0
    seeds = data_seeds(seed, args.n, held_out=args.held_out)
    samples = []
    manifest = {"generator": "hsonet.synthdata", "build": _build_id(), "created": _now(),
                "seed": seed, "held_out": args.held_out, "synth": to_dict(synth), "samples": samples}
    write_manifest(out, manifest)
    for i, s in enumerate(seeds):
        spec = make_spec(s, synth)
        name = f"{i:05d}"
        write_pair(out, name, render(spec))
        samples.append({"name": name, "seed": s, "spec": spec.to_dict()})
    write_manifest(out, manifest)
    print(f"wrote {args.n} pairs to {out}")
    return EXIT_OK


# --- train ------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    if args.resume and not args.config and Path(args.resume).is_file():
        from hsonet.checkpoint import load_checkpoint
        from hsonet.trainer import config_from_checkpoint

        train_cfg = config_from_checkpoint(load_checkpoint(args.resume))
    else:
        train_cfg, _ = _load_configs(args)
    loss = _override(train_cfg.loss, kind=args.loss, gamma=args.gamma, schedule=args.schedule,
                     step=args.loss_step, decay=args.decay, literal_hardness=args.literal_hardness)
    model = _override(train_cfg.model, pyramid_dim=args.pyramid_dim, decoder_dim=args.decoder_dim,
                      widths=tuple(args.widths) if args.widths else None)
    cfg = _override(train_cfg, steps=args.steps, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                    weight_decay=args.weight_decay, lr_step=args.lr_step, seed=args.seed,
                    eval_interval=args.eval_interval, crop=args.crop,
                    augment=False if args.no_augment else None,
                    checkpoint_dir=args.out)
    return dataclasses.replace(cfg, loss=loss, model=model)


def cmd_train(args) -> int:
    from hsonet.checkpoint import load_checkpoint
    from hsonet.synthdata import load_folder
    from hsonet.trainer import PairArrays, resolve, train

    problems = []
    try:
        cfg = _train_config(args)
        problems += cfg.problems()
    except ConfigError as exc:
        problems += exc.problems
        cfg = None
    data = Path(args.data) if args.data else None
    if data is None:
        problems.append("--data is required")
    elif not data.is_dir():
        problems.append(f"dataset path does not exist: {data}")
    if args.val and not Path(args.val).is_dir():
        problems.append(f"validation dataset path does not exist: {args.val}")
    if args.resume and not Path(args.resume).is_file():
        problems.append(f"checkpoint to resume does not exist: {args.resume}")
    if not args.out:
        problems.append("--out is required")
    if args.stop_at is not None and args.stop_at < 0:
        problems.append(f"--stop-at must be >= 0, got {args.stop_at}")
    if problems:
        raise ConfigError(problems)

    ds = PairArrays.from_pairs(load_folder(data))
    if len(ds) == 0:
        raise UsageError(f"dataset {data} is empty")
    val = PairArrays.from_pairs(load_folder(args.val)) if args.val else None
    out = Path(args.out)
    resolved = resolve(cfg, len(ds))
    write_run_manifest(out, "train", dump_config(resolved), resolved.seed,
                       {"data": str(data), "val": args.val, "resume": args.resume})
    resume = load_checkpoint(args.resume) if args.resume else None
    res = train(cfg, ds, val, out_dir=out, resume=resume, stop_at=args.stop_at)
    first = res.losses[0] if res.losses else None
    print(json.dumps({"steps": res.checkpoint.t, "first_loss": first,
                      "final_loss": res.losses[-1] if res.losses else None,
                      "checkpoint": str(out / "checkpoint.hson")}))
    return EXIT_OK


# --- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    from hsonet.checkpoint import load_checkpoint
    from hsonet.synthdata import load_folder
    from hsonet.trainer import PairArrays, evaluate, model_from_checkpoint

    problems = []
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        problems.append(f"checkpoint not found: {args.checkpoint}")
    if not args.data or not Path(args.data).is_dir():
        problems.append(f"dataset path does not exist: {args.data}")
    if not 0.0 < args.threshold < 1.0:
        problems.append(f"--threshold must lie in (0, 1), got {args.threshold}")
    if problems:
        raise ConfigError(problems)
    out = _require_out(args)
    ckpt = load_checkpoint(args.checkpoint)
    ds = PairArrays.from_pairs(load_folder(args.data))
    if len(ds) == 0:
        raise UsageError(f"dataset {args.data} is empty")
    model = model_from_checkpoint(ckpt)
    write_run_manifest(out, "eval", {"checkpoint": str(args.checkpoint), "threshold": args.threshold},
                       args.seed, {"data": str(args.data)})
    res = evaluate(model, ds, threshold=args.threshold)
    write_report_csv(out / "metrics.csv", [(ckpt.t, res.report)])
    write_report_json(out / "report.json", res.report, res.counts, res.by_tag,
                      {"hard": {"counts": dataclasses.asdict(res.hard[0]),
                                "metrics": None if res.hard[1] is None else res.hard[1].as_dict()},
                       "step": ckpt.t, "threshold": args.threshold})
    if args.colorize:
        from hsonet.trainer import predict_probs

        probs = predict_probs(model, ds)
        cdir = out / "colorized"
        cdir.mkdir(parents=True, exist_ok=True)
        for i, name in enumerate(ds.names):
            Image.fromarray(colorize(probs[i] >= args.threshold, ds.mask[i] > 0)).save(cdir / f"{name}.png")
    print(json.dumps(res.report.as_dict()))
    return EXIT_OK


# --- predict ----------------------------------------------------------------

def _read_rgb(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"image not found: {p}")
    with Image.open(p) as im:
        return np.asarray(im.convert("RGB"))


def _read_mask(path: str | Path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"mask not found: {p}")
    with Image.open(p) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def cmd_predict(args) -> int:
    from hsonet.checkpoint import load_checkpoint
    from hsonet.encoder import InputShapeError
    from hsonet.trainer import model_from_checkpoint, predict

    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not 0.0 < args.threshold < 1.0:
        raise UsageError(f"--threshold must lie in (0, 1), got {args.threshold}")
    out = _require_out(args)
    t1, t2 = _read_rgb(args.t1), _read_rgb(args.t2)
    gt = _read_mask(args.gt) if args.gt else None
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    try:
        predict(model, t1, t2, gt=gt, threshold=args.threshold, out_dir=out, name=args.name)
    except InputShapeError as exc:
        raise UsageError(str(exc)) from exc
    print(f"wrote {args.name}_prob.png and {args.name}_binary.png to {out}")
    return EXIT_OK


# --- metrics ----------------------------------------------------------------

def _mask_files(path: Path) -> dict[str, Path]:
    if path.is_dir():
        return {p.name: p for p in sorted(path.glob("*.png"))}
    if path.is_file():
        return {path.name: path}
    raise UsageError(f"path not found: {path}")


def cmd_metrics(args) -> int:
    from hsonet.metrics import ConfusionCounts

    pred_files, gt_files = _mask_files(Path(args.pred)), _mask_files(Path(args.gt))
    if len(pred_files) == 1 and len(gt_files) == 1:
        pairs = [(next(iter(pred_files.values())), next(iter(gt_files.values())), next(iter(gt_files)))]
    else:
        missing = sorted(set(pred_files) ^ set(gt_files))
        if missing:
            raise UsageError(f"prediction and ground-truth folders differ: {missing[:5]}")
        pairs = [(pred_files[n], gt_files[n], n) for n in sorted(gt_files)]
    if not pairs:
        raise UsageError("no masks to score")
    counts = ConfusionCounts()
    out = Path(args.out) if args.out else None
    for pp, gp, name in pairs:
        pred, gt = _read_mask(pp), _read_mask(gp)
        if pred.shape != gt.shape:
            raise UsageError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ in size")
        counts = merge(counts, confusion(pred, gt))
        if out is not None and args.colorize:
            (out / "colorized").mkdir(parents=True, exist_ok=True)
            Image.fromarray(colorize(pred, gt)).save(out / "colorized" / Path(name).with_suffix(".png").name)
    report = compute_metrics(counts)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(out / "metrics.csv", [(0, report)])
        write_report_json(out / "report.json", report, counts)
    print(json.dumps(report.as_dict()))
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML config file (CLI flags take precedence)")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsonet", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic labeled dataset folder")
    _global_flags(p, suppress=True)
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--size", type=int)
    p.add_argument("--hard-case-rate", type=float)
    p.add_argument("--shadow-prob", type=float)
    p.add_argument("--seasonal-prob", type=float)
    p.add_argument("--held-out", action="store_true", help="draw from the held-out seed range")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset folder")
    _global_flags(p, suppress=True)
    p.add_argument("--data", help="training dataset folder")
    p.add_argument("--val", help="validation dataset folder")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop at this step; schedules still span --steps")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lr-step", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--no-augment", action="store_true", default=None)
    p.add_argument("--loss", choices=("bce", "focal", "eo"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--schedule", choices=("linear", "exponential", "cosine", "none"))
    p.add_argument("--loss-step", type=int)
    p.add_argument("--decay", type=float)
    p.add_argument("--literal-hardness", action="store_true", default=None)
    p.add_argument("--pyramid-dim", type=int)
    p.add_argument("--decoder-dim", type=int)
    p.add_argument("--widths", type=int, nargs=4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--colorize", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict the change map of one image pair")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t1", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--gt")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--name", default="pred")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("metrics", help="score binary mask PNGs against ground truth")
    _global_flags(p, suppress=True)
    p.add_argument("--pred", required=True, help="mask PNG or folder of PNGs")
    p.add_argument("--gt", required=True, help="mask PNG or folder of PNGs")
    p.add_argument("--colorize", action="store_true")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    from hsonet.checkpoint import CheckpointError
    from hsonet.synthdata import DatasetLoadError, GenerationError
    from hsonet.trainer import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hsonet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, CheckpointError, DatasetLoadError, GenerationError) as exc:
        print(f"hsonet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"hsonet {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"hsonet {args.command}: I/O error on {exc.filename or '?'}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
