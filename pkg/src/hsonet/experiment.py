"""Desk-scale end-to-end experiment: synthesize, train, evaluate on a held-out split."""
from __future__ import annotations

import argparse
import dataclasses
import platform
import sys
import json
import logging
import time
from pathlib import Path

from hsonet.config import EOLossConfig, SynthConfig, TrainConfig, to_dict
from hsonet.synthdata import generate_pair
from hsonet.trainer import PairArrays, evaluate, train

log = logging.getLogger(__name__)

HELD_OUT_OFFSET = 500_000


def data_seeds(seed: int, n: int, held_out: bool = False) -> list[int]:
    base = seed * 1_000_000 + (HELD_OUT_OFFSET if held_out else 0)
    return [base + i for i in range(n)]


def make_split(seed: int, n: int, synth: SynthConfig, held_out: bool = False) -> PairArrays:
    return PairArrays.from_pairs([generate_pair(s, synth) for s in data_seeds(seed, n, held_out)])


def desk_run(seed: int, loss: EOLossConfig, steps: int = 2000, n_train: int = 512, n_val: int = 64,
             synth: SynthConfig | None = None, train_cfg: TrainConfig | None = None,
             out_dir: str | Path | None = None) -> dict:
    """One seeded run. Returns held-out metrics, hard-pixel metrics and timing."""
    synth = synth or SynthConfig()
    t0 = time.perf_counter()
    ds = make_split(seed, n_train, synth)
    val = make_split(seed, n_val, synth, held_out=True)
    t_data = time.perf_counter() - t0
    cfg = dataclasses.replace(train_cfg or TrainConfig(), steps=steps, seed=seed, loss=loss)
    res = train(cfg, ds, val, out_dir=out_dir)
    ev = evaluate(res.model, val)
    hard_counts, hard_rep = ev.hard
    out = {
        "seed": seed,
        "loss": to_dict(loss),
        "steps": steps,
        "n_train": n_train,
        "n_val": n_val,
        "synth": to_dict(synth),
        "model": to_dict(cfg.model),
        "train": {k: v for k, v in to_dict(cfg).items() if k not in ("loss", "model", "checkpoint_dir")},
        "f1": ev.report.f1,
        "metrics": ev.report.as_dict(),
        "hard_f1": None if hard_rep is None else hard_rep.f1,
        "hard_pixels": hard_counts.total,
        "by_tag": {k: None if r is None else r.f1 for k, (c, r) in ev.by_tag.items()},
        "train_seconds": res.seconds,
        "data_seconds": t_data,
        "total_seconds": time.perf_counter() - t0,
        "final_losses": res.losses[-10:],
    }
    if out_dir is not None:
        Path(out_dir, "result.json").write_text(json.dumps(out, indent=2))
    log.info("seed %d %s: F1 %.4f hard F1 %s in %.0fs", seed, loss.kind, out["f1"], out["hard_f1"], out["total_seconds"])
    return out


def summarize(runs: list[dict]) -> dict:
    by_kind: dict[str, list[dict]] = {}
    for r in runs:
        by_kind.setdefault(r["loss"]["kind"], []).append(r)
    out = {}
    for kind, rs in by_kind.items():
        hard = [r["hard_f1"] for r in rs if r["hard_f1"] is not None]
        out[kind] = {
            "seeds": [r["seed"] for r in rs],
            "mean_f1": sum(r["f1"] for r in rs) / len(rs),
            "mean_hard_f1": sum(hard) / len(hard) if hard else None,
            "max_total_seconds": max(r["total_seconds"] for r in rs),
        }
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="Run seeded desk-scale train/evaluate experiments.")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--losses", nargs="+", default=["eo", "bce"], choices=("eo", "bce", "focal"))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--gamma", type=float, default=2.0)
    ap.add_argument("--schedule", default="cosine")
    ap.add_argument("--out", default="desk_runs")
    ap.add_argument("--results", help="aggregate JSON to write (default: <out>/desk_results.json)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    runs = []
    for kind in args.losses:
        for seed in args.seeds:
            loss = EOLossConfig(kind=kind, gamma=args.gamma, schedule=args.schedule)
            runs.append(desk_run(seed, loss, steps=args.steps, out_dir=out / f"{kind}_{seed}"))
    doc = {"runs": runs, "summary": summarize(runs),
           "platform": {"python": sys.version.split()[0], "machine": platform.machine(),
                        "processor": platform.processor(), "torch": __import__("torch").__version__}}
    path = Path(args.results) if args.results else out / "desk_results.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc["summary"], indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
