"""Training loop, evaluation with per-hardness breakdown, and prediction."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from hsonet.checkpoint import Checkpoint, save_checkpoint
from hsonet.config import BackboneConfig, EOLossConfig, TrainConfig, to_dict
from hsonet.encoder import check_pair
from hsonet.loss import ScheduleState, compute_loss
from hsonet.metrics import (
    ConfusionCounts,
    MetricReport,
    append_curve_row,
    colorize,
    compute_metrics,
    confusion,
    merge,
    write_curve_header,
)
from hsonet.model import HSONet
from hsonet.synthdata.folder import to_uint8
from hsonet.synthdata.generator import EASY, TAG_NAMES, LabeledPair
from hsonet.synthdata.transforms import apply_transform, sample_transform

log = logging.getLogger(__name__)

THRESHOLD = 0.5


class NumericalError(RuntimeError):
    def __init__(self, step: int, indices: Sequence[int], value: float):
        self.step, self.indices, self.value = step, list(indices), value
        super().__init__(f"non-finite loss {value} at step {step}; batch sample indices {self.indices}")


class PairArrays:
    """A labeled dataset held as stacked uint8 arrays."""

    def __init__(self, t1: np.ndarray, t2: np.ndarray, mask: np.ndarray,
                 hardness: np.ndarray | None = None, names: Sequence[str] | None = None):
        self.t1, self.t2, self.mask, self.hardness = t1, t2, mask, hardness
        self.names = list(names) if names is not None else [f"{i:05d}" for i in range(len(t1))]

    @classmethod
    def from_pairs(cls, pairs: Sequence[LabeledPair]) -> "PairArrays":
        if not pairs:
            return cls(np.zeros((0, 32, 32, 3), np.uint8), np.zeros((0, 32, 32, 3), np.uint8),
                       np.zeros((0, 32, 32), np.uint8), None, [])
        hard = None
        if all(p.hardness is not None for p in pairs):
            hard = np.stack([p.hardness for p in pairs]).astype(np.uint8)
        return cls(
            np.stack([to_uint8(p.t1) for p in pairs]),
            np.stack([to_uint8(p.t2) for p in pairs]),
            np.stack([(p.mask > 0).astype(np.uint8) for p in pairs]),
            hard,
            [p.name for p in pairs],
        )

    def __len__(self) -> int:
        return len(self.t1)

    def subset(self, idx: Sequence[int]) -> "PairArrays":
        idx = np.asarray(idx, dtype=int)
        return PairArrays(self.t1[idx], self.t2[idx], self.mask[idx],
                          None if self.hardness is None else self.hardness[idx],
                          [self.names[i] for i in idx])

    def sample(self, i: int, rng: np.random.Generator | None = None, crop: int | None = None,
               geometric: bool = True):
        """One item, optionally augmented and randomly cropped (both driven by ``rng``)."""
        t1, t2, m = self.t1[i], self.t2[i], self.mask[i]
        hd = None if self.hardness is None else self.hardness[i]
        if rng is not None and geometric:
            tf = sample_transform(rng)
            t1, t2 = apply_transform(t1, tf), apply_transform(t2, tf)
            m = apply_transform(m, tf, label=True)
            hd = None if hd is None else apply_transform(hd, tf, label=True)
        if crop is not None and crop < m.shape[0]:
            r = rng if rng is not None else np.random.default_rng(i)
            y = int(r.integers(0, m.shape[0] - crop + 1))
            x = int(r.integers(0, m.shape[1] - crop + 1))
            sl = (slice(y, y + crop), slice(x, x + crop))
            t1, t2, m = t1[sl], t2[sl], m[sl]
            hd = None if hd is None else hd[sl]
        return t1, t2, m, hd


def to_tensor(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack (H, W, 3) uint8 or float rasters into a (B, 3, H, W) tensor in [0, 1]."""
    arr = np.stack(images)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for ``step`` under a per-epoch seeded shuffle (drop-last)."""
    per_epoch = max(1, n // batch_size)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch, 0xE90C]).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


def resolve(cfg: TrainConfig, n_train: int) -> TrainConfig:
    """Materialize defaults that depend on the dataset size."""
    steps = cfg.steps
    if cfg.epochs is not None:
        steps = cfg.epochs * max(1, n_train // cfg.batch_size)
    loss = cfg.loss
    if loss.step is None:
        loss = dataclasses.replace(loss, step=max(1, steps))
    lr_step = cfg.lr_step if cfg.lr_step is not None else max(1, steps // 2)
    return dataclasses.replace(cfg, steps=steps, epochs=None, lr_step=lr_step, loss=loss)


def build_model(model_cfg: BackboneConfig, seed: int) -> HSONet:
    torch.manual_seed(seed)
    return HSONet(model_cfg)


def make_optimizer(model: HSONet, cfg: TrainConfig):
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_step, gamma=cfg.lr_gamma)
    return opt, sched


def config_from_checkpoint(ckpt: Checkpoint) -> TrainConfig:
    c = dict(ckpt.config.get("train", {}))
    c.pop("loss", None)
    c.pop("model", None)
    for key in ("betas",):
        if key in c:
            c[key] = tuple(c[key])
    model = ckpt.config.get("model", {})
    model = BackboneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in model.items()})
    loss = EOLossConfig(**ckpt.config.get("loss", {}))
    return TrainConfig(**c, loss=loss, model=model)


def model_from_checkpoint(ckpt: Checkpoint) -> HSONet:
    cfg = config_from_checkpoint(ckpt)
    model = HSONet(cfg.model)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curve: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    model: HSONet | None = None
    seconds: float = 0.0


def _snapshot(model, opt, sched, t, history, cfg) -> Checkpoint:
    return Checkpoint(
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=opt.state_dict(),
        scheduler_state=sched.state_dict(),
        t=t,
        history=list(history),
        # the output location is recorded in the run manifest; keeping it out lets
        # identical runs in different directories produce identical checkpoints
        config={"train": {k: v for k, v in to_dict(cfg).items() if k not in ("loss", "model", "checkpoint_dir")},
                "loss": to_dict(cfg.loss), "model": to_dict(cfg.model)},
    )


def train(cfg: TrainConfig, dataset: PairArrays, val: PairArrays | None = None,
          out_dir: str | Path | None = None, resume: Checkpoint | None = None,
          stop_at: int | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train an HSONet on ``dataset``.

    ``stop_at`` ends the run early at that global step (the schedule still
    uses the full ``cfg.steps`` horizon), which is how interrupted runs are
    produced for resume tests.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    cfg = resolve(cfg, len(dataset))
    start_time = time.perf_counter()

    model = build_model(cfg.model, cfg.seed)
    opt, sched = make_optimizer(model, cfg)
    t = 0
    history: list[dict] = []
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state is not None:
            opt.load_state_dict(resume.optimizer_state)
        if resume.scheduler_state is not None:
            sched.load_state_dict(resume.scheduler_state)
        t = resume.t
        history = list(resume.history)

    out = Path(out_dir) if out_dir is not None else None
    curve_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        curve_path = out / "curve.csv"
        if resume is None or not curve_path.exists():
            write_curve_header(curve_path)

    end = cfg.steps if stop_at is None else min(cfg.steps, stop_at)
    losses: list[float] = []
    curve: list[dict] = []
    train_counts = ConfusionCounts()
    interval_losses: list[float] = []

    model.train()
    while t < end:
        idx = batch_indices(len(dataset), cfg.batch_size, cfg.seed, t)
        items = []
        for k, i in enumerate(idx):
            rng = np.random.default_rng([cfg.seed, t, k, 0xA06])
            items.append(dataset.sample(int(i), rng, cfg.crop, geometric=cfg.augment))
        x1 = to_tensor([it[0] for it in items])
        x2 = to_tensor([it[1] for it in items])
        y = torch.from_numpy(np.stack([it[2] for it in items]).astype(np.float32)).unsqueeze(1)

        p = model(x1, x2)
        loss = compute_loss(p, y, ScheduleState(t), cfg.loss)
        value = float(loss.detach())
        if not math.isfinite(value):
            err = NumericalError(t, [int(i) for i in idx], value)
            if out is not None:
                (out / "nonfinite_batch.json").write_text(json.dumps(
                    {"step": t, "indices": err.indices, "names": [dataset.names[int(i)] for i in idx],
                     "loss": repr(value)}, indent=2))
            raise err
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        t += 1
        losses.append(value)
        interval_losses.append(value)
        train_counts = merge(train_counts, confusion(p.detach().numpy() >= THRESHOLD, y.numpy() > 0.5))
        if on_step is not None:
            on_step(t, value)

        if t % cfg.eval_interval == 0 or t == cfg.steps:
            row = {"step": t, "split": "train", **compute_metrics(train_counts).as_dict(),
                   "loss": float(np.mean(interval_losses))}
            curve.append(row)
            history.append(row)
            if curve_path is not None:
                append_curve_row(curve_path, t, "train", compute_metrics(train_counts), row["loss"])
            train_counts, interval_losses = ConfusionCounts(), []
            if val is not None and len(val):
                ev = evaluate(model, val, loss_cfg=cfg.loss, t=t)
                vrow = {"step": t, "split": "val", **ev.report.as_dict(), "loss": ev.loss}
                curve.append(vrow)
                history.append(vrow)
                if curve_path is not None:
                    append_curve_row(curve_path, t, "val", ev.report, ev.loss)
                model.train()
            log.info("step %d loss %.4f", t, row["loss"])

    model.eval()
    ckpt = _snapshot(model, opt, sched, t, history, cfg)
    if out is not None:
        save_checkpoint(ckpt, out / "checkpoint.hson")
    return TrainResult(ckpt, curve, losses, model, time.perf_counter() - start_time)


@dataclass
class EvalResult:
    report: MetricReport
    counts: ConfusionCounts
    by_tag: dict[str, tuple[ConfusionCounts, MetricReport | None]]
    hard: tuple[ConfusionCounts, MetricReport | None]
    loss: float | None = None


def _safe_metrics(c: ConfusionCounts) -> MetricReport | None:
    return compute_metrics(c) if c.total else None


def accumulate(pred: np.ndarray, gt: np.ndarray, tags: np.ndarray | None,
               counts: ConfusionCounts, per_tag: list[ConfusionCounts], hard: ConfusionCounts):
    counts = merge(counts, confusion(pred, gt))
    if tags is not None:
        for code in range(len(TAG_NAMES)):
            sel = tags == code
            if sel.any():
                per_tag[code] = merge(per_tag[code], confusion(pred[sel], gt[sel]))
        sel = tags != EASY
        if sel.any():
            hard = merge(hard, confusion(pred[sel], gt[sel]))
    return counts, per_tag, hard


@torch.no_grad()
def predict_probs(model: HSONet, dataset: PairArrays, batch_size: int = 8) -> np.ndarray:
    model.eval()
    out = []
    for s in range(0, len(dataset), batch_size):
        sl = slice(s, s + batch_size)
        p = model(to_tensor(list(dataset.t1[sl])), to_tensor(list(dataset.t2[sl])))
        out.append(p[:, 0].numpy())
    return np.concatenate(out) if out else np.zeros((0,) + dataset.mask.shape[1:], np.float32)


def evaluate_predictions(pred: np.ndarray, dataset: PairArrays) -> EvalResult:
    """Score binary predictions (N, H, W) against ``dataset`` masks."""
    counts, hard = ConfusionCounts(), ConfusionCounts()
    per_tag = [ConfusionCounts() for _ in TAG_NAMES]
    for i in range(len(dataset)):
        tags = None if dataset.hardness is None else dataset.hardness[i]
        counts, per_tag, hard = accumulate(pred[i].astype(bool), dataset.mask[i] > 0, tags, counts, per_tag, hard)
    by_tag = {name: (c, _safe_metrics(c)) for name, c in zip(TAG_NAMES, per_tag)}
    return EvalResult(compute_metrics(counts), counts, by_tag, (hard, _safe_metrics(hard)))


def evaluate(model: HSONet, dataset: PairArrays, loss_cfg: EOLossConfig | None = None, t: int = 0,
             threshold: float = THRESHOLD, batch_size: int = 8) -> EvalResult:
    if len(dataset) == 0:
        raise ValueError("evaluation dataset is empty")
    probs = predict_probs(model, dataset, batch_size)
    res = evaluate_predictions(probs >= threshold, dataset)
    if loss_cfg is not None:
        y = torch.from_numpy(dataset.mask.astype(np.float32))
        lc = loss_cfg if loss_cfg.step is not None else dataclasses.replace(loss_cfg, step=1)
        res.loss = float(compute_loss(torch.from_numpy(probs), y, ScheduleState(t), lc))
    return res


@dataclass
class Prediction:
    prob: np.ndarray
    binary: np.ndarray
    overlay: np.ndarray | None


def quantize16(prob: np.ndarray) -> np.ndarray:
    return np.round(np.clip(prob, 0.0, 1.0) * 65535.0).astype(np.uint16)


@torch.no_grad()
def predict(model: HSONet, t1: np.ndarray, t2: np.ndarray, gt: np.ndarray | None = None,
            threshold: float = THRESHOLD, out_dir: str | Path | None = None, name: str = "pred") -> Prediction:
    """Change probability, binary map and (with ``gt``) the confusion overlay.

    When ``out_dir`` is given, writes ``<name>_prob.png`` (16-bit),
    ``<name>_binary.png`` (8-bit, 0/255) and ``<name>_overlay.png``.
    """
    x1, x2 = to_tensor([t1]), to_tensor([t2])
    check_pair(x1, x2)
    model.eval()
    prob = model(x1, x2)[0, 0].numpy()
    # threshold the stored 16-bit values so the binary PNG is reproducible from the prob PNG
    q = quantize16(prob)
    binary = q / 65535.0 >= threshold
    overlay = colorize(binary, gt > 0) if gt is not None else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        Image.fromarray(q).save(out / f"{name}_prob.png")
        Image.fromarray(binary.astype(np.uint8) * 255).save(out / f"{name}_binary.png")
        if overlay is not None:
            Image.fromarray(overlay).save(out / f"{name}_overlay.png")
    return Prediction(prob, binary, overlay)
