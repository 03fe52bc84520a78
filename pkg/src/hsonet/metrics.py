"""Confusion counting, the seven change-detection scores, and TP/FP/FN/TN colorization."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

METRIC_NAMES = ("precision", "recall", "f1", "iou", "miou", "oa", "kappa")
CSV_COLUMNS = ("P", "R", "F1", "OA", "mIOU", "IOU", "Kappa")
_CSV_FIELDS = ("precision", "recall", "f1", "oa", "miou", "iou", "kappa")

TP_COLOR = (0, 0, 255)
FP_COLOR = (255, 0, 0)
FN_COLOR = (255, 165, 0)
TN_COLOR = (173, 216, 230)

_MAX_COUNT = 2**63 - 1


class EmptyCountsError(ValueError):
    pass


def _binary(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    bad = (arr != 0) & (arr != 1)
    if bad.any():
        raise ValueError("masks must be binary (values 0/1 or bool)")
    return arr.astype(bool)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = _binary(pred), _binary(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return merge(self, other)


def confusion(pred, gt) -> ConfusionCounts:
    pred, gt = _pair(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def merge(a: ConfusionCounts, b: ConfusionCounts) -> ConfusionCounts:
    out = ConfusionCounts(a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.tn + b.tn)
    if out.total > _MAX_COUNT:
        raise OverflowError("confusion counts exceed 2**63 - 1 pixels")
    return out


def merge_all(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    out = ConfusionCounts()
    for c in counts:
        out = merge(out, c)
    return out


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou: float
    miou: float
    oa: float
    kappa: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def csv_values(self) -> list[float]:
        return [getattr(self, k) for k in _CSV_FIELDS]


def _ratio(num: int, den: int, vacuous: bool) -> float:
    # vacuous: the quantity is trivially satisfied when its denominator is empty
    if den == 0:
        return 1.0 if vacuous else 0.0
    return num / den


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Precision, recall, F1, IoU, mIoU, OA and Cohen's kappa from counts.

    Degenerate denominators score 1 when nothing positive exists in either
    the prediction or the ground truth, else 0.
    """
    n = c.total
    if n == 0:
        raise EmptyCountsError("cannot compute metrics from empty confusion counts")
    no_pos = c.tp + c.fp + c.fn == 0
    no_neg = c.tn + c.fp + c.fn == 0
    precision = _ratio(c.tp, c.tp + c.fp, no_pos)
    recall = _ratio(c.tp, c.tp + c.fn, no_pos)
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, no_pos)
    iou_neg = _ratio(c.tn, c.tn + c.fp + c.fn, no_neg)
    miou = 0.5 * (iou + iou_neg)
    oa = (c.tp + c.tn) / n
    pe = ((c.tp + c.fp) * (c.tp + c.fn) + (c.fn + c.tn) * (c.fp + c.tn)) / (n * n)
    if pe >= 1.0:
        kappa = 1.0 if c.fp + c.fn == 0 else 0.0
    else:
        kappa = (oa - pe) / (1 - pe)
    return MetricReport(precision, recall, f1, iou, miou, oa, kappa)


def colorize(pred, gt) -> np.ndarray:
    """(H, W, 3) uint8 image: TP blue, FP red, FN orange, TN light blue."""
    pred, gt = _pair(pred, gt)
    out = np.empty(pred.shape + (3,), dtype=np.uint8)
    out[pred & gt] = TP_COLOR
    out[pred & ~gt] = FP_COLOR
    out[~pred & gt] = FN_COLOR
    out[~pred & ~gt] = TN_COLOR
    return out


def write_curve_header(path: Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(("step", "split") + CSV_COLUMNS + ("loss",))


def append_curve_row(path: Path, step: int, split: str, report: MetricReport, loss: float | None) -> None:
    with open(path, "a", newline="") as fh:
        row = [step, split] + [f"{v:.6f}" for v in report.csv_values()]
        row.append("" if loss is None else f"{loss:.6f}")
        csv.writer(fh).writerow(row)


def write_report_csv(path: Path, rows: list[tuple[int, MetricReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step",) + CSV_COLUMNS)
        for step, rep in rows:
            w.writerow([step] + [f"{v:.6f}" for v in rep.csv_values()])


def write_report_json(path: Path, report: MetricReport, counts: ConfusionCounts,
                      breakdown: dict[str, tuple[ConfusionCounts, MetricReport | None]] | None = None,
                      extra: dict | None = None) -> None:
    doc = {"metrics": report.as_dict(), "counts": asdict(counts)}
    if breakdown is not None:
        doc["by_tag"] = {
            tag: {"counts": asdict(cnt), "metrics": None if rep is None else rep.as_dict()}
            for tag, (cnt, rep) in breakdown.items()
        }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
