import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsonet.metrics import (
    CSV_COLUMNS,
    FN_COLOR,
    FP_COLOR,
    TN_COLOR,
    TP_COLOR,
    ConfusionCounts,
    EmptyCountsError,
    colorize,
    compute_metrics,
    confusion,
    merge,
    merge_all,
    write_report_csv,
    write_report_json,
)

counts_st = st.builds(ConfusionCounts, *[st.integers(0, 10**6)] * 4).filter(lambda c: c.total > 0)


def loop_counts(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.flatten().tolist(), gt.flatten().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def oracle_metrics(tp, fp, fn, tn):
    """Independent restatement of the seven metrics and the degenerate-case rule."""
    n = tp + fp + fn + tn
    no_pos = tp + fp + fn == 0
    no_neg = tn + fp + fn == 0

    def div(a, b, vac):
        return (1.0 if vac else 0.0) if b == 0 else a / b

    p = div(tp, tp + fp, no_pos)
    r = div(tp, tp + fn, no_pos)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    iou1 = div(tp, tp + fp + fn, no_pos)
    iou0 = div(tn, tn + fp + fn, no_neg)
    oa = (tp + tn) / n
    pe = ((tp + fp) / n) * ((tp + fn) / n) + ((fn + tn) / n) * ((fp + tn) / n)
    kappa = (1.0 if fp + fn == 0 else 0.0) if pe == 1 else (oa - pe) / (1 - pe)
    return dict(precision=p, recall=r, f1=f1, iou=iou1, miou=(iou1 + iou0) / 2, oa=oa, kappa=kappa)


def test_confusion_trivial():
    ones = np.ones((4, 5), bool)
    assert confusion(ones, ones) == ConfusionCounts(20, 0, 0, 0)
    rng = np.random.default_rng(0)
    gt = rng.random((8, 8)) > 0.5
    c = confusion(~gt, gt)
    assert c.tp == 0 and c.tn == 0


def test_confusion_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        pred, gt = rng.random((64, 64)) > 0.6, rng.random((64, 64)) > 0.7
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == loop_counts(pred, gt)


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        confusion(np.full((2, 2), 2), np.zeros((2, 2)))


@given(counts_st, counts_st, counts_st)
def test_merge_monoid(a, b, c):
    zero = ConfusionCounts()
    assert merge(a, zero) == a == merge(zero, a)
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


def test_merge_overflow():
    big = ConfusionCounts(tp=2**62)
    with pytest.raises(OverflowError):
        merge(big, big)


@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.integers(1, 8))
def test_tile_merge_equals_whole(seed, rows, cols):
    rng = np.random.default_rng(seed)
    pred, gt = rng.random((32, 48)) > 0.5, rng.random((32, 48)) > 0.8
    rcut = np.sort(rng.choice(np.arange(1, 32), size=min(rows - 1, 31), replace=False))
    ccut = np.sort(rng.choice(np.arange(1, 48), size=min(cols - 1, 47), replace=False))
    parts = [confusion(pb, gb) for pr, gr in zip(np.split(pred, rcut), np.split(gt, rcut))
             for pb, gb in zip(np.split(pr, ccut, axis=1), np.split(gr, ccut, axis=1))]
    assert merge_all(parts) == confusion(pred, gt)
    assert compute_metrics(merge_all(parts)) == compute_metrics(confusion(pred, gt))


def test_perfect_prediction():
    rep = compute_metrics(ConfusionCounts(10, 0, 0, 90))
    assert all(v == 1.0 for v in rep.as_dict().values())


def test_worked_example():
    rep = compute_metrics(ConfusionCounts(50, 10, 10, 930))
    assert rep.precision == pytest.approx(0.8333, abs=5e-5)
    assert rep.recall == pytest.approx(0.8333, abs=5e-5)
    assert rep.f1 == pytest.approx(0.8333, abs=5e-5)
    assert rep.iou == pytest.approx(0.7143, abs=5e-5)
    assert rep.oa == pytest.approx(0.98, abs=1e-12)
    # (50/70 + 930/950) / 2 and (0.98 - 0.8872) / (1 - 0.8872), computed by hand
    assert rep.miou == pytest.approx(0.8466, abs=5e-5)
    assert rep.kappa == pytest.approx(0.8227, abs=5e-5)


def test_all_negative_is_vacuously_perfect():
    rep = compute_metrics(ConfusionCounts(0, 0, 0, 100))
    assert rep.oa == 1.0
    assert rep.precision == rep.recall == rep.f1 == rep.iou == 1.0
    assert rep.kappa == 1.0


def test_empty_counts_rejected():
    with pytest.raises(EmptyCountsError):
        compute_metrics(ConfusionCounts())


def test_metrics_oracle_random_masks():
    rng = np.random.default_rng(2)
    for _ in range(30):
        pred = rng.random((64, 64)) < rng.random()
        gt = rng.random((64, 64)) < rng.random()
        got = compute_metrics(confusion(pred, gt)).as_dict()
        want = oracle_metrics(*loop_counts(pred, gt))
        for k in want:
            assert abs(got[k] - want[k]) <= 1e-9, k


@given(counts_st)
def test_metric_identities(c):
    rep = compute_metrics(c)
    for k in ("precision", "recall", "f1", "iou", "miou", "oa"):
        assert 0.0 <= getattr(rep, k) <= 1.0
    assert -1.0 <= rep.kappa <= 1.0 + 1e-12
    if rep.precision + rep.recall > 0:
        assert rep.f1 * (rep.precision + rep.recall) == pytest.approx(2 * rep.precision * rep.recall, abs=1e-12)
    assert rep.iou == pytest.approx(rep.f1 / (2 - rep.f1), abs=1e-12)
    assert rep.iou <= rep.f1 + 1e-15
    iou0 = 1.0 if c.tn + c.fp + c.fn == 0 else c.tn / (c.tn + c.fp + c.fn)
    assert min(rep.iou, iou0) - 1e-15 <= rep.miou <= max(rep.iou, iou0) + 1e-15


@given(counts_st)
def test_kappa_one_iff_no_errors(c):
    if c.tp + c.fn > 0 and c.tn + c.fp > 0:
        rep = compute_metrics(c)
        assert (abs(rep.kappa - 1.0) < 1e-12) == (c.fp + c.fn == 0)


def test_colorize():
    ones, zeros = np.ones((3, 4), bool), np.zeros((3, 4), bool)
    assert (colorize(ones, ones) == TP_COLOR).all()
    assert (colorize(ones, zeros) == FP_COLOR).all()
    img = colorize(np.array([[1, 1, 0, 0]]), np.array([[1, 0, 1, 0]]))
    assert img.dtype == np.uint8
    assert [tuple(v) for v in img[0]] == [TP_COLOR, FP_COLOR, FN_COLOR, TN_COLOR]
    assert TP_COLOR == (0, 0, 255) and FP_COLOR == (255, 0, 0)
    assert FN_COLOR == (255, 165, 0) and TN_COLOR == (173, 216, 230)
    with pytest.raises(ValueError):
        colorize(ones, np.ones((3, 3), bool))


def test_colorize_matches_confusion_oracle():
    rng = np.random.default_rng(4)
    pred, gt = rng.random((20, 20)) > 0.5, rng.random((20, 20)) > 0.5
    img = colorize(pred, gt)
    c = confusion(pred, gt)
    for color, n in ((TP_COLOR, c.tp), (FP_COLOR, c.fp), (FN_COLOR, c.fn), (TN_COLOR, c.tn)):
        assert int((img == color).all(-1).sum()) == n


def test_report_writers(tmp_path):
    c = ConfusionCounts(5, 1, 2, 8)
    rep = compute_metrics(c)
    write_report_csv(tmp_path / "m.csv", [(3, rep)])
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert tuple(rows[0]) == ("step",) + CSV_COLUMNS
    assert rows[0] == ["step", "P", "R", "F1", "OA", "mIOU", "IOU", "Kappa"]
    assert float(rows[1][3]) == pytest.approx(rep.f1, abs=1e-6)
    write_report_json(tmp_path / "m.json", rep, c)
    doc = json.load(open(tmp_path / "m.json"))
    assert set(doc["metrics"]) == {"precision", "recall", "f1", "iou", "miou", "oa", "kappa"}
    assert doc["counts"] == {"tp": 5, "fp": 1, "fn": 2, "tn": 8}
