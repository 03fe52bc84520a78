"""On-disk dataset layout: <root>/{A,B,label,hardness}/NNNNN.png plus a manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from hsonet.synthdata.generator import LabeledPair

MANIFEST = "manifest.json"


class DatasetLoadError(RuntimeError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pair(root: Path, name: str, lp: LabeledPair) -> None:
    root = Path(root)
    for sub in ("A", "B", "label", "hardness"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(lp.t1)).save(root / "A" / f"{name}.png")
    Image.fromarray(to_uint8(lp.t2)).save(root / "B" / f"{name}.png")
    Image.fromarray((lp.mask > 0).astype(np.uint8) * 255).save(root / "label" / f"{name}.png")
    if lp.hardness is not None:
        Image.fromarray(lp.hardness.astype(np.uint8)).save(root / "hardness" / f"{name}.png")


def _read(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except OSError as exc:
        raise DatasetLoadError(f"cannot read {path}: {exc}") from exc


def load_folder(path: str | Path) -> list[LabeledPair]:
    """Load every A/B/label triple, sorted by filename.

    Labels are binarized at 128. A ``hardness`` folder is optional.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetLoadError(f"dataset folder {root} does not exist")
    a_dir, b_dir, l_dir, h_dir = (root / s for s in ("A", "B", "label", "hardness"))
    names = sorted(p.name for p in a_dir.glob("*.png")) if a_dir.is_dir() else []
    b_names = sorted(p.name for p in b_dir.glob("*.png")) if b_dir.is_dir() else []
    l_names = sorted(p.name for p in l_dir.glob("*.png")) if l_dir.is_dir() else []
    for other, label in ((b_names, "B"), (l_names, "label")):
        missing = sorted(set(names) ^ set(other))
        if missing:
            raise DatasetLoadError(f"{root}: files without a counterpart between A and {label}: {missing[:5]}")
    out = []
    for name in names:
        t1 = _read(a_dir / name, "RGB")
        t2 = _read(b_dir / name, "RGB")
        lab = _read(l_dir / name, "L")
        if t1.shape != t2.shape or lab.shape != t1.shape[:2]:
            raise DatasetLoadError(
                f"{root}/{name}: size mismatch A{t1.shape[:2]} B{t2.shape[:2]} label{lab.shape}")
        hard = None
        if (h_dir / name).exists():
            hard = _read(h_dir / name, "L")
            if hard.shape != lab.shape:
                raise DatasetLoadError(f"{root}/{name}: hardness map size {hard.shape} != label {lab.shape}")
        out.append(LabeledPair(
            t1.astype(np.float32) / 255.0, t2.astype(np.float32) / 255.0,
            (lab >= 128).astype(np.uint8), hard, name=Path(name).stem,
        ))
    return out


def read_manifest(path: str | Path) -> dict:
    return json.loads((Path(path) / MANIFEST).read_text())


def write_manifest(path: str | Path, doc: dict) -> None:
    Path(path).mkdir(parents=True, exist_ok=True)
    (Path(path) / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
