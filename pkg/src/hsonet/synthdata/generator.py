"""Deterministic bitemporal scene generator with hard-case perturbations.

A scene is sampled into a :class:`SceneSpec` (plain data, JSON-serializable)
and then rendered. Rendering is a pure function of the spec. The change mask
is the union of the footprints touched by change operations; perturbations
(shadows, occluders, seasonal shift, sensor noise) only touch the images.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from hsonet.config import SynthConfig

EASY, SHADOW, OCCLUDED, SMALL_TARGET, SEASONAL_ONLY = range(5)
TAG_NAMES = ("easy", "shadow", "occluded", "small-target", "seasonal-only")

SHADOW_FACTOR = 0.5
SMALL_DIAMETER = 12.0

_ROOF_COLORS = (
    (0.80, 0.80, 0.82),
    (0.86, 0.50, 0.42),
    (0.42, 0.56, 0.84),
    (0.88, 0.84, 0.66),
    (0.70, 0.74, 0.78),
)
_GROUND_COLORS = (
    (0.30, 0.36, 0.24),
    (0.40, 0.35, 0.27),
    (0.33, 0.33, 0.31),
    (0.26, 0.34, 0.30),
)
_CANOPY = (0.12, 0.30, 0.14)


class GenerationError(ValueError):
    pass


@dataclass
class SceneObject:
    kind: str
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    color: tuple[float, float, float]
    small: bool = False

    @property
    def radius(self) -> float:
        if self.kind == "rect":
            return math.hypot(self.a, self.b)
        return max(self.a, self.b)


@dataclass
class ChangeOp:
    """``add``: object only at t2; ``remove``: only at t1; ``move``: t1 at its
    own centre, t2 at (to_cx, to_cy)."""

    kind: str
    obj: int
    to_cx: float = 0.0
    to_cy: float = 0.0
    hard: str = "easy"


@dataclass
class Occluder:
    time: int
    discs: list[tuple[float, float, float]]
    target: int = -1


@dataclass
class SceneSpec:
    seed: int
    height: int
    width: int
    ground: tuple[float, float, float]
    texture_seed: int
    noise_seed: int
    noise_sigma: float
    objects: list[SceneObject] = field(default_factory=list)
    changes: list[ChangeOp] = field(default_factory=list)
    occluders: list[Occluder] = field(default_factory=list)
    cast_shadows: bool = False
    light: tuple[float, float] = (5.0, 5.0)
    seasonal: tuple[float, float, float, float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["objects"] = [SceneObject(**o) for o in d.get("objects", [])]
        d["changes"] = [ChangeOp(**c) for c in d.get("changes", [])]
        d["occluders"] = [Occluder(time=o["time"], discs=[tuple(x) for x in o["discs"]], target=o.get("target", -1))
                          for o in d.get("occluders", [])]
        for key in ("ground", "light"):
            d[key] = tuple(d[key])
        if d.get("seasonal") is not None:
            d["seasonal"] = tuple(d["seasonal"])
        return cls(**d)


@dataclass
class LabeledPair:
    t1: np.ndarray
    t2: np.ndarray
    mask: np.ndarray
    hardness: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.t1.shape != self.t2.shape or self.t1.ndim != 3 or self.t1.shape[2] != 3:
            raise ValueError(f"t1/t2 must be matching (H, W, 3) rasters, got {self.t1.shape} and {self.t2.shape}")
        if self.mask.shape != self.t1.shape[:2]:
            raise ValueError(f"mask shape {self.mask.shape} does not match image {self.t1.shape[:2]}")
        if self.hardness is not None and self.hardness.shape != self.mask.shape:
            raise ValueError(f"hardness shape {self.hardness.shape} does not match mask {self.mask.shape}")


# --- geometry -------------------------------------------------------------

def footprint(obj: SceneObject, shape: tuple[int, int], cx: float | None = None, cy: float | None = None) -> np.ndarray:
    """Boolean raster of pixels whose centres fall inside the object."""
    cx = obj.cx if cx is None else cx
    cy = obj.cy if cy is None else cy
    h, w = shape
    out = np.zeros(shape, dtype=bool)
    r = obj.radius + 1
    y0, y1 = max(0, int(cy - r)), min(h, int(math.ceil(cy + r)) + 1)
    x0, x1 = max(0, int(cx - r)), min(w, int(math.ceil(cx + r)) + 1)
    if y0 >= y1 or x0 >= x1:
        return out
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx = xx + 0.5 - cx
    dy = yy + 0.5 - cy
    c, s = math.cos(obj.angle), math.sin(obj.angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    if obj.kind == "rect":
        inside = (np.abs(u) <= obj.a) & (np.abs(v) <= obj.b)
    elif obj.kind == "ellipse":
        inside = (u / obj.a) ** 2 + (v / obj.b) ** 2 <= 1.0
    else:
        raise GenerationError(f"unknown object kind {obj.kind!r}")
    out[y0:y1, x0:x1] = inside
    return out


def _discs(discs, shape) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.zeros(shape, dtype=bool)
    for cx, cy, r in discs:
        out |= (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
    return out


def _shift(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = mask[ys, xs]
    return out


def _within(obj: SceneObject, cx: float, cy: float, h: int, w: int) -> bool:
    r = obj.radius
    return r <= cx <= w - r and r <= cy <= h - r


def presence(spec: SceneSpec) -> list[list[tuple[int, float, float]]]:
    """Per time step, the (object index, cx, cy) placements visible in that image."""
    changed = {c.obj: c for c in spec.changes}
    times: list[list[tuple[int, float, float]]] = [[], []]
    for i, obj in enumerate(spec.objects):
        op = changed.get(i)
        if op is None:
            times[0].append((i, obj.cx, obj.cy))
            times[1].append((i, obj.cx, obj.cy))
        elif op.kind == "add":
            times[1].append((i, obj.cx, obj.cy))
        elif op.kind == "remove":
            times[0].append((i, obj.cx, obj.cy))
        elif op.kind == "move":
            times[0].append((i, obj.cx, obj.cy))
            times[1].append((i, op.to_cx, op.to_cy))
        else:
            raise GenerationError(f"unknown change op {op.kind!r}")
    return times


def validate_spec(spec: SceneSpec) -> None:
    h, w = spec.height, spec.width
    if h % 32 or w % 32 or h <= 0 or w <= 0:
        raise GenerationError(f"canvas {h}x{w} must have sides that are positive multiples of 32")
    n = len(spec.objects)
    seen = set()
    for op in spec.changes:
        if not 0 <= op.obj < n:
            raise GenerationError(f"change op references missing object {op.obj}")
        if op.obj in seen:
            raise GenerationError(f"object {op.obj} has more than one change op")
        seen.add(op.obj)
        if op.kind == "move" and not _within(spec.objects[op.obj], op.to_cx, op.to_cy, h, w):
            raise GenerationError(f"object {op.obj} moves outside the canvas")
    for i, obj in enumerate(spec.objects):
        if not _within(obj, obj.cx, obj.cy, h, w):
            raise GenerationError(f"object {i} lies outside the {h}x{w} canvas")


# --- rendering --------------------------------------------------------------

def _ground(spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    rng = np.random.default_rng(spec.texture_seed)
    coarse = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 16, mode="wrap")
    fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=1.5, mode="wrap")
    coarse /= np.abs(coarse).max() + 1e-12
    fine /= np.abs(fine).max() + 1e-12
    tint = rng.uniform(-1, 1, size=3) * 0.03
    field = 0.06 * coarse[..., None] + 0.025 * fine[..., None] + tint * coarse[..., None]
    return np.clip(np.asarray(spec.ground)[None, None, :] + field, 0.0, 1.0)


def _paint(img: np.ndarray, obj: SceneObject, cx: float, cy: float) -> np.ndarray:
    fp = footprint(obj, img.shape[:2], cx, cy)
    ys, xs = np.nonzero(fp)
    # slight shading along the object's major axis
    u = (xs + 0.5 - cx) * math.cos(obj.angle) + (ys + 0.5 - cy) * math.sin(obj.angle)
    shade = 1.0 - 0.04 * (u > 0)
    img[ys, xs] = np.asarray(obj.color)[None, :] * shade[:, None]
    return fp


def render_clean(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Both images with objects only, no perturbations."""
    validate_spec(spec)
    ground = _ground(spec)
    out = []
    for placements in presence(spec):
        img = ground.copy()
        for i, cx, cy in placements:
            _paint(img, spec.objects[i], cx, cy)
        out.append(img)
    return out[0], out[1]


def change_mask(spec: SceneSpec) -> np.ndarray:
    shape = (spec.height, spec.width)
    mask = np.zeros(shape, dtype=bool)
    for op in spec.changes:
        obj = spec.objects[op.obj]
        mask |= footprint(obj, shape)
        if op.kind == "move":
            mask |= footprint(obj, shape, op.to_cx, op.to_cy)
    return mask


def render(spec: SceneSpec, perturb: bool = True) -> LabeledPair:
    """Render a spec into a labeled pair.

    With ``perturb=False`` the images are the clean renders and the hardness
    map only carries object-level tags.
    """
    validate_spec(spec)
    shape = (spec.height, spec.width)
    t1, t2 = render_clean(spec)
    images = [t1, t2]
    mask = change_mask(spec)
    tags = np.full(shape, EASY, dtype=np.uint8)

    times = presence(spec)
    present_fp = []
    for placements in times:
        fp = np.zeros(shape, dtype=bool)
        for i, cx, cy in placements:
            fp |= footprint(spec.objects[i], shape, cx, cy)
        present_fp.append(fp)

    shadow_px = np.zeros(shape, dtype=bool)
    occl_px = np.zeros(shape, dtype=bool)
    ldx, ldy = int(round(spec.light[0])), int(round(spec.light[1]))
    changed = {c.obj: c for c in spec.changes}

    if perturb:
        for m, placements in enumerate(times):
            img = images[m]
            if spec.cast_shadows:
                cast = np.zeros(shape, dtype=bool)
                for i, cx, cy in placements:
                    cast |= _shift(footprint(spec.objects[i], shape, cx, cy), ldx, ldy)
                cast &= ~present_fp[m]
                img[cast] *= SHADOW_FACTOR
                shadow_px |= cast
            for i, cx, cy in placements:
                op = changed.get(i)
                if op is not None and op.hard == "shadow":
                    # a shadow from a neighbouring structure falling across the object
                    fall = _shift(footprint(spec.objects[i], shape, cx, cy), -ldx - 2, -ldy - 2)
                    img[fall] *= SHADOW_FACTOR
                    shadow_px |= fall
        for occ in spec.occluders:
            blob = _discs(occ.discs, shape)
            ys, xs = np.nonzero(blob)
            canopy = np.asarray(_CANOPY)[None, :] * (1.0 + 0.15 * np.sin(0.9 * xs + 0.7 * ys))[:, None]
            images[occ.time][ys, xs] = canopy
            occl_px |= blob
        if spec.seasonal is not None:
            gr, gg, gb, off = spec.seasonal
            images[1] = images[1] * np.asarray([gr, gg, gb])[None, None, :] + off
        if spec.noise_sigma > 0:
            rng = np.random.default_rng(spec.noise_seed)
            images = [img + rng.normal(0.0, spec.noise_sigma, img.shape) for img in images]

    # unchanged pixels: occluded > shadow > seasonal-only > easy
    unchanged = ~mask
    if spec.seasonal is not None and perturb:
        tags[unchanged] = SEASONAL_ONLY
    tags[unchanged & shadow_px] = SHADOW
    tags[unchanged & occl_px] = OCCLUDED
    # changed pixels carry the tag of their object
    code = {"easy": EASY, "shadow": SHADOW, "occlusion": OCCLUDED, "small": SMALL_TARGET}
    for op in spec.changes:
        obj = spec.objects[op.obj]
        fp = footprint(obj, shape)
        if op.kind == "move":
            fp |= footprint(obj, shape, op.to_cx, op.to_cy)
        tag = SMALL_TARGET if obj.small else code[op.hard]
        tags[fp] = tag

    t1, t2 = (np.clip(img, 0.0, 1.0).astype(np.float32) for img in images)
    return LabeledPair(t1, t2, mask.astype(np.uint8), tags, name=f"{spec.seed:05d}")


# --- sampling ---------------------------------------------------------------

class _Placer:
    def __init__(self, h: int, w: int, rng: np.random.Generator, margin: float = 3.0):
        self.h, self.w, self.rng, self.margin = h, w, rng, margin
        self.discs: list[tuple[float, float, float]] = []

    def free(self, cx: float, cy: float, r: float) -> bool:
        return all(math.hypot(cx - x, cy - y) > r + q + self.margin for x, y, q in self.discs)

    def find(self, r: float, tries: int = 60) -> tuple[float, float] | None:
        if 2 * r > min(self.h, self.w):
            return None
        for _ in range(tries):
            cx = self.rng.uniform(r, self.w - r)
            cy = self.rng.uniform(r, self.h - r)
            if self.free(cx, cy, r):
                return cx, cy
        return None

    def take(self, cx: float, cy: float, r: float) -> None:
        self.discs.append((cx, cy, r))


def _sample_object(rng: np.random.Generator, small: bool, max_half: float) -> SceneObject:
    kind = "rect" if rng.random() < 0.7 else "ellipse"
    if small:
        a, b = rng.uniform(2.5, 4.0, size=2)
    else:
        a, b = rng.uniform(6.0, max(6.5, max_half), size=2)
    base = np.asarray(_ROOF_COLORS[rng.integers(len(_ROOF_COLORS))])
    color = np.clip(base + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
    angle = float(rng.uniform(0, math.pi)) if rng.random() < 0.5 else 0.0
    return SceneObject(kind, 0.0, 0.0, float(a), float(b), angle, tuple(float(c) for c in color), small)


def _area(obj: SceneObject) -> float:
    return 4 * obj.a * obj.b if obj.kind == "rect" else math.pi * obj.a * obj.b


def _occluder_for(obj: SceneObject, cx: float, cy: float, shape, rng: np.random.Generator) -> list:
    """Blob of discs near the object's edge covering 20-60% of its footprint."""
    fp = footprint(obj, shape, cx, cy)
    total = fp.sum()
    target = rng.uniform(0.2, 0.6)
    theta = rng.uniform(0, 2 * math.pi)
    ex, ey = cx + obj.radius * math.cos(theta), cy + obj.radius * math.sin(theta)
    offsets = rng.uniform(-0.4, 0.4, size=(4, 2))
    best = None
    for scale in np.linspace(0.2, 2.0, 37):
        r = scale * obj.radius * 0.6
        discs = [(float(ex + ox * r), float(ey + oy * r), float(r * (1.0 - 0.3 * k / 4))) for k, (ox, oy) in enumerate(offsets)]
        cover = (_discs(discs, shape) & fp).sum() / max(total, 1)
        if 0.2 <= cover <= 0.6:
            best = discs
            if cover >= target:
                break
        elif cover > 0.6:
            break
    return best


def make_spec(seed: int, cfg: SynthConfig | None = None) -> SceneSpec:
    """Sample a scene description from ``seed``."""
    cfg = cfg or SynthConfig()
    problems = cfg.problems()
    if problems:
        raise GenerationError("; ".join(problems))
    size = cfg.size
    shape = (size, size)
    rng = np.random.default_rng([seed, 0x50A1])
    max_half = min(20.0, size / 8)
    lo, hi = cfg.change_frac
    total_px = size * size

    for _attempt in range(20):
        placer = _Placer(size, size, rng)
        objects: list[SceneObject] = []
        changes: list[ChangeOp] = []

        def place(obj: SceneObject) -> bool:
            spot = placer.find(obj.radius)
            if spot is None:
                return False
            obj.cx, obj.cy = float(spot[0]), float(spot[1])
            placer.take(obj.cx, obj.cy, obj.radius)
            objects.append(obj)
            return True

        for _ in range(int(rng.integers(3, 9))):
            place(_sample_object(rng, False, max_half))
        for _ in range(int(rng.integers(0, 3))):
            place(_sample_object(rng, True, max_half))

        target = rng.uniform(lo, lo + 0.6 * (hi - lo))
        changed_px = 0.0
        n_small = int(rng.binomial(4, cfg.hard_case_rate))
        fails = 0
        while (changed_px < target * total_px or n_small > 0) and fails < 40:
            small = n_small > 0
            obj = _sample_object(rng, small, max_half)
            kind = ("add", "remove", "move")[int(rng.choice(3, p=(0.45, 0.35, 0.2)))]
            cost = _area(obj) * (2 if kind == "move" else 1)
            if (changed_px + cost) > 0.9 * hi * total_px:
                fails += 1
                continue
            if not place(obj):
                fails += 1
                continue
            op = ChangeOp(kind, len(objects) - 1)
            if kind == "move":
                spot = placer.find(obj.radius)
                if spot is None:
                    op.kind = "add"
                    cost = _area(obj)
                else:
                    op.to_cx, op.to_cy = float(spot[0]), float(spot[1])
                    placer.take(op.to_cx, op.to_cy, obj.radius)
            if small:
                n_small -= 1
                op.hard = "small"
            elif rng.random() < cfg.hard_case_rate:
                op.hard = "occlusion" if rng.random() < 0.5 else "shadow"
            changes.append(op)
            changed_px += cost

        spec = SceneSpec(
            seed=int(seed), height=size, width=size,
            ground=tuple(float(c) for c in _GROUND_COLORS[int(rng.integers(len(_GROUND_COLORS)))]),
            texture_seed=int(rng.integers(2**31)), noise_seed=int(rng.integers(2**31)),
            noise_sigma=float(cfg.noise_sigma), objects=objects, changes=changes,
        )
        frac = change_mask(spec).sum() / total_px
        if lo <= frac <= hi:
            break
    else:
        raise GenerationError(f"could not reach a changed fraction in [{lo}, {hi}] for seed {seed}")

    changed = {c.obj: c for c in changes}
    times = presence(spec)
    for op in changes:
        if op.hard != "occlusion":
            continue
        obj = objects[op.obj]
        options = [m for m, pl in enumerate(times) for i, _, _ in pl if i == op.obj]
        m = options[int(rng.integers(len(options)))]
        cx, cy = next((x, y) for i, x, y in times[m] if i == op.obj)
        discs = _occluder_for(obj, cx, cy, shape, rng)
        if discs is None:
            op.hard = "easy"
        else:
            spec.occluders.append(Occluder(m, discs, op.obj))
    for i, obj in enumerate(objects):
        if i in changed or obj.small or rng.random() >= cfg.hard_case_rate * 0.5:
            continue
        discs = _occluder_for(obj, obj.cx, obj.cy, shape, rng)
        if discs is not None:
            spec.occluders.append(Occluder(int(rng.integers(2)), discs, i))

    spec.cast_shadows = bool(rng.random() < cfg.shadow_prob)
    theta = rng.uniform(0, 2 * math.pi)
    spec.light = (float(round(5 * math.cos(theta))), float(round(5 * math.sin(theta))))
    if spec.light == (0.0, 0.0):
        spec.light = (5.0, 0.0)
    if rng.random() < cfg.seasonal_prob:
        gains = rng.uniform(0.82, 1.18, size=3)
        spec.seasonal = (float(gains[0]), float(gains[1]), float(gains[2]), float(rng.uniform(-0.06, 0.06)))
    return spec


def generate_pair(seed: int, cfg: SynthConfig | None = None) -> LabeledPair:
    return render(make_spec(seed, cfg))
