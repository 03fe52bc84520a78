"""Equilibrium-optimization loss: BCE reweighted by a conserved hardness term.

The per-pixel loss is ``coef_i * bce_i`` with

    coef_i = lam + (1 - lam) * w_i / Z,   Z = sum(w * bce) / sum(bce)

so the weighted total always equals the plain BCE total; only its
distribution over pixels moves toward hard pixels as ``lam`` decays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from hsonet.config import EOLossConfig


@dataclass
class ScheduleState:
    t: int = 0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"schedule step must be >= 0, got {self.t}")


@dataclass
class PixelLossBatch:
    bce: torch.Tensor
    weights: torch.Tensor
    z: float
    lam: float
    weighted: torch.Tensor


def _check(p: torch.Tensor, y: torch.Tensor) -> None:
    if p.shape != y.shape:
        raise ValueError(f"prediction and target shapes differ: {tuple(p.shape)} vs {tuple(y.shape)}")


def bce_map(p: torch.Tensor, y: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    _check(p, y)
    y = y.to(p.dtype)
    return -(y * torch.log(p + eps) + (1 - y) * torch.log(1 - p + eps))


def hardness_weights(p: torch.Tensor, y: torch.Tensor, gamma: float, literal: bool = False) -> torch.Tensor:
    """(1 - p_t)**gamma, p_t being the probability given to the true class.

    With ``literal=True`` the weight is (1 - p)**gamma regardless of the label.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    _check(p, y)
    if literal:
        return (1 - p) ** gamma
    y = y.to(p.dtype)
    p_t = y * p + (1 - y) * (1 - p)
    return (1 - p_t) ** gamma


def normalizer(weights: torch.Tensor, bce: torch.Tensor, eps: float = 1e-7) -> float:
    """Z such that sum(w * bce) / Z == sum(bce). Returned as a plain float (no gradient)."""
    if weights.shape != bce.shape:
        raise ValueError(f"weights and loss map shapes differ: {tuple(weights.shape)} vs {tuple(bce.shape)}")
    with torch.no_grad():
        w = weights.detach().double()
        b = bce.detach().double()
        total = b.sum().item()
        if total < eps:
            return 1.0
        z = (w * b).sum().item() / total
    if not z > 0 or not math.isfinite(z):
        return 1.0
    return z


def lambda_schedule(state: ScheduleState | int, cfg: EOLossConfig) -> float:
    t = state.t if isinstance(state, ScheduleState) else int(state)
    if t < 0:
        raise ValueError(f"schedule step must be >= 0, got {t}")
    if cfg.schedule == "none":
        return 0.0
    if cfg.step is None:
        raise ValueError("loss.step is unset; the trainer resolves it to the run length")
    if t >= cfg.step:
        return 0.0
    frac = t / cfg.step
    if cfg.schedule == "linear":
        return 1.0 - frac
    if cfg.schedule == "exponential":
        return (1.0 - frac) ** cfg.decay
    if cfg.schedule == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * frac))
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


def reweight(bce: torch.Tensor, w: torch.Tensor, lam: float, eps: float = 1e-7) -> tuple[torch.Tensor, float]:
    """Per-pixel ``[lam + (1 - lam) w / Z] * bce`` and the normalizer Z used."""
    z = normalizer(w, bce, eps)
    if lam >= 1.0:
        # the hardness path carries zero weight; detaching avoids 0 * inf when gamma < 1 and p_t == 1
        w = w.detach()
    # written as 1 + (1 - lam)(w/Z - 1) so that lam == 1 or w/Z == 1 give exactly 1
    coef = 1.0 + (1.0 - lam) * (w / z - 1.0)
    return coef * bce, z


def eo_terms(p: torch.Tensor, y: torch.Tensor, lam: float, cfg: EOLossConfig) -> PixelLossBatch:
    bce = bce_map(p, y, cfg.eps)
    w = hardness_weights(p, y, cfg.gamma, cfg.literal_hardness)
    weighted, z = reweight(bce, w, lam, cfg.eps)
    return PixelLossBatch(bce=bce, weights=w, z=z, lam=lam, weighted=weighted)


def eo_loss(p: torch.Tensor, y: torch.Tensor, state: ScheduleState | int, cfg: EOLossConfig):
    """Scalar mean EO loss and the per-pixel breakdown."""
    terms = eo_terms(p, y, lambda_schedule(state, cfg), cfg)
    return terms.weighted.mean(), terms


def focal_loss(p: torch.Tensor, y: torch.Tensor, cfg: EOLossConfig) -> torch.Tensor:
    bce = bce_map(p, y, cfg.eps)
    return (hardness_weights(p, y, cfg.gamma, cfg.literal_hardness) * bce).mean()


def compute_loss(p: torch.Tensor, y: torch.Tensor, state: ScheduleState | int, cfg: EOLossConfig) -> torch.Tensor:
    """Dispatch on ``cfg.kind``; this is what the trainer calls."""
    if cfg.kind == "bce":
        return bce_map(p, y, cfg.eps).mean()
    if cfg.kind == "focal":
        return focal_loss(p, y, cfg)
    if cfg.kind == "eo":
        return eo_loss(p, y, state, cfg)[0]
    raise ValueError(f"unknown loss kind {cfg.kind!r}")
