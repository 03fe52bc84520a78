"""Dual-branch difference fusion and the lightweight decoder head."""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from hsonet.encoder import conv_bn_relu


def _same_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def fuse_level_diff(r1: Sequence[torch.Tensor], r2: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """|R1_i - R2_i| for every level."""
    if len(r1) != len(r2):
        raise ValueError(f"pyramids have different depths: {len(r1)} vs {len(r2)}")
    out = []
    for a, b in zip(r1, r2):
        _same_shapes(a, b, "fuse_level_diff")
        out.append(torch.abs(a - b))
    return out


def branch_diff(m1: torch.Tensor, m2: torch.Tensor) -> torch.Tensor:
    _same_shapes(m1, m2, "branch_diff")
    return torch.abs(m1 - m2)


def skip_concat(t: torch.Tensor, deo_c: torch.Tensor) -> torch.Tensor:
    if t.shape[0] != deo_c.shape[0] or t.shape[-2:] != deo_c.shape[-2:]:
        raise ValueError(f"skip_concat: incompatible shapes {tuple(t.shape)} and {tuple(deo_c.shape)}")
    return torch.cat([t, deo_c], dim=1)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class UpsampleLevel(nn.Module):
    """Brings level ``i`` (stride 2**(i+1)) to stride 4.

    Level 1 gets a single conv-BN-ReLU; level i > 1 gets i-1 repeats of
    conv-BN-ReLU followed by bilinear x2.
    """

    def __init__(self, level: int, cin: int, cout: int):
        super().__init__()
        if level < 1:
            raise ValueError(f"level must be >= 1, got {level}")
        self.level = level
        n = max(1, level - 1)
        self.blocks = nn.ModuleList(conv_bn_relu(cin if k == 0 else cout, cout) for k in range(n))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
            if self.level > 1:
                x = upsample2x(x)
        return x


def mean_maps(maps: Sequence[torch.Tensor]) -> torch.Tensor:
    first = maps[0]
    for m in maps[1:]:
        _same_shapes(first, m, "aggregate")
    return torch.stack(list(maps), dim=0).sum(dim=0) / len(maps)


class Deo(nn.Module):
    """Upsample every level to stride 4, take the pointwise mean, then a 1x1 conv."""

    def __init__(self, cin: int, cout: int, levels: int = 4):
        super().__init__()
        self.ups = nn.ModuleList(UpsampleLevel(i + 1, cin, cout) for i in range(levels))
        self.fuse = nn.Conv2d(cout, cout, 1)

    def upsample(self, pyramid: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        if len(pyramid) != len(self.ups):
            raise ValueError(f"expected {len(self.ups)} levels, got {len(pyramid)}")
        return [up(x) for up, x in zip(self.ups, pyramid)]

    def aggregate(self, maps: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.fuse(mean_maps(maps))

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.aggregate(self.upsample(pyramid))


class PredictionHead(nn.Module):
    """Fusion conv, one deconv-BN-ReLU, one deconv-BN to a single logit channel."""

    def __init__(self, cin: int, mid: int):
        super().__init__()
        self.fusion = conv_bn_relu(cin, mid)
        half = max(1, mid // 2)
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(mid, half, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(half),
            nn.ReLU(inplace=True),
        )
        self.classify = nn.Sequential(
            nn.ConvTranspose2d(half, 1, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(1),
        )

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify(self.deconv(self.fusion(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))
