"""Siamese residual backbone and the variant FPN producing the per-branch pyramid."""
from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from hsonet.config import BackboneConfig

STRIDES = (4, 8, 16, 32)


class InputShapeError(ValueError):
    pass


def check_image(x: torch.Tensor) -> None:
    """Reject inputs that break the stride-32 contract."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise InputShapeError(f"expected a (B, 3, H, W) tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32 or h == 0 or w == 0:
        raise InputShapeError(f"image height and width must be positive multiples of 32, got {h}x{w}")


def check_pair(t1: torch.Tensor, t2: torch.Tensor) -> None:
    check_image(t1)
    check_image(t2)
    if t1.shape != t2.shape:
        raise InputShapeError(f"bitemporal images differ in shape: {tuple(t1.shape)} vs {tuple(t2.shape)}")


def init_weights(module: nn.Module) -> None:
    """Fan-in scaled uniform init for (de)convolutions and linears, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = m.weight.shape[0] * m.weight[0, 0].numel()
            else:
                fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def conv_bn_relu(cin: int, cout: int, k: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Backbone(nn.Module):
    """Four residual stages at strides 4/8/16/32 after a stride-4 stem."""

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        widths = [int(w) for w in cfg.widths]
        stem_mid = max(1, widths[0] // 2)
        self.stem = nn.Sequential(
            conv_bn_relu(3, stem_mid, 3, stride=2),
            conv_bn_relu(stem_mid, widths[0], 3, stride=2),
        )
        stages = []
        cin = widths[0]
        for i, (w, n) in enumerate(zip(widths, cfg.blocks)):
            blocks = [ResidualBlock(cin, w, stride=1 if i == 0 else 2)]
            blocks += [ResidualBlock(w, w) for _ in range(int(n) - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.widths = tuple(widths)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        check_image(x)
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def build_pyramid(feats: Sequence[torch.Tensor], laterals: Sequence[nn.Module]) -> list[torch.Tensor]:
    """Top-down pass: P4 = lat(F4), P_i = lat(F_i) + nearest_x2(P_{i+1})."""
    if len(feats) != 4 or len(laterals) != 4:
        raise ValueError("expected four stage features and four lateral projections")
    pyramid = [None] * 4
    pyramid[3] = laterals[3](feats[3])
    for i in (2, 1, 0):
        pyramid[i] = laterals[i](feats[i]) + F.interpolate(pyramid[i + 1], scale_factor=2, mode="nearest")
    return pyramid


class VariantFPN(nn.Module):
    """Backbone plus plain 1x1 lateral projections to a shared width ``d``."""

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        self.backbone = Backbone(cfg)
        self.laterals = nn.ModuleList(nn.Conv2d(w, cfg.pyramid_dim, 1) for w in self.backbone.widths)

    def extract_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return build_pyramid(self.backbone(x), self.laterals)
