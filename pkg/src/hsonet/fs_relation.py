"""Foreground-scene relation: scene vector, per-pixel relation maps, sigmoid gating."""
from __future__ import annotations

from typing import Sequence

import torch
from torch import nn


def projection(d_in: int, d_out: int) -> nn.Sequential:
    """1x1 conv -> BN -> ReLU, used for both the projection and the re-encoder."""
    return nn.Sequential(
        nn.Conv2d(d_in, d_out, 1, bias=False),
        nn.BatchNorm2d(d_out),
        nn.ReLU(inplace=True),
    )


class SceneEncoder(nn.Module):
    """Global average pool of the deepest level followed by a linear map to length d."""

    def __init__(self, d_in: int, d: int):
        super().__init__()
        self.fc = nn.Linear(d_in, d)

    def forward(self, p4: torch.Tensor) -> torch.Tensor:
        return self.fc(p4.mean(dim=(2, 3)))


def relation_map(sv: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Channelwise inner product of the scene vector with every pixel of ``q``.

    sv: (B, d), q: (B, d, H, W) -> (B, 1, H, W)
    """
    if sv.dim() != 2 or q.dim() != 4 or sv.shape[0] != q.shape[0] or sv.shape[1] != q.shape[1]:
        raise ValueError(f"scene vector {tuple(sv.shape)} does not match feature map {tuple(q.shape)}")
    return torch.einsum("bc,bchw->bhw", sv, q).unsqueeze(1)


def enhance(e: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Gate re-encoded features ``e`` by sigmoid(r), broadcast over channels."""
    if r.dim() == 3:
        r = r.unsqueeze(1)
    if r.shape[0] != e.shape[0] or r.shape[1] != 1 or r.shape[-2:] != e.shape[-2:]:
        raise ValueError(f"relation map {tuple(r.shape)} does not match features {tuple(e.shape)}")
    return e * torch.sigmoid(r)


class FSRelation(nn.Module):
    """Applies the relation gate to all four pyramid levels of one branch.

    Each level has its own projection and re-encoder; the scene vector is
    computed once per image and shared by all levels.
    """

    def __init__(self, d: int, levels: int = 4):
        super().__init__()
        self.scene = SceneEncoder(d, d)
        self.project = nn.ModuleList(projection(d, d) for _ in range(levels))
        self.reencode = nn.ModuleList(projection(d, d) for _ in range(levels))

    def project_features(self, pyramid: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        return [v(p) for v, p in zip(self.project, pyramid)]

    def scene_vector(self, p4: torch.Tensor) -> torch.Tensor:
        return self.scene(p4)

    def forward(self, pyramid: Sequence[torch.Tensor], return_parts: bool = False):
        sv = self.scene(pyramid[-1])
        qs = self.project_features(pyramid)
        rs = [relation_map(sv, q) for q in qs]
        out = [enhance(eps(p), r) for eps, p, r in zip(self.reencode, pyramid, rs)]
        if return_parts:
            return out, {"sv": sv, "q": qs, "r": rs}
        return out

