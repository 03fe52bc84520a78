"""The assembled Siamese change-detection network."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from hsonet.config import BackboneConfig
from hsonet.decoder import Deo, PredictionHead, branch_diff, fuse_level_diff, skip_concat
from hsonet.encoder import VariantFPN, check_pair, init_weights
from hsonet.fs_relation import FSRelation


@dataclass
class ForwardTrace:
    """Intermediate tensors of one forward pass, for inspection and tests."""

    pyramids: tuple[list[torch.Tensor], list[torch.Tensor]]
    enhanced: tuple[list[torch.Tensor], list[torch.Tensor]]
    scene_vectors: tuple[torch.Tensor, torch.Tensor]
    diffs: list[torch.Tensor]
    aggregated: tuple[torch.Tensor, torch.Tensor]
    change: torch.Tensor
    fused: torch.Tensor
    logits: torch.Tensor


class HSONet(nn.Module):
    """Siamese encoder, relation gating and difference decoder.

    Both images go through the same encoder, relation module and branch
    decoder (shared weights). The multiscale difference path has its own
    decoder parameters.
    """

    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        self.cfg = cfg or BackboneConfig()
        d, c = self.cfg.pyramid_dim, self.cfg.decoder_dim
        self.encoder = VariantFPN(self.cfg)
        self.relation = FSRelation(d)
        self.branch_deo = Deo(d, c)
        self.diff_deo = Deo(d, c)
        self.head = PredictionHead(2 * c, c)
        init_weights(self)

    def _branch(self, x: torch.Tensor):
        pyramid = self.encoder(x)
        enhanced, parts = self.relation(pyramid, return_parts=True)
        return pyramid, enhanced, parts["sv"]

    def trace(self, t1: torch.Tensor, t2: torch.Tensor) -> ForwardTrace:
        check_pair(t1, t2)
        p1, r1, sv1 = self._branch(t1)
        p2, r2, sv2 = self._branch(t2)
        diffs = fuse_level_diff(r1, r2)
        m1 = self.branch_deo(r1)
        m2 = self.branch_deo(r2)
        change = branch_diff(m1, m2)
        fused = skip_concat(change, self.diff_deo(diffs))
        logits = self.head.logits(fused)
        return ForwardTrace((p1, p2), (r1, r2), (sv1, sv2), diffs, (m1, m2), change, fused, logits)

    def forward_logits(self, t1: torch.Tensor, t2: torch.Tensor) -> torch.Tensor:
        return self.trace(t1, t2).logits

    def forward(self, t1: torch.Tensor, t2: torch.Tensor) -> torch.Tensor:
        """Change probability map of shape (B, 1, H, W)."""
        return torch.sigmoid(self.forward_logits(t1, t2))
