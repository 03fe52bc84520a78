"""Shared test utilities: finite-difference gradient checks and tiny configs."""
from __future__ import annotations

import torch

from hsonet.config import BackboneConfig

TINY = BackboneConfig(widths=(4, 4, 8, 8), blocks=(1, 1, 1, 1), pyramid_dim=4, decoder_dim=4)


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    """Norm-wise relative error between two gradient vectors."""
    den = max(a.norm().item(), b.norm().item(), 1e-300)
    return (a - b).norm().item() / den


def fd_grad(fn, tensor: torch.Tensor, idx, h: float = 1e-6) -> torch.Tensor:
    """Central differences of scalar ``fn()`` w.r.t. the flat entries ``idx`` of ``tensor`` (in place)."""
    flat = tensor.data.view(-1)
    out = torch.empty(len(idx), dtype=torch.float64)
    for k, i in enumerate(idx):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn())
        flat[i] = orig - h
        down = float(fn())
        flat[i] = orig
        out[k] = (up - down) / (2 * h)
    return out


def sample_idx(tensor: torch.Tensor, n: int, gen: torch.Generator) -> list[int]:
    numel = tensor.numel()
    if numel <= n:
        return list(range(numel))
    return torch.randperm(numel, generator=gen)[:n].tolist()
