"""Learnable symmetric node adjacency and the masked spatiotemporal convolution."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


def symmetrize_mask(logits: torch.Tensor) -> torch.Tensor:
    """``sigmoid((A + A^T) / 2)``, bit-exactly symmetric.

    Vectorised sigmoid kernels can round equal inputs differently depending on
    their position in memory, so the upper triangle is computed and mirrored.
    """
    if logits.dim() != 2 or logits.shape[0] != logits.shape[1]:
        raise ConfigurationError(f"adjacency logits must be square, got {tuple(logits.shape)}")
    upper = torch.triu(torch.sigmoid((logits + logits.T) / 2))
    return upper + torch.triu(upper, diagonal=1).T


def masked_st_conv(spikes: torch.Tensor, kernel: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Causal node-mixing convolution shared across channels.

    ``spikes`` is ``[B, T, D, V]``; ``kernel[v, u, j]`` weights source node ``u``
    into target node ``v`` at lag ``j``; ``mask`` is ``[V, V]``. Returns
    ``I[t] = sum_j (kernel[..., j] * mask) @ S[t - j]`` with zeros for ``t < 0``.
    """
    if spikes.dim() != 4:
        raise ConfigurationError(f"expected [B, T, D, V] spikes, got {tuple(spikes.shape)}")
    B, T, D, V = spikes.shape
    if kernel.dim() != 3 or kernel.shape[:2] != (V, V) or mask.shape != (V, V):
        raise ConfigurationError(
            f"topology kernel {tuple(kernel.shape)} / mask {tuple(mask.shape)} do not match V={V}")
    k = kernel.shape[2]
    eff = (kernel * mask.unsqueeze(-1)).flip(-1)
    x = spikes.permute(0, 2, 3, 1).reshape(B * D, V, T)
    y = F.conv1d(F.pad(x, (k - 1, 0)), eff)
    return y.reshape(B, D, V, T).permute(0, 3, 1, 2)


class TopologyMixer(nn.Module):
    """Per-block adjacency logits ``[V, V]`` and temporal kernel ``[V, V, k]``."""

    def __init__(self, nodes: int, k: int = 5):
        super().__init__()
        if k < 1 or nodes < 1:
            raise ConfigurationError("topology needs k >= 1 and at least one node")
        self.nodes = nodes
        self.k = k
        self.logits = nn.Parameter(torch.zeros(nodes, nodes))
        bound = 1.0 / math.sqrt(nodes * k)
        self.kernel = nn.Parameter(torch.empty(nodes, nodes, k).uniform_(-bound, bound))

    def mask(self) -> torch.Tensor:
        return symmetrize_mask(self.logits)

    def effective_kernel(self) -> torch.Tensor:
        return self.kernel * self.mask().unsqueeze(-1)

    def forward(self, spikes):
        return masked_st_conv(spikes, self.kernel, self.mask())


def mask_matrices(model) -> list[np.ndarray]:
    with torch.no_grad():
        return [blk.topo.mask().detach().cpu().double().numpy() for blk in model.blocks]


def format_matrix(m: np.ndarray) -> str:
    return "".join(" ".join(f"{v:.6g}" for v in row) + "\n" for row in m)


def export_mask_heatmaps(model, out_dir) -> list[Path]:
    """Write ``topo_layer{l}.txt`` (1-based) per block; rows/cols in node order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for l, m in enumerate(mask_matrices(model), start=1):
        p = out / f"topo_layer{l}.txt"
        p.write_text(format_matrix(m))
        paths.append(p)
    return paths


def read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
