"""Small factories shared by the tests."""

from __future__ import annotations

import torch

from pasnet.config import ModelConfig
from pasnet.model import build_model


def random_model(seed: int, dtype=torch.float64, calibrate: bool = True, **overrides):
    """Small random network; optionally runs one training-mode pass so T-BN stats are non-trivial."""
    g = torch.Generator().manual_seed(1000 + seed)
    base = dict(embed_dim=8 + 4 * (seed % 3), depth=1 + seed % 3, window=48, nodes=2 + seed % 2,
                in_channels=3 * (1 + seed % 2), classes=3, mlp_ratio=1.5 + 0.5 * (seed % 2),
                gate_pool="channel_mean" if seed % 4 == 3 else "element", seed=seed)
    base.update(overrides)
    cfg = ModelConfig(**base)
    model = build_model(cfg, dtype)
    x = random_windows(cfg, 4, g, dtype)
    if calibrate:
        model.train()
        with torch.no_grad():
            model(x)
    model.eval()
    return model, x


def random_windows(cfg: ModelConfig, n: int, generator, dtype=torch.float64):
    return 2.0 * torch.randn(n, cfg.window, cfg.in_channels, cfg.nodes, generator=generator, dtype=dtype)
