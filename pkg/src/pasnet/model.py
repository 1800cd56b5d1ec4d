"""The full network: tokenizer -> spiking embedding -> PAS-Blocks -> per-step classifier."""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .errors import ConfigurationError
from .frontend import SpikingEmbedding, tokenize, uniform_init
from .pasblock import BlockConfig, PASBlock, stack_forward
from .readout import spatial_pool


class PASNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        lif = cfg.lif_cfg()
        self.embed = SpikingEmbedding(cfg.token_channels, cfg.embed_dim, lif, stem_gated=cfg.stem_gated)
        self.blocks = nn.ModuleList(
            PASBlock(BlockConfig(l, cfg.embed_dim, cfg.nodes, cfg.seq_len, cfg.tcn_kernel,
                                 cfg.topo_kernel, cfg.mlp_ratio, lif))
            for l in range(1, cfg.depth + 1)
        )
        self.head_weight = nn.Parameter(uniform_init(torch.empty(cfg.classes, cfg.embed_dim), cfg.embed_dim))
        self.head_bias = nn.Parameter(uniform_init(torch.empty(cfg.classes), cfg.embed_dim))

    def tokens(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[2:] != (self.cfg.in_channels, self.cfg.nodes):
            raise ConfigurationError(
                f"expected raw windows [B, T, {self.cfg.in_channels}, {self.cfg.nodes}], got {tuple(x.shape)}")
        return tokenize(x, self.cfg.stride).to(self.head_weight.dtype)

    def classify(self, s):
        return spatial_pool(s) @ self.head_weight.T + self.head_bias

    def forward_tokens(self, tok, record: bool = False):
        s0 = self.embed(tok)
        if record:
            s, tel = stack_forward(s0, list(self.blocks), record=True)
            return self.classify(s), {"stem": s0, "blocks": tel}
        return self.classify(stack_forward(s0, list(self.blocks)))

    def forward(self, x, record: bool = False):
        """Raw ``[B, T, C_in, V]`` windows to per-step logits ``[B, T', K]``."""
        return self.forward_tokens(self.tokens(x), record=record)


def build_model(cfg: ModelConfig, dtype=torch.float32) -> PASNet:
    """Deterministic initialisation from ``cfg.seed``."""
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        model = PASNet(cfg)
    return model.to(dtype)


def layer_tensors(record: dict) -> dict[str, torch.Tensor]:
    """Flatten recorded spikes into named layers (``Stem``, ``Block1_Topo`` ...)."""
    out = {"Stem": record["stem"]}
    names = {"topo": "Topo", "mlp1": "MLP1", "mlp2": "MLP2", "out": "Out"}
    for l, tel in enumerate(record["blocks"], start=1):
        for key, label in names.items():
            out[f"Block{l}_{label}"] = tel[key]
    return out
