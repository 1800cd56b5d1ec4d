"""Physics-aware spiking block: topology routing + dynamic LIF, then a spiking dilated TCN."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError
from .frontend import TemporalBatchNorm, channel_project, uniform_init
from .neurons import LIFNode, LifConfig, clamp_residual
from .topology import TopologyMixer


def dilated_causal_conv(spikes, weight, dilation: int = 1, bias=None):
    """``I[t] = sum_k weight[..., k] @ S[t - k*d]`` along time, zero-padded on the left.

    ``spikes`` is ``[B, T, C_in, V]``, ``weight`` is ``[C_out, C_in, K]`` indexed by
    lag. Nodes are independent; channels are mixed.
    """
    if dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {dilation}")
    if weight.dim() != 3 or weight.shape[1] != spikes.shape[2]:
        raise ConfigurationError(
            f"conv weight {tuple(weight.shape)} does not match input channels {spikes.shape[2]}")
    B, T, C, V = spikes.shape
    K = weight.shape[2]
    x = spikes.permute(0, 3, 2, 1).reshape(B * V, C, T)
    y = F.conv1d(F.pad(x, ((K - 1) * dilation, 0)), weight.flip(-1), bias, dilation=dilation)
    return y.reshape(B, V, -1, T).permute(0, 3, 2, 1)


def effective_dilation(layer_index: int, seq_len: int, kernel: int) -> int:
    """``2**(l-1)`` capped so the receptive field does not run far past the window."""
    return max(1, min(2 ** (layer_index - 1), seq_len // kernel))


@dataclass
class BlockConfig:
    layer_index: int
    embed_dim: int
    nodes: int
    seq_len: int
    tcn_kernel: int = 3
    topo_kernel: int = 5
    mlp_ratio: float = 2.0
    lif_cfg: LifConfig = field(default_factory=LifConfig)

    def __post_init__(self):
        if self.layer_index < 1:
            raise ConfigurationError("layer_index is 1-based")
        if self.tcn_kernel < 1 or self.topo_kernel < 1:
            raise ConfigurationError("kernel sizes must be >= 1")
        if self.mlp_ratio <= 0:
            raise ConfigurationError("mlp_ratio must be positive")

    @property
    def dilation(self) -> int:
        return effective_dilation(self.layer_index, self.seq_len, self.tcn_kernel)

    @property
    def hidden(self) -> int:
        return max(1, int(round(self.mlp_ratio * self.embed_dim)))


class PASBlock(nn.Module):
    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        D, H, K = cfg.embed_dim, cfg.hidden, cfg.tcn_kernel
        self.dilation = cfg.dilation
        self.topo = TopologyMixer(cfg.nodes, cfg.topo_kernel)
        self.proj_weight = nn.Parameter(uniform_init(torch.empty(D, D), D))
        self.proj_bias = nn.Parameter(uniform_init(torch.empty(D), D))
        self.proj_bn = TemporalBatchNorm(D)
        self.lif_topo = LIFNode(cfg.lif_cfg.with_(gated=True), gate_source="input")
        self.tcn1_weight = nn.Parameter(uniform_init(torch.empty(H, D, K), D * K))
        self.tcn1_bias = nn.Parameter(uniform_init(torch.empty(H), D * K))
        self.tcn1_bn = TemporalBatchNorm(H)
        self.lif_mlp1 = LIFNode(cfg.lif_cfg.with_(gated=False))
        self.tcn2_weight = nn.Parameter(uniform_init(torch.empty(D, H), H))
        self.tcn2_bias = nn.Parameter(uniform_init(torch.empty(D), H))
        self.tcn2_bn = TemporalBatchNorm(D)
        self.lif_mlp2 = LIFNode(cfg.lif_cfg.with_(gated=False))

    def forward(self, s_in, record: bool = False):
        if s_in.dim() != 4 or s_in.shape[2:] != (self.cfg.embed_dim, self.cfg.nodes):
            raise ConfigurationError(
                f"block {self.cfg.layer_index} expects [B, T, {self.cfg.embed_dim}, {self.cfg.nodes}]"
                f" spikes, got {tuple(s_in.shape)}")
        i_topo = self.topo(s_in)
        i_dyn = self.proj_bn(channel_project(i_topo, self.proj_weight, self.proj_bias))
        s_topo = self.lif_topo(i_dyn, gate_input=s_in)
        s_mid = clamp_residual(s_in, s_topo)

        i_mlp1 = self.tcn1_bn(dilated_causal_conv(s_mid, self.tcn1_weight, self.dilation, self.tcn1_bias))
        s_mlp1 = self.lif_mlp1(i_mlp1)
        i_mlp2 = self.tcn2_bn(channel_project(s_mlp1, self.tcn2_weight, self.tcn2_bias))
        s_mlp2 = self.lif_mlp2(i_mlp2)
        s_out = clamp_residual(s_mid, s_mlp2)
        if record:
            return s_out, {"topo": s_topo, "mid": s_mid, "mlp1": s_mlp1, "mlp2": s_mlp2, "out": s_out}
        return s_out


def stack_forward(s0, blocks, record: bool = False):
    """Run blocks in sequence; with ``record`` also return per-layer spike tensors."""
    if len(blocks) < 1:
        raise ConfigurationError("need at least one PAS-Block")
    s, telemetry = s0, []
    for blk in blocks:
        if record:
            s, tel = blk(s, record=True)
            telemetry.append(tel)
        else:
            s = blk(s)
    return (s, telemetry) if record else s
