"""Perceptual frontend: invariant tokenizer, temporal batch norm and spiking embedding."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InputError, InvalidStateError
from .neurons import LIFNode, LifConfig


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr))


def _patches(x: torch.Tensor, stride: int) -> torch.Tensor:
    if stride < 1:
        raise ConfigurationError(f"stride must be a positive integer, got {stride}")
    if x.dim() < 3:
        raise ConfigurationError(f"expected [..., T, C, V] input, got shape {tuple(x.shape)}")
    T, C, V = x.shape[-3:]
    if T < stride:
        raise ConfigurationError(f"window length {T} is shorter than stride {stride}")
    if not torch.isfinite(x).all():
        raise InputError("raw window contains non-finite values")
    n = T // stride
    return x[..., : n * stride, :, :].reshape(*x.shape[:-3], n, stride, C, V)


def magnitude_features(window, stride: int) -> torch.Tensor:
    """Per-triad L2 magnitude statistics ``[..., T', 3*(C/3), V]`` (mean, max, var)."""
    p = _patches(_as_tensor(window), stride)
    C = p.shape[-2]
    if C % 3:
        raise ConfigurationError(f"C_in={C} is not a multiple of 3 (xyz triads)")
    tri = p.reshape(*p.shape[:-2], C // 3, 3, p.shape[-1])
    mag = torch.sqrt((tri * tri).sum(dim=-2))
    return torch.cat([mag.mean(-3), mag.amax(-3), mag.var(-3, unbiased=False)], dim=-2)


def tokenize(window, stride: int) -> torch.Tensor:
    """Non-overlapping patch statistics of a raw IMU window.

    ``window`` is ``[T, C_in, V]`` or batched ``[B, T, C_in, V]``. Output is
    ``[..., T // stride, 4 * C_in, V]`` laid out as per-channel mean, max and
    population variance (``3 * C_in``), then per-xyz-triad magnitude mean,
    max and variance (``C_in``).
    """
    x = _as_tensor(window)
    p = _patches(x, stride)
    if p.shape[-2] % 3:
        raise ConfigurationError(f"C_in={p.shape[-2]} is not a multiple of 3 (xyz triads)")
    per_channel = [p.mean(-3), p.amax(-3), p.var(-3, unbiased=False)]
    return torch.cat(per_channel + [magnitude_features(x, stride)], dim=-2)


def token_channels(c_in: int) -> int:
    return 3 * c_in + 3 * (c_in // 3)


def tbn_forward(x, gamma, beta, running_mean, running_var, training: bool,
                momentum: float = 0.1, eps: float = 1e-5):
    """Batch norm whose statistics pool over batch, time and nodes jointly.

    ``x`` is ``[B, T, C, V]`` (or ``[T, C, V]``); statistics are per channel C.
    In training mode the running buffers are updated in place.
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if not torch.isfinite(x).all():
        raise InputError("non-finite input to temporal batch norm")
    C = x.shape[2]
    if training:
        dims = (0, 1, 3)
        mean = x.mean(dim=dims)
        var = x.var(dim=dims, unbiased=False)
        n = x.numel() // C
        with torch.no_grad():
            unbiased = var.detach() * (n / max(n - 1, 1))
            running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
            running_var.mul_(1 - momentum).add_(momentum * unbiased)
    else:
        mean, var = running_mean, running_var
    shape = (1, 1, C, 1)
    y = gamma.view(shape) * (x - mean.view(shape)) / torch.sqrt(var.view(shape) + eps) + beta.view(shape)
    return y.squeeze(0) if squeeze else y


class TemporalBatchNorm(nn.Module):
    def __init__(self, num_channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        if eps <= 0:
            raise ConfigurationError("eps must be positive")
        if not 0 < momentum < 1:
            raise ConfigurationError("momentum must lie in (0, 1)")
        self.eps = eps
        self.momentum = momentum
        self.gamma = nn.Parameter(torch.ones(num_channels))
        self.beta = nn.Parameter(torch.zeros(num_channels))
        self.register_buffer("running_mean", torch.zeros(num_channels))
        self.register_buffer("running_var", torch.ones(num_channels))

    @property
    def mode(self) -> str:
        return "training" if self.training else "frozen"

    def forward(self, x):
        return tbn_forward(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)


def fold_tbn_into_conv(conv_weights, conv_bias, tbn: TemporalBatchNorm):
    """Fold frozen T-BN statistics into the preceding convolution.

    ``conv_weights`` has the output channel first (any trailing layout).
    Returns ``(weights, bias)`` such that ``conv(x; w', b') == tbn(conv(x; w, b))``.
    """
    if tbn.training:
        raise InvalidStateError("T-BN must be frozen (eval mode) before folding")
    denom = tbn.running_var + tbn.eps
    if (denom <= 0).any():
        raise InvalidStateError("running_var + eps must be positive to fold")
    with torch.no_grad():
        scale = tbn.gamma / torch.sqrt(denom)
        shift = tbn.beta - scale * tbn.running_mean
        w = conv_weights * scale.view(-1, *([1] * (conv_weights.dim() - 1)))
        b = shift if conv_bias is None else scale * conv_bias + shift
    return w.clone(), b.clone()


def channel_project(x, weight, bias=None):
    """Pointwise (kernel 1) conv over the channel axis of ``[B, T, C, V]``."""
    y = torch.einsum("btcv,oc->btov", x, weight)
    if bias is not None:
        y = y + bias.view(1, 1, -1, 1)
    return y


def uniform_init(tensor, fan_in: int):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        tensor.uniform_(-bound, bound)
    return tensor


class SpikingEmbedding(nn.Module):
    """Pointwise projection ``C_tok -> D`` per node, T-BN, then a LIF scan.

    Output is the first spike tensor ``[B, T', D, V]``; nothing downstream
    multiplies activations by weights.
    """

    def __init__(self, c_tok: int, dim: int, lif_cfg: LifConfig, stem_gated: bool = False):
        super().__init__()
        self.c_tok = c_tok
        self.dim = dim
        self.weight = nn.Parameter(uniform_init(torch.empty(dim, c_tok), c_tok))
        self.bias = nn.Parameter(uniform_init(torch.empty(dim), c_tok))
        self.tbn = TemporalBatchNorm(dim)
        self.lif = LIFNode(lif_cfg.with_(gated=stem_gated), gate_source="self")

    def current(self, tok):
        if tok.dim() != 4 or tok.shape[2] != self.c_tok:
            raise ConfigurationError(
                f"spiking embedding expects [B, T', {self.c_tok}, V] tokens, got {tuple(tok.shape)}")
        return self.tbn(channel_project(tok, self.weight, self.bias))

    def forward(self, tok):
        return self.lif(self.current(tok))
