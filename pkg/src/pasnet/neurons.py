"""Leaky integrate-and-fire neurons, the EMA neuromodulation gate and surrogate spikes.

All step functions operate on one time slice; :class:`LIFNode` scans them over
the time axis (axis 1 of a ``[B, T, ...]`` tensor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import torch
from torch import nn

from .errors import ConfigurationError

SURROGATES = ("rect", "atan", "smooth")
GATE_POOLS = ("element", "channel_mean")


@dataclass(frozen=True)
class LifConfig:
    tau: float = 0.5
    u_base: float = 1.0
    surrogate: str = "rect"
    width: float = 0.5
    gate_alpha: float = 0.9
    gated: bool = False
    detach_reset: bool = True
    gate_pool: str = "element"
    bptt_window: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if self.u_base <= 0:
            raise ConfigurationError(f"u_base must be positive, got {self.u_base}")
        if not 0.0 < self.gate_alpha < 1.0:
            raise ConfigurationError(f"gate_alpha must lie in (0, 1), got {self.gate_alpha}")
        if self.width <= 0:
            raise ConfigurationError(f"surrogate width must be positive, got {self.width}")
        if self.surrogate not in SURROGATES:
            raise ConfigurationError(f"unknown surrogate {self.surrogate!r}; expected one of {SURROGATES}")
        if self.gate_pool not in GATE_POOLS:
            raise ConfigurationError(f"unknown gate_pool {self.gate_pool!r}")
        if self.bptt_window is not None and self.bptt_window < 1:
            raise ConfigurationError("bptt_window must be >= 1 or None")

    def with_(self, **changes) -> "LifConfig":
        return replace(self, **changes)


@dataclass
class LifState:
    membrane: torch.Tensor
    prev_spike: torch.Tensor
    gate: Optional[torch.Tensor] = None
    threshold: Optional[torch.Tensor] = None

    @classmethod
    def zeros(cls, shape, gated=False, dtype=torch.float32, device=None) -> "LifState":
        z = torch.zeros(shape, dtype=dtype, device=device)
        return cls(z, z.clone(), z.clone() if gated else None)

    def detach(self) -> "LifState":
        d = lambda x: None if x is None else x.detach()
        return LifState(d(self.membrane), d(self.prev_spike), d(self.gate), d(self.threshold))


class _RectSpike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, width):
        ctx.save_for_backward(x)
        ctx.width = width
        return (x >= 0).to(x)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        w = ctx.width
        return grad_output * (x.abs() <= w).to(x) / (2 * w), None


class _AtanSpike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, width):
        ctx.save_for_backward(x)
        ctx.width = width
        return (x >= 0).to(x)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        w = ctx.width
        return grad_output / (math.pi * w * (1 + (x / w) ** 2)), None


def surrogate_grad(u_minus_th: torch.Tensor, cfg: LifConfig) -> torch.Tensor:
    """Pseudo-derivative of the Heaviside used on the backward pass.

    ``rect``: ``1/(2w)`` inside ``|x| <= w``, zero outside. ``atan``: a Cauchy
    bump of scale ``w``. ``smooth``: derivative of ``sigmoid(x/w)``. All
    integrate to one.
    """
    x = torch.as_tensor(u_minus_th)
    w = cfg.width
    if cfg.surrogate == "rect":
        return (x.abs() <= w).to(x.dtype if x.is_floating_point() else torch.float32) / (2 * w)
    if cfg.surrogate == "atan":
        return 1.0 / (math.pi * w * (1 + (x / w) ** 2))
    s = torch.sigmoid(x / w)
    return s * (1 - s) / w


def spike(u_minus_th: torch.Tensor, cfg: LifConfig) -> torch.Tensor:
    """Heaviside ``x >= 0`` forward with the configured surrogate backward.

    The ``smooth`` surrogate replaces the forward itself by ``sigmoid(x/w)``;
    it exists for gradient checking and does not produce binary output.
    """
    if cfg.surrogate == "rect":
        return _RectSpike.apply(u_minus_th, cfg.width)
    if cfg.surrogate == "atan":
        return _AtanSpike.apply(u_minus_th, cfg.width)
    return torch.sigmoid(u_minus_th / cfg.width)


def ema_gate_step(state_gate, input_spikes, alpha):
    """``alpha * gate + (1 - alpha) * spikes``, kept inside [0, 1]."""
    g = alpha * state_gate + (1 - alpha) * input_spikes
    # guards rounding only; the convex combination is already bounded
    return torch.clamp(g, 0.0, 1.0)


def dynamic_threshold(gate, u_base: float):
    return u_base * (2 - gate)


def _integrate(state: LifState, current, cfg: LifConfig):
    reset = 1 - state.prev_spike
    if cfg.detach_reset:
        reset = reset.detach()
    return cfg.tau * state.membrane * reset + current


def dynamic_lif_step(state: LifState, current, cfg: LifConfig, gate_input=None, alpha=None):
    """One step of the gated LIF neuron.

    When ``cfg.gated`` and ``gate_input`` is given, the gate is advanced on
    ``gate_input`` first (same-step index), then the threshold
    ``u_base * (2 - gate)`` is applied. With ``gate_input=None`` the gate held
    in ``state`` is used unchanged.
    """
    gate = state.gate
    if cfg.gated:
        if gate is None:
            raise ConfigurationError("gated neuron requires a gate in its state")
        if gate_input is not None:
            gate = ema_gate_step(gate, gate_input, cfg.gate_alpha if alpha is None else alpha)
        threshold = dynamic_threshold(gate, cfg.u_base)
    else:
        threshold = torch.full_like(current, cfg.u_base)
    u = _integrate(state, current, cfg)
    s = spike(u - threshold, cfg)
    return s, LifState(u, s, gate, threshold)


def static_lif_step(state: LifState, current, cfg: LifConfig):
    u = _integrate(state, current, cfg)
    s = spike(u - cfg.u_base, cfg)
    return s, LifState(u, s, None, None)


def clamp_residual(a, b):
    """Bounded residual: ``clamp(a + b, 0, 1)``, i.e. logical OR on spikes."""
    return torch.clamp(a + b, 0.0, 1.0)


def _logit(p: float) -> float:
    return math.log(p / (1 - p))


class LIFNode(nn.Module):
    """Scans a LIF neuron over ``[B, T, ...]`` currents.

    ``gate_source`` selects what drives the EMA gate of a gated neuron:
    ``"input"`` (an explicit spike stream, the PAS-Block case) or ``"self"``
    (the neuron's own previous output, used by the optional stem gate). The
    decay ``alpha`` is a learnable scalar kept in (0, 1) through a sigmoid.
    """

    def __init__(self, cfg: LifConfig, gate_source: str = "input"):
        super().__init__()
        self.cfg = cfg
        self.gate_source = gate_source
        if cfg.gated:
            self.alpha_logit = nn.Parameter(torch.tensor(_logit(cfg.gate_alpha)))
        else:
            self.register_parameter("alpha_logit", None)

    @property
    def alpha(self):
        return torch.sigmoid(self.alpha_logit) if self.alpha_logit is not None else None

    def init_state(self, like: torch.Tensor) -> LifState:
        return LifState.zeros(like.shape, gated=self.cfg.gated, dtype=like.dtype, device=like.device)

    def _pool(self, g):
        if self.cfg.gate_pool == "channel_mean":
            # channels sit on axis 1 of a per-step [B, D, V] slice
            return g.mean(dim=1, keepdim=True).expand_as(g)
        return g

    def step(self, current, state: LifState, gate_input=None):
        if not self.cfg.gated:
            return static_lif_step(state, current, self.cfg)
        if self.gate_source == "self":
            gate_input = state.prev_spike
        if gate_input is not None:
            gate_input = self._pool(gate_input)
        return dynamic_lif_step(state, current, self.cfg, gate_input, self.alpha)

    def forward(self, current, gate_input=None, return_thresholds=False):
        state = self.init_state(current[:, 0])
        window = self.cfg.bptt_window
        out, thresholds = [], []
        for t in range(current.shape[1]):
            if window is not None and t > 0 and t % window == 0:
                state = state.detach()
            g = gate_input[:, t] if gate_input is not None else None
            s, state = self.step(current[:, t], state, g)
            out.append(s)
            if return_thresholds:
                thresholds.append(state.threshold if state.threshold is not None
                                  else torch.full_like(s, self.cfg.u_base))
        spikes = torch.stack(out, dim=1)
        if return_thresholds:
            return spikes, torch.stack(thresholds, dim=1)
        return spikes
