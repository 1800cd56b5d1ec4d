"""Step-by-step inference with T-BN folded into the weights.

The engine consumes one ``stride``-sample patch at a time and keeps only the
state the causal network needs: LIF membranes and gates, a ring of the last
``k`` block inputs for topology routing, and a ring of the last
``(K - 1) * d + 1`` mid-block spikes for the dilated TCN.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import torch

from .errors import ConfigurationError, InvalidStateError
from .frontend import fold_tbn_into_conv, tokenize
from .neurons import clamp_residual
from .readout import ExitPolicy, early_exit_decide, warmup_steps


@dataclass
class _FoldedBlock:
    route: torch.Tensor  # [V, V, k] masked kernel, lag-indexed
    proj_w: torch.Tensor
    proj_b: torch.Tensor
    tcn1_w: torch.Tensor  # [H, D, K]
    tcn1_b: torch.Tensor
    tcn2_w: torch.Tensor
    tcn2_b: torch.Tensor
    dilation: int


class StreamingEngine:
    """Folded, causal, one-step-at-a-time view of a frozen :class:`PASNet`."""

    def __init__(self, model):
        if model.training:
            raise InvalidStateError("streaming needs a frozen model (call .eval() first)")
        self.model = model
        self.cfg = model.cfg
        with torch.no_grad():
            self.embed_w, self.embed_b = fold_tbn_into_conv(model.embed.weight, model.embed.bias,
                                                            model.embed.tbn)
            self.blocks = []
            for blk in model.blocks:
                pw, pb = fold_tbn_into_conv(blk.proj_weight, blk.proj_bias, blk.proj_bn)
                w1, b1 = fold_tbn_into_conv(blk.tcn1_weight, blk.tcn1_bias, blk.tcn1_bn)
                w2, b2 = fold_tbn_into_conv(blk.tcn2_weight, blk.tcn2_bias, blk.tcn2_bn)
                self.blocks.append(_FoldedBlock(blk.topo.effective_kernel().detach().clone(),
                                                pw, pb, w1, b1, w2, b2, blk.dilation))
        self.batch = None
        self.t = 0

    def reset(self, batch: int = 1) -> None:
        self.batch = batch
        self.t = 0
        self.stem_state = None
        self.states = [dict.fromkeys(("topo", "mlp1", "mlp2")) for _ in self.blocks]
        self.topo_hist = [deque(maxlen=fb.route.shape[2]) for fb in self.blocks]
        self.mid_hist = [deque(maxlen=(self.cfg.tcn_kernel - 1) * fb.dilation + 1) for fb in self.blocks]

    @staticmethod
    def _lif(node, current, state, gate_input=None):
        if state is None:
            state = node.init_state(current)
        return node.step(current, state, gate_input)

    def step(self, patch, record: bool = False):
        """Advance one token step with a raw ``[B, stride, C_in, V]`` patch; returns ``[B, K]`` logits."""
        if self.batch is None:
            raise InvalidStateError("call reset(batch) before streaming")
        patch = torch.as_tensor(patch).to(self.embed_w.dtype)
        if patch.dim() == 3:
            patch = patch.unsqueeze(0)
        cfg = self.cfg
        if patch.shape != (self.batch, cfg.stride, cfg.in_channels, cfg.nodes):
            raise ConfigurationError(
                f"expected patch [{self.batch}, {cfg.stride}, {cfg.in_channels}, {cfg.nodes}],"
                f" got {tuple(patch.shape)}")
        m = self.model
        tel = {}
        with torch.no_grad():
            tok = tokenize(patch, cfg.stride)[:, 0]  # [B, C_tok, V]
            cur = torch.einsum("bcv,oc->bov", tok, self.embed_w) + self.embed_b.view(1, -1, 1)
            s, self.stem_state = self._lif(m.embed.lif, cur, self.stem_state)
            tel["Stem"] = s
            for l, (blk, fb, st) in enumerate(zip(m.blocks, self.blocks, self.states), start=1):
                s = self._block_step(l - 1, blk, fb, st, s, tel)
            logits = m.classify(s.unsqueeze(1))[:, 0]
        self.t += 1
        return (logits, tel) if record else logits

    def _block_step(self, idx, blk, fb, st, s_in, tel):
        hist = self.topo_hist[idx]
        hist.appendleft(s_in)  # hist[j] holds the input from j steps ago
        i_topo = sum(torch.einsum("vu,bdu->bdv", fb.route[:, :, j], hist[j]) for j in range(len(hist)))
        i_dyn = torch.einsum("bcv,oc->bov", i_topo, fb.proj_w) + fb.proj_b.view(1, -1, 1)
        s_topo, st["topo"] = self._lif(blk.lif_topo, i_dyn, st["topo"], gate_input=s_in)
        s_mid = clamp_residual(s_in, s_topo)

        mid = self.mid_hist[idx]
        mid.appendleft(s_mid)
        i1 = fb.tcn1_b.view(1, -1, 1).expand(s_mid.shape[0], -1, s_mid.shape[2]).clone()
        for k in range(fb.tcn1_w.shape[2]):
            lag = k * fb.dilation
            if lag < len(mid):
                i1 = i1 + torch.einsum("bcv,oc->bov", mid[lag], fb.tcn1_w[:, :, k])
        s1, st["mlp1"] = self._lif(blk.lif_mlp1, i1, st["mlp1"])
        i2 = torch.einsum("bcv,oc->bov", s1, fb.tcn2_w) + fb.tcn2_b.view(1, -1, 1)
        s2, st["mlp2"] = self._lif(blk.lif_mlp2, i2, st["mlp2"])
        s_out = clamp_residual(s_mid, s2)
        l = idx + 1
        tel.update({f"Block{l}_Topo": s_topo, f"Block{l}_MLP1": s1, f"Block{l}_MLP2": s2,
                    f"Block{l}_Out": s_out})
        return s_out

    def run(self, windows) -> torch.Tensor:
        """Stream whole ``[B, T, C_in, V]`` windows; per-step logits ``[B, T', K]``."""
        windows = torch.as_tensor(windows)
        if windows.dim() == 3:
            windows = windows.unsqueeze(0)
        s = self.cfg.stride
        n = windows.shape[1] // s
        if n < 1:
            raise ConfigurationError(f"window length {windows.shape[1]} is shorter than stride {s}")
        self.reset(windows.shape[0])
        return torch.stack([self.step(windows[:, t * s:(t + 1) * s]) for t in range(n)], dim=1)


@dataclass
class StreamResult:
    exit_step: int
    predicted: int
    confidence: float
    seq_len: int
    logits: torch.Tensor  # [exit_step, K], steps actually computed


def stream_with_exit(engine: StreamingEngine, window, policy: ExitPolicy | None = None,
                     t_warm: int | None = None) -> StreamResult:
    """Feed one ``[T, C_in, V]`` window until the exit policy fires; later steps are never computed."""
    cfg = engine.cfg
    policy = policy or cfg.exit_policy()
    window = torch.as_tensor(window)
    s = cfg.stride
    n = window.shape[0] // s
    if n < 1:
        raise ConfigurationError(f"window length {window.shape[0]} is shorter than stride {s}")
    if t_warm is None:
        t_warm = warmup_steps(n, cfg.warmup_ratio)
    engine.reset(1)
    seen = []
    for t in range(1, n + 1):
        logits = engine.step(window[(t - 1) * s:t * s].unsqueeze(0))[0]
        seen.append(logits)
        d = early_exit_decide(logits, policy, t, t_warm, n)
        if d.exit:
            return StreamResult(t, d.predicted, d.confidence, n, torch.stack(seen))
    raise AssertionError("unreachable: policy always exits at the last step")
