"""Spatial pooling, temporal spike error loss, and confidence-driven early exit."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputError


def spatial_pool(x: torch.Tensor) -> torch.Tensor:
    """Mean over nodes plus max over nodes: ``[..., D, V] -> [..., D]``."""
    if x.shape[-1] < 1:
        raise ConfigurationError("spatial pooling needs at least one node")
    return x.mean(dim=-1) + x.amax(dim=-1)


@dataclass(frozen=True)
class TseConfig:
    warmup_ratio: float = 0.2
    weighting: str = "uniform"
    label_smoothing: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ConfigurationError("warmup_ratio must lie in [0, 1]")
        if self.weighting not in ("uniform", "linear"):
            raise ConfigurationError(f"unknown TSE weighting {self.weighting!r}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must lie in [0, 1)")


def warmup_steps(seq_len: int, ratio: float) -> int:
    t_warm = int(math.floor(ratio * seq_len))
    return min(t_warm, seq_len - 1)


def tse_weights(seq_len: int, t_warm: int, weighting: str = "uniform", dtype=torch.float32):
    """Per-step weights, zero on the first ``t_warm`` steps.

    ``linear`` ramps from ``1/(T'-t_warm)`` on the first supervised step up to 1.
    """
    if not 0 <= t_warm < seq_len:
        raise ConfigurationError(f"warmup steps {t_warm} must be < sequence length {seq_len}")
    w = torch.zeros(seq_len, dtype=dtype)
    n = seq_len - t_warm
    if weighting == "uniform":
        w[t_warm:] = 1.0
    elif weighting == "linear":
        w[t_warm:] = torch.arange(1, n + 1, dtype=dtype) / n
    else:
        raise ConfigurationError(f"unknown TSE weighting {weighting!r}")
    return w


def tse_reduce(ce_per_step: torch.Tensor, t_warm: int, weighting: str = "uniform"):
    """Normalised weighted mean over steps of ``[..., T']`` per-step losses."""
    w = tse_weights(ce_per_step.shape[-1], t_warm, weighting, ce_per_step.dtype)
    return (ce_per_step * w).sum(-1) / w.sum()


def tse_loss(logits: torch.Tensor, labels, cfg: TseConfig, t_warm: Optional[int] = None):
    """Temporal spike error over ``[B, T', K]`` (or ``[T', K]``) logits, batch-averaged."""
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    B, T, K = logits.shape
    if t_warm is None:
        t_warm = warmup_steps(T, cfg.warmup_ratio)
    if t_warm >= T:
        raise ConfigurationError(f"warmup steps {t_warm} must be < sequence length {T}")
    ce = F.cross_entropy(
        logits.reshape(B * T, K), labels.repeat_interleave(T),
        reduction="none", label_smoothing=cfg.label_smoothing,
    ).reshape(B, T)
    return tse_reduce(ce, t_warm, cfg.weighting).mean()


@dataclass(frozen=True)
class ExitPolicy:
    confidence_threshold: float = 0.9
    metric: str = "max_softmax"

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ConfigurationError("confidence_threshold must lie in (0, 1]")
        if self.metric != "max_softmax":
            raise ConfigurationError(f"unsupported exit metric {self.metric!r}")


@dataclass(frozen=True)
class ExitDecision:
    exit: bool
    predicted: int
    confidence: float


def early_exit_decide(logits_step, policy: ExitPolicy, t: int, t_warm: int, seq_len: int) -> ExitDecision:
    """Decide at 1-based step ``t`` whether to stop streaming.

    Never exits while ``t <= t_warm``; exits when the max softmax probability
    reaches the threshold; always exits at ``t == seq_len``.
    """
    if t < 1:
        raise ConfigurationError("steps are 1-based")
    p = torch.softmax(torch.as_tensor(logits_step, dtype=torch.float64).reshape(-1), dim=0)
    conf, cls = p.max(dim=0)
    conf = float(conf)
    if t >= seq_len:
        stop = True
    elif t <= t_warm:
        stop = False
    else:
        stop = conf >= policy.confidence_threshold
    return ExitDecision(stop, int(cls), conf)


def first_exit(logits_seq, policy: ExitPolicy, t_warm: int):
    """Scan ``[T', K]`` logits; returns ``(exit_step, decision)`` with 1-based step."""
    seq_len = logits_seq.shape[0]
    for t in range(1, seq_len + 1):
        d = early_exit_decide(logits_seq[t - 1], policy, t, t_warm, seq_len)
        if d.exit:
            return t, d
    raise AssertionError("unreachable: policy always exits at the last step")


def accuracy_curve(logits: torch.Tensor, labels) -> np.ndarray:
    """Per-step accuracy of ``argmax(logits[:, t])`` for ``[N, T', K]`` logits."""
    labels = torch.as_tensor(labels).reshape(-1, 1)
    return (logits.argmax(-1) == labels).double().mean(0).cpu().numpy()


def relative_peak_exit(curve: np.ndarray, fraction: float = 0.995) -> int:
    """Earliest 1-based step whose accuracy reaches ``fraction`` of the peak."""
    target = fraction * float(np.max(curve))
    return int(np.argmax(curve >= target - 1e-12)) + 1


def cumulative_accuracy_curve(model, windows, labels, batch_size: int = 256):
    """Step-by-step accuracy over a dataset and the offline 99.5%-of-peak exit step."""
    windows = torch.as_tensor(windows)
    if len(windows) == 0:
        raise InputError("cumulative accuracy needs a non-empty dataset")
    logits = predict_logits(model, windows, batch_size)
    curve = accuracy_curve(logits, labels)
    return curve, relative_peak_exit(curve)


def predict_logits(model, windows, batch_size: int = 256) -> torch.Tensor:
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            out.append(model(torch.as_tensor(windows[i:i + batch_size]).to(dtype)))
    model.train(was_training)
    return torch.cat(out)


TRACE_COLUMNS = ("sample_id", "exit_step", "predicted_class", "true_class",
                 "confidence_at_exit", "energy_saved_fraction")


def write_exit_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r["sample_id"], r["exit_step"], r["predicted_class"], r["true_class"],
                        f"{r['confidence_at_exit']:.6f}", f"{r['energy_saved_fraction']:.6f}"])


def read_exit_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
