"""BPTT training: AdamW, warmup + cosine schedule, the epoch loop, and checkpoints.

Reverse-mode differentiation is torch autograd; spike non-linearities carry the
surrogate gradients defined in :mod:`pasnet.neurons`.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .data import WindowDataset
from .errors import ConfigurationError, InvalidStateError, TrainingDiverged, TrainingError
from .frontend import tokenize
from .io import read_tensor_container, write_tensor_container
from .model import PASNet, build_model
from .readout import TseConfig, tse_loss, warmup_steps

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_acc")


@dataclass
class OptimizerState:
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def optimizer_step(params: dict, state: OptimizerState, lr: Optional[float] = None) -> None:
    """Decoupled-weight-decay Adam update applied in place.

    ``params`` maps names to tensors with ``.grad`` populated. Every gradient is
    checked before any parameter moves, so a bad gradient leaves the model intact.
    """
    lr = state.lr if lr is None else lr
    for name, p in params.items():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = state.exp_avg.setdefault(name, torch.zeros_like(p))
            v = state.exp_avg_sq.setdefault(name, torch.zeros_like(p))
            p.mul_(1 - lr * state.weight_decay)
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + state.eps))


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    warmup_epochs: int
    total_epochs: int
    min_lr: float = 1e-7

    def __post_init__(self):
        if self.min_lr <= 0:
            raise ConfigurationError("min_lr must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigurationError("warmup_epochs must be in [0, total_epochs)")


def lr_at(epoch: float, cfg: ScheduleConfig) -> float:
    """Linear ramp from 0 over the warmup, then cosine decay to ``min_lr`` at ``total_epochs``.

    The floor never exceeds the base rate, so ``base_lr = 0`` freezes training.
    """
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs)
    progress = min(max(progress, 0.0), 1.0)
    floor = min(cfg.min_lr, cfg.base_lr)
    return floor + (cfg.base_lr - floor) * (1 + math.cos(math.pi * progress)) / 2


def final_step_accuracy(logits, labels) -> float:
    return float((logits[:, -1].argmax(-1) == torch.as_tensor(labels)).double().mean())


@dataclass
class TrainResult:
    model: PASNet
    metrics: list
    best_epoch: int
    best_val_acc: float
    optimizer: OptimizerState


def _evaluate(model, tok, labels, tse_cfg, t_warm, batch_size):
    model.eval()
    losses, logits = [], []
    with torch.no_grad():
        for i in range(0, len(tok), batch_size):
            out = model.forward_tokens(tok[i:i + batch_size])
            losses.append(float(tse_loss(out, labels[i:i + batch_size], tse_cfg, t_warm)) * len(out))
            logits.append(out)
    logits = torch.cat(logits)
    return sum(losses) / len(tok), final_step_accuracy(logits, labels)


def train(model: PASNet, train_set: WindowDataset, val_set: WindowDataset, cfg: TrainConfig,
          seed: int = 0, metrics_path=None) -> TrainResult:
    """Train with the temporal spike error loss; keeps the peak-validation-accuracy weights.

    Epochs tied on validation accuracy are ranked by validation loss.

    Deterministic for a fixed ``seed`` (data order) and model initialisation.
    Raises :class:`TrainingDiverged` carrying the last good state dict if the
    loss becomes non-finite.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("training and validation sets must be non-empty")
    dtype = model.head_weight.dtype
    mcfg = model.cfg
    tse_cfg = TseConfig(mcfg.warmup_ratio, cfg.weighting, cfg.label_smoothing)
    val_cfg = TseConfig(mcfg.warmup_ratio, cfg.weighting, 0.0)
    t_warm = warmup_steps(mcfg.seq_len, mcfg.warmup_ratio)
    tok_train = tokenize(torch.as_tensor(train_set.windows), mcfg.stride).to(dtype)
    tok_val = tokenize(torch.as_tensor(val_set.windows), mcfg.stride).to(dtype)
    y_train = torch.as_tensor(train_set.labels)
    y_val = torch.as_tensor(val_set.labels)

    sched = ScheduleConfig(cfg.lr, cfg.warmup_epochs, cfg.epochs, cfg.min_lr)
    opt = OptimizerState(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    params = dict(model.named_parameters())
    gen = torch.Generator().manual_seed(seed)
    n = len(tok_train)
    n_batches = math.ceil(n / cfg.batch_size)

    best_acc, best_loss, best_epoch = -1.0, math.inf, 0
    best_state = copy.deepcopy(model.state_dict())
    last_good = best_state
    metrics = []
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        total, lr = 0.0, 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = lr_at(epoch + (b + 1) / n_batches, sched)
            for p in params.values():
                p.grad = None
            loss = tse_loss(model.forward_tokens(tok_train[idx]), y_train[idx], tse_cfg, t_warm)
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}",
                                       checkpoint=last_good, epoch=epoch + 1)
            loss.backward()
            optimizer_step(params, opt, lr)
            total += loss.item() * len(idx)
        val_loss, val_acc = _evaluate(model, tok_val, y_val, val_cfg, t_warm, 256)
        row = {"epoch": epoch + 1, "lr": lr, "train_loss": total / n, "val_loss": val_loss, "val_acc": val_acc}
        metrics.append(row)
        log.info("epoch %d lr %.3g train %.4f val %.4f acc %.4f", *row.values())
        last_good = copy.deepcopy(model.state_dict())
        # peak accuracy wins; among equal accuracies the lower validation loss
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc, best_loss, best_epoch, best_state = val_acc, val_loss, epoch + 1, last_good
    model.load_state_dict(best_state)
    model.eval()
    if metrics_path is not None:
        write_metrics(metrics_path, metrics)
    return TrainResult(model, metrics, best_epoch, best_acc, opt)


def write_metrics(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in metrics:
            w.writerow([r["epoch"], f"{r['lr']:.9g}", f"{r['train_loss']:.9g}",
                        f"{r['val_loss']:.9g}", f"{r['val_acc']:.9g}"])


def gradient_coverage(model: PASNet, windows, labels, tse_cfg: Optional[TseConfig] = None) -> dict:
    """Gradient L2 norm per trainable parameter after one backward pass."""
    tse_cfg = tse_cfg or model.cfg.tse_cfg()
    model.train()
    model.zero_grad(set_to_none=True)
    x = torch.as_tensor(windows).to(model.head_weight.dtype)
    tse_loss(model(x), labels, tse_cfg).backward()
    out = {}
    for name, p in model.named_parameters():
        out[name] = 0.0 if p.grad is None else float(p.grad.norm())
    model.zero_grad(set_to_none=True)
    return out


def save_checkpoint(path, model: PASNet, optimizer: Optional[OptimizerState] = None, **meta) -> None:
    tensors = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    info = {"model_config": model.cfg.__dict__.copy(), **meta}
    if optimizer is not None:
        for k, v in optimizer.exp_avg.items():
            tensors[f"optim.exp_avg.{k}"] = v.detach().cpu().numpy()
        for k, v in optimizer.exp_avg_sq.items():
            tensors[f"optim.exp_avg_sq.{k}"] = v.detach().cpu().numpy()
        info["optimizer"] = {k: getattr(optimizer, k)
                             for k in ("lr", "weight_decay", "beta1", "beta2", "eps", "step")}
    write_tensor_container(path, tensors, info)


def load_checkpoint(path, dtype=torch.float32):
    """Returns ``(model, optimizer_state_or_None, meta)``."""
    tensors, meta = read_tensor_container(path)
    if "model_config" not in meta:
        raise InvalidStateError(f"{path}: checkpoint has no model_config")
    model = build_model(ModelConfig(**meta["model_config"]), dtype=dtype)
    state = {k[len("model."):]: torch.from_numpy(np.array(v)) for k, v in tensors.items()
             if k.startswith("model.")}
    model.load_state_dict({k: v.to(model.state_dict()[k].dtype) for k, v in state.items()})
    model.eval()
    opt = None
    if "optimizer" in meta:
        opt = OptimizerState(**meta["optimizer"])
        for k, v in tensors.items():
            for prefix, slot in (("optim.exp_avg_sq.", opt.exp_avg_sq), ("optim.exp_avg.", opt.exp_avg)):
                if k.startswith(prefix):
                    slot[k[len(prefix):]] = torch.from_numpy(np.array(v)).to(dtype)
                    break
    return model, opt, meta
