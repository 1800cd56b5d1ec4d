"""Synthetic multi-node IMU data, subject-independent splitting, and classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError
from .io import read_manifest, read_window, write_manifest, write_window_bin

SPLITS = ("train", "val", "test")


@dataclass
class WindowDataset:
    windows: np.ndarray  # [N, T, C_in, V] float32
    labels: np.ndarray  # [N] int64
    subjects: np.ndarray  # [N] int64

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowDataset(self.windows[idx], self.labels[idx], self.subjects[idx])


def class_frequencies(classes: int) -> np.ndarray:
    return np.linspace(1.0, 4.0, classes)


def active_nodes(cls: int, nodes: int) -> np.ndarray:
    """Class-specific non-empty node subset, as a boolean mask."""
    bits = cls % (2 ** nodes - 1) + 1
    return np.array([(bits >> v) & 1 for v in range(nodes)], dtype=bool)


def generate_synthetic(classes: int = 4, samples_per_class: int = 200, T: int = 128,
                       in_channels: int = 6, nodes: int = 3, seed: int = 0,
                       sample_rate: float = 50.0, noise: float = 0.1,
                       n_subjects: int = 20) -> WindowDataset:
    """Balanced oscillation-pattern dataset.

    Each class has its own frequency (evenly spaced in 1-4 Hz), fixed per-node
    phase offsets, and an active node subset driven at full amplitude (the rest
    at 0.2). Every window gets a random global phase, a per-subject gain in
    [0.8, 1.2], and Gaussian noise with ``sigma = noise * amplitude``.
    """
    if classes < 2:
        raise ConfigurationError("need at least two classes")
    if samples_per_class < 1 or T < 1 or in_channels < 1 or nodes < 1:
        raise ConfigurationError("dataset dimensions must be positive")
    rng = np.random.default_rng(seed)
    freqs = class_frequencies(classes)
    node_phase = rng.uniform(0, 2 * math.pi, size=(classes, nodes))
    gains = rng.uniform(0.8, 1.2, size=n_subjects)
    t = np.arange(T) / sample_rate
    chan_phase = np.arange(in_channels) * math.pi / in_channels

    N = classes * samples_per_class
    windows = np.empty((N, T, in_channels, nodes), dtype=np.float32)
    labels = np.repeat(np.arange(classes), samples_per_class)
    subjects = np.tile(np.arange(samples_per_class) % n_subjects, classes)
    for i, (k, s) in enumerate(zip(labels, subjects)):
        amp = np.where(active_nodes(k, nodes), 1.0, 0.2) * gains[s]
        psi = rng.uniform(0, 2 * math.pi)
        arg = (2 * math.pi * freqs[k] * t[:, None, None] + chan_phase[None, :, None]
               + node_phase[k][None, None, :] + psi)
        x = amp[None, None, :] * np.sin(arg)
        if noise > 0:
            x = x + rng.normal(0.0, noise, size=x.shape) * amp[None, None, :]
        windows[i] = x
    return WindowDataset(windows, labels.astype(np.int64), subjects.astype(np.int64))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_subject_independent(subject_ids, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> dict:
    """Partition sample indices by subject id into train/val/test.

    Returns ``{"train": idx, "val": idx, "test": idx, "subjects": {split: ids}}``.
    """
    subject_ids = np.asarray(subject_ids)
    uniq = np.unique(subject_ids)
    n = len(uniq)
    if n < 3:
        raise ConfigurationError(f"subject-independent split needs >= 3 subjects, got {n}")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("fractions must be three values summing to 1")
    n_val = max(1, _round_half_up(fractions[1] * n))
    n_test = max(1, _round_half_up(fractions[2] * n))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ConfigurationError("too few subjects left for training")
    order = np.random.default_rng(seed).permutation(uniq)
    groups = {"train": order[:n_train], "val": order[n_train:n_train + n_val],
              "test": order[n_train + n_val:]}
    out = {name: np.flatnonzero(np.isin(subject_ids, ids)) for name, ids in groups.items()}
    out["subjects"] = {name: np.sort(ids) for name, ids in groups.items()}
    return out


def confusion_matrix(y_true, y_pred, classes: int) -> np.ndarray:
    m = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


def macro_f1(y_true, y_pred, classes: int) -> float:
    """Unweighted mean of per-class F1; a class with no true and no predicted samples scores 0."""
    m = confusion_matrix(y_true, y_pred, classes)
    tp = np.diag(m).astype(float)
    denom = 2 * tp + (m.sum(0) - tp) + (m.sum(1) - tp)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def save_dataset(out_dir, ds: WindowDataset, splits: dict | None = None) -> Path:
    """Write one binary window file per sample plus ``manifest.csv``."""
    out = Path(out_dir)
    (out / "windows").mkdir(parents=True, exist_ok=True)
    split_of = np.full(len(ds), "train", dtype=object)
    if splits is not None:
        for name in SPLITS:
            split_of[splits[name]] = name
    entries = []
    for i in range(len(ds)):
        rel = f"windows/w{i:05d}.bin"
        write_window_bin(out / rel, ds.windows[i])
        entries.append((rel, int(ds.labels[i]), int(ds.subjects[i]), split_of[i]))
    manifest = out / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest


def load_dataset(manifest_path, in_channels: int, nodes: int, split: str | None = None) -> WindowDataset:
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    if split is not None:
        rows = [r for r in rows if r["split"] == split]
    if not rows:
        raise InputError(f"{manifest_path}: no windows" + (f" in split {split!r}" if split else ""))
    windows = [read_window(manifest_path.parent / r["path"], in_channels, nodes) for r in rows]
    shapes = {w.shape for w in windows}
    if len(shapes) != 1:
        raise InputError(f"{manifest_path}: windows have mixed shapes {sorted(shapes)}")
    raw_ids = [r["subject_id"] for r in rows]
    if all(i.lstrip("-").isdigit() for i in raw_ids):
        subjects = np.array([int(i) for i in raw_ids], dtype=np.int64)
    else:
        subjects = np.unique(raw_ids, return_inverse=True)[1].astype(np.int64)
    labels = np.array([r["label"] for r in rows], dtype=np.int64)
    return WindowDataset(np.stack(windows), labels, subjects)
