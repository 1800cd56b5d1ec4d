"""Operation counting, firing-rate telemetry and picojoule energy estimates.

Dense layers are billed per multiply-accumulate at ``e_mac``; spike-driven
layers per synaptic operation (one weight fetch plus add triggered by a spike)
at ``e_ac``. Neuron bookkeeping (leak, gate EMA, residual clamp) is tallied in a
separate overhead column and never billed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import ConfigurationError, InvalidStateError
from .model import layer_tensors

E_MAC_PJ = 4.6
E_AC_PJ = 0.1
DOMAINS = ("continuous_stem", "spiking_core")
N_SEGMENTS = 8

_WEIGHTED = ("conv", "linear", "masked_st_conv", "route")
_ELEMENTWISE = ("lif", "ema", "clamp")


@dataclass(frozen=True)
class LayerSpec:
    """Shape description of one layer for dense counting.

    ``positions`` is the number of output sites sharing the weights (e.g.
    ``T' * V`` for a per-node conv); ``in_features``/``out_features`` the channel
    counts at each site and ``kernel`` the number of temporal taps. Element-wise
    kinds use ``positions * out_features`` as the element count.
    """

    kind: str
    positions: int
    in_features: int = 1
    out_features: int = 1
    kernel: int = 1


def count_layer_flops(spec: LayerSpec) -> int:
    """MAC-equivalent count: ``out_elements * fan_in``; element-wise kinds count adds."""
    if spec.kind not in _WEIGHTED + _ELEMENTWISE:
        raise ConfigurationError(f"unknown layer kind {spec.kind!r}")
    dims = (spec.positions, spec.in_features, spec.out_features, spec.kernel)
    if min(dims) < 0:
        raise ConfigurationError(f"negative layer dimension in {spec}")
    if spec.kind in _ELEMENTWISE:
        return spec.positions * spec.out_features
    return spec.positions * spec.out_features * spec.in_features * spec.kernel


@dataclass
class LayerCost:
    name: str
    domain: str
    flops_dense: int
    firing_rate: float = 1.0
    sops: Optional[float] = None
    overhead_adds: int = 0

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigurationError(f"layer {self.name!r}: domain must be one of {DOMAINS}")
        if not 0.0 <= self.firing_rate <= 1.0:
            raise ConfigurationError(f"layer {self.name!r}: firing rate {self.firing_rate} outside [0, 1]")
        if self.domain == "spiking_core" and self.sops is None:
            self.sops = self.flops_dense * self.firing_rate
        if self.sops is not None and self.sops > self.flops_dense:
            raise ConfigurationError(f"layer {self.name!r}: SOPs exceed dense FLOPs")

    def energy_pj(self, e_mac: float = E_MAC_PJ, e_ac: float = E_AC_PJ) -> float:
        if self.domain == "continuous_stem":
            return self.flops_dense * e_mac
        return self.sops * e_ac


@dataclass
class EnergyReport:
    e_mac_pj: float
    e_ac_pj: float
    stem_pj: float
    core_pj: float
    dnn_pj: float
    layers: list = field(default_factory=list)  # (LayerCost, pJ)

    @property
    def total_pj(self) -> float:
        return self.stem_pj + self.core_pj

    @property
    def total_uj(self) -> float:
        return self.total_pj * 1e-6

    @property
    def dnn_uj(self) -> float:
        return self.dnn_pj * 1e-6

    @property
    def sops(self) -> float:
        return sum(c.sops for c, _ in self.layers if c.domain == "spiking_core")

    @property
    def stem_flops(self) -> int:
        return sum(c.flops_dense for c, _ in self.layers if c.domain == "continuous_stem")


def estimate_energy(costs, e_mac: float = E_MAC_PJ, e_ac: float = E_AC_PJ) -> EnergyReport:
    """Stem MACs at ``e_mac``, core SOPs at ``e_ac``, plus the all-dense baseline."""
    if e_mac < 0 or e_ac < 0:
        raise ConfigurationError("energy constants must be non-negative")
    layers = [(c, c.energy_pj(e_mac, e_ac)) for c in costs]
    stem = sum(e for c, e in layers if c.domain == "continuous_stem")
    core = sum(e for c, e in layers if c.domain == "spiking_core")
    dnn = sum(c.flops_dense for c in costs) * e_mac
    return EnergyReport(e_mac, e_ac, stem, core, dnn, layers)


def dnn_energy_pj(flops: float, e_mac: float = E_MAC_PJ) -> float:
    return flops * e_mac


def energy_saved_by_exit(seq_len: int, exit_step: int) -> float:
    """Fraction of per-step dynamic energy skipped by stopping at ``exit_step``."""
    if seq_len < 1 or not 1 <= exit_step <= seq_len:
        raise ConfigurationError(f"need 1 <= exit_step <= T', got exit_step={exit_step}, T'={seq_len}")
    return (seq_len - exit_step) / seq_len


# -- exact event counting ---------------------------------------------------

def valid_taps(seq_len: int, lags) -> np.ndarray:
    """Per source step ``t``: how many lags still land inside the window (``t + lag < T'``)."""
    t = np.arange(seq_len)[:, None]
    return (t + np.asarray(lags)[None, :] < seq_len).sum(1)


def event_sops(spikes: torch.Tensor, fan_out: int, lags) -> int:
    """Accumulations triggered by ``[B, T, C, V]`` spikes, summed over the batch.

    Every spike at step ``t`` drives ``fan_out`` targets through each lag whose
    destination ``t + lag`` is inside the window.
    """
    counts = spikes.detach().sum(dim=(0, 2, 3)).double().cpu().numpy()
    return int(round(float(counts @ valid_taps(spikes.shape[1], lags)))) * fan_out


def model_layer_specs(model) -> list[tuple[str, str, LayerSpec]]:
    """``(name, domain, spec)`` for every weighted layer of one inference."""
    cfg = model.cfg
    T, V, D = cfg.seq_len, cfg.nodes, cfg.embed_dim
    out = [("Stem_Embed", "continuous_stem", LayerSpec("conv", T * V, cfg.token_channels, D))]
    for l, blk in enumerate(model.blocks, start=1):
        H, k = blk.cfg.hidden, blk.topo.k
        out += [
            # node mixing and channel projection fused: D*V inputs x k taps -> D*V outputs
            (f"Block{l}_Route", "spiking_core", LayerSpec("route", T, D * V, D * V, k)),
            (f"Block{l}_MLP1", "spiking_core", LayerSpec("conv", T * V, D, H, blk.cfg.tcn_kernel)),
            (f"Block{l}_MLP2", "spiking_core", LayerSpec("conv", T * V, H, D)),
        ]
    out.append(("Head", "continuous_stem", LayerSpec("linear", T, D, cfg.classes)))
    return out


def _overhead(model) -> dict[str, int]:
    """Element-wise adds per inference, attributed to the layer whose neurons they update."""
    cfg = model.cfg
    T, V, D = cfg.seq_len, cfg.nodes, cfg.embed_dim
    ew = lambda kind, ch: count_layer_flops(LayerSpec(kind, T * V, out_features=ch))  # noqa: E731
    out = {"Stem_Embed": ew("lif", D) + (ew("ema", D) if cfg.stem_gated else 0), "Head": 0}
    for l, blk in enumerate(model.blocks, start=1):
        H = blk.cfg.hidden
        out[f"Block{l}_Route"] = ew("lif", D) + ew("ema", D) + ew("clamp", D)
        out[f"Block{l}_MLP1"] = ew("lif", H)
        out[f"Block{l}_MLP2"] = ew("lif", D) + ew("clamp", D)
    return out


def _inputs_and_taps(model, record) -> dict[str, tuple]:
    """Pre-synaptic spikes, fan-out per spike per tap, and tap lags for each core layer."""
    out = {}
    s_in = record["stem"]
    D, V = model.cfg.embed_dim, model.cfg.nodes
    for l, (blk, tel) in enumerate(zip(model.blocks, record["blocks"]), start=1):
        H, K, d = blk.cfg.hidden, blk.cfg.tcn_kernel, blk.dilation
        out[f"Block{l}_Route"] = (s_in, D * V, range(blk.topo.k))
        out[f"Block{l}_MLP1"] = (tel["mid"], H, [j * d for j in range(K)])
        out[f"Block{l}_MLP2"] = (tel["mlp1"], D, [0])
        s_in = tel["out"]
    return out


@dataclass
class ProfileResult:
    costs: list
    energy: EnergyReport
    firing: "FiringMatrix"
    samples: int


def profile_model(model, windows, e_mac: float = E_MAC_PJ, e_ac: float = E_AC_PJ,
                  batch_size: int = 256) -> ProfileResult:
    """Per-inference costs averaged over ``windows``, with SOPs counted from actual spikes."""
    if model.training:
        raise InvalidStateError("profile a frozen model (call .eval() first)")
    windows = torch.as_tensor(windows)
    n = len(windows)
    if n == 0:
        raise ConfigurationError("profiling needs at least one window")
    dtype = model.head_weight.dtype
    sops: dict[str, int] = {}
    spikes: dict[str, float] = {}
    slots: dict[str, int] = {}
    layer_sums = None
    with torch.no_grad():
        for i in range(0, n, batch_size):
            _, rec = model(windows[i:i + batch_size].to(dtype), record=True)
            for name, (s, fan, lags) in _inputs_and_taps(model, rec).items():
                sops[name] = sops.get(name, 0) + event_sops(s, fan, lags)
                spikes[name] = spikes.get(name, 0.0) + float(s.sum())
                slots[name] = slots.get(name, 0) + s.numel()
            layer_sums = _accumulate_segments(layer_tensors(rec), layer_sums)
    overhead = _overhead(model)
    costs = []
    for name, domain, spec in model_layer_specs(model):
        flops = count_layer_flops(spec)
        if domain == "spiking_core":
            costs.append(LayerCost(name, domain, flops, spikes[name] / slots[name],
                                   sops[name] / n, overhead[name]))
        else:
            costs.append(LayerCost(name, domain, flops, 1.0, None, overhead[name]))
    return ProfileResult(costs, estimate_energy(costs, e_mac, e_ac), _finish_segments(layer_sums), n)


# -- firing matrix -----------------------------------------------------------

@dataclass
class FiringMatrix:
    layers: list
    segments: np.ndarray  # [n_layers, 8]
    overall: np.ndarray  # [n_layers]
    segment_weights: np.ndarray  # [8] share of neuron-time slots per segment

    @property
    def shape(self):
        return self.segments.shape


def segment_bounds(seq_len: int, n_segments: int = N_SEGMENTS) -> list[tuple[int, int]]:
    """Contiguous near-equal time ranges; when ``T' < n_segments`` trailing ones are empty."""
    edges = np.cumsum([0] + [len(a) for a in np.array_split(np.arange(seq_len), n_segments)])
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def _accumulate_segments(tensors: dict, sums: Optional[dict]) -> dict:
    sums = {} if sums is None else sums
    for name, s in tensors.items():
        per_step = s.detach().double().sum(dim=(0, 2, 3)).cpu().numpy()
        per_slot = s.shape[0] * s.shape[2] * s.shape[3]
        bounds = segment_bounds(s.shape[1])
        fired = np.array([per_step[a:b].sum() for a, b in bounds])
        total = np.array([(b - a) * per_slot for a, b in bounds], dtype=float)
        if name in sums:
            sums[name] = (sums[name][0] + fired, sums[name][1] + total)
        else:
            sums[name] = (fired, total)
    return sums


def _finish_segments(sums: dict) -> FiringMatrix:
    names = list(sums)
    fired = np.stack([sums[n][0] for n in names])
    total = np.stack([sums[n][1] for n in names])
    seg = np.divide(fired, total, out=np.zeros_like(fired), where=total > 0)
    overall = fired.sum(1) / total.sum(1)
    weights = total[0] / total[0].sum()
    return FiringMatrix(names, seg, overall, weights)


def firing_matrix(tensors: dict) -> FiringMatrix:
    """Firing matrix of already-recorded ``{layer: [B, T, C, V]}`` spike tensors."""
    if not tensors:
        raise ConfigurationError("no spike tensors to summarise")
    return _finish_segments(_accumulate_segments(tensors, None))


def measure_firing_rates(model, windows, batch_size: int = 256) -> FiringMatrix:
    """Mean firing rate per spiking layer, overall and over 8 equal temporal segments."""
    if model.training:
        raise InvalidStateError("measure firing rates on a frozen model (call .eval() first)")
    windows = torch.as_tensor(windows)
    if len(windows) == 0:
        raise ConfigurationError("firing-rate measurement needs at least one window")
    dtype = model.head_weight.dtype
    sums = None
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            _, rec = model(windows[i:i + batch_size].to(dtype), record=True)
            sums = _accumulate_segments(layer_tensors(rec), sums)
    return _finish_segments(sums)


# -- reports -----------------------------------------------------------------

ENERGY_COLUMNS = ("layer", "domain", "flops", "firing_rate", "sops", "energy_pj", "overhead_adds")


def _energy_rows(report: EnergyReport):
    for c, e in report.layers:
        sops = "" if c.domain == "continuous_stem" else f"{c.sops:.6g}"
        yield [c.name, c.domain, str(c.flops_dense), f"{c.firing_rate:.6f}", sops, f"{e:.6g}",
               str(c.overhead_adds)]


def write_energy_csv(path, report: EnergyReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_COLUMNS)
        w.writerows(_energy_rows(report))
        w.writerow(["TOTAL", "", "", "", f"{report.sops:.6g}", f"{report.total_pj:.6g}", ""])


def format_energy_table(report: EnergyReport) -> str:
    rows = [list(ENERGY_COLUMNS)] + list(_energy_rows(report))
    widths = [max(len(r[i]) for r in rows) for i in range(len(ENERGY_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines += [
        "",
        f"stem energy   {report.stem_pj * 1e-6:.6f} uJ  ({report.stem_flops} MAC x {report.e_mac_pj} pJ)",
        f"core energy   {report.core_pj * 1e-6:.6f} uJ  ({report.sops:.6g} SOP x {report.e_ac_pj} pJ)",
        f"total energy  {report.total_uj:.6f} uJ",
        f"dense ANN     {report.dnn_uj:.6f} uJ",
        "classifier head is billed as continuous (pooled real-valued inputs)",
    ]
    return "\n".join(lines) + "\n"


def write_firing_csv(path, fm: FiringMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer"] + [f"T{i + 1}" for i in range(fm.segments.shape[1])] + ["overall"])
        for name, row, ov in zip(fm.layers, fm.segments, fm.overall):
            w.writerow([name] + [f"{v:.6f}" for v in row] + [f"{ov:.6f}"])
