"""Model/training configuration, dataset profiles, and the flat key-value config file."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .neurons import LifConfig
from .readout import ExitPolicy, TseConfig

CONFIG_HEADER = "# pasnet-config v1"


@dataclass(frozen=True)
class ModelConfig:
    nodes: int = 3
    in_channels: int = 6
    classes: int = 4
    embed_dim: int = 32
    depth: int = 2
    mlp_ratio: float = 2.0
    stride: int = 4
    window: int = 128
    tcn_kernel: int = 3
    topo_kernel: int = 5
    tau: float = 0.5
    u_base: float = 1.0
    surrogate: str = "rect"
    surrogate_width: float = 0.5
    gate_alpha: float = 0.9
    gate_pool: str = "element"
    stem_gated: bool = False
    bptt_window: int = 0
    warmup_ratio: float = 0.2
    exit_threshold: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("nodes", "in_channels", "embed_dim", "depth", "stride", "window",
                     "tcn_kernel", "topo_kernel"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.classes < 2:
            raise ConfigurationError("model.classes must be >= 2")
        if self.in_channels % 3:
            raise ConfigurationError("model.in_channels must be a multiple of 3 (xyz triads)")
        if self.window < self.stride:
            raise ConfigurationError("model.window must be >= model.stride")
        if self.mlp_ratio <= 0:
            raise ConfigurationError("model.mlp_ratio must be positive")
        if self.bptt_window < 0:
            raise ConfigurationError("model.bptt_window must be >= 0 (0 = full BPTT)")
        # delegate range checks
        self.lif_cfg()
        self.tse_cfg()
        self.exit_policy()

    @property
    def seq_len(self) -> int:
        return self.window // self.stride

    @property
    def token_channels(self) -> int:
        return 3 * self.in_channels + 3 * (self.in_channels // 3)

    def lif_cfg(self) -> LifConfig:
        return LifConfig(tau=self.tau, u_base=self.u_base, surrogate=self.surrogate,
                         width=self.surrogate_width, gate_alpha=self.gate_alpha,
                         gate_pool=self.gate_pool, bptt_window=self.bptt_window or None)

    def tse_cfg(self, weighting="uniform", label_smoothing=0.1) -> TseConfig:
        return TseConfig(self.warmup_ratio, weighting, label_smoothing)

    def exit_policy(self) -> ExitPolicy:
        return ExitPolicy(self.exit_threshold)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 0.01
    warmup_epochs: int = 12
    min_lr: float = 1e-7
    label_smoothing: float = 0.1
    weighting: str = "uniform"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("train.epochs and train.batch_size must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("train.lr and train.weight_decay must be non-negative")
        if self.min_lr <= 0:
            raise ConfigurationError("train.min_lr must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError("train.warmup_epochs must be in [0, epochs)")


# Per-dataset hyperparameter profiles (no data is fetched); window and stride give T' per dataset.
PROFILES: dict[str, dict] = {
    "pamap2": dict(nodes=3, in_channels=6, classes=12, embed_dim=256, depth=3, mlp_ratio=2.0,
                   window=200, stride=4),
    "daily_sports": dict(nodes=5, in_channels=3, classes=19, embed_dim=192, depth=7, mlp_ratio=4.0,
                         window=125, stride=4),
    "tnda": dict(nodes=5, in_channels=3, classes=8, embed_dim=128, depth=5, mlp_ratio=3.0,
                 window=200, stride=4),
    "hugadb": dict(nodes=5, in_channels=6, classes=12, embed_dim=128, depth=5, mlp_ratio=3.0,
                   window=100, stride=3),
    "usc_had": dict(nodes=1, in_channels=6, classes=12, embed_dim=128, depth=5, mlp_ratio=3.0,
                    window=200, stride=4),
    "har70": dict(nodes=2, in_channels=3, classes=7, embed_dim=96, depth=4, mlp_ratio=2.5,
                  window=100, stride=2),
    "parkinson": dict(nodes=1, in_channels=3, classes=2, embed_dim=128, depth=5, mlp_ratio=3.0,
                      window=128, stride=4),
    # desk-scale synthetic task
    "synthetic": dict(nodes=3, in_channels=6, classes=4, embed_dim=32, depth=2, mlp_ratio=2.0,
                      window=128, stride=4),
}


def profile(name: str) -> ModelConfig:
    try:
        return ModelConfig(**PROFILES[name])
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; known: {sorted(PROFILES)}") from None


_SECTIONS = {"model": ModelConfig, "train": TrainConfig}


def _coerce(cls, name: str, raw: str):
    ftype = {f.name: f.type for f in fields(cls)}[name]
    try:
        if ftype in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"invalid value {raw!r} for key {name!r}") from None


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse ``section.key = value`` lines. ``profile = name`` seeds model defaults."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != CONFIG_HEADER:
        raise ConfigurationError(f"config must start with header line {CONFIG_HEADER!r}")
    values: dict[str, dict] = {"model": {}, "train": {}}
    base = ModelConfig()
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "profile":
            base = profile(raw)
            continue
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigurationError(f"unknown config key {key!r} (line {lineno})")
        values[section][name] = _coerce(cls, name, raw)
    return base.with_(**values["model"]), TrainConfig(**values["train"])


def apply_overrides(model: ModelConfig, train: TrainConfig, pairs) -> tuple[ModelConfig, TrainConfig]:
    """Apply ``section.key=value`` strings on top of existing configs."""
    values: dict[str, dict] = {"model": {}, "train": {}}
    for item in pairs:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not 'section.key=value'")
        key, raw = (s.strip() for s in item.split("=", 1))
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[section][name] = _coerce(cls, name, raw)
    return model.with_(**values["model"]), replace(train, **values["train"])


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    out = [CONFIG_HEADER]
    for k, v in asdict(model).items():
        out.append(f"model.{k} = {v}")
    for k, v in asdict(train or TrainConfig()).items():
        out.append(f"train.{k} = {v}")
    return "\n".join(out) + "\n"
