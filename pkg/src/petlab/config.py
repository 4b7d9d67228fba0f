"""Flat key=value experiment configuration.

One file fully enumerates the experiment: acquisition, dose list,
reconstruction, network, training, paths, and every seed (no wall-clock
seeding). Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .counts import AcquisitionConfig, DoseConfig
from .errors import ConfigError
from .network import NetworkConfig
from .recon import ReconConfig
from .train import TrainConfig


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_fractions(raw: str):
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20260811
    subjects: int = 9
    volume_depth: int = 16
    volume_size: int = 64
    lesions: int = 2
    n_angles: int = 90
    n_bins: int = 96
    total_counts: float = 5e5
    dose_fractions: tuple = (0.005,)
    recon_subsets: int = 6
    recon_iterations: int = 2
    recon_init: float = 1.0
    n_p: int = 3
    n_c: int = 2
    base_channels: int = 16
    n_slices: int = 3
    skip_mode: str = "both"
    epochs: int = 30
    lr_start: float = 1e-3
    lr_end: float = 2.5e-4
    batch_size: int = 8
    loss: str = "l1"
    train_dose: float = 0.0  # 0 means: the single configured dose
    msssim_levels: int = 3
    save_sinograms: bool = False
    data_dir: str = "petlab-data"

    def __post_init__(self):
        for fraction in self.dose_fractions:
            if not (0.0 < fraction <= 1.0):
                raise ConfigError(
                    f"dose_fractions: fraction must be in (0, 1], got {fraction}")
        if not self.dose_fractions:
            raise ConfigError("dose_fractions: at least one dose required")
        if self.subjects < 2:
            raise ConfigError(f"subjects: need >= 2, got {self.subjects}")
        if self.volume_depth < 7:
            raise ConfigError(f"volume_depth: need >= 7, got {self.volume_depth}")
        # constructing the component configs validates the remaining fields
        self.acquisition()
        self.recon()
        self.network()
        self.train()
        self.resolve_train_dose()

    # component views -------------------------------------------------------
    def acquisition(self) -> AcquisitionConfig:
        return AcquisitionConfig(n_angles=self.n_angles, n_bins=self.n_bins,
                                 total_counts=self.total_counts, seed=self.seed)

    def doses(self) -> list[DoseConfig]:
        return [DoseConfig(f) for f in self.dose_fractions]

    def recon(self) -> ReconConfig:
        return ReconConfig(n_subsets=self.recon_subsets,
                           n_iterations=self.recon_iterations,
                           init_value=self.recon_init)

    def network(self, seed: int | None = None, **overrides) -> NetworkConfig:
        kw = dict(n_p=self.n_p, n_c=self.n_c, base_channels=self.base_channels,
                  n_slices=self.n_slices, skip_mode=self.skip_mode,
                  seed=self.seed if seed is None else seed)
        kw.update(overrides)
        return NetworkConfig(**kw)

    def train(self, seed: int | None = None, **overrides) -> TrainConfig:
        kw = dict(epochs=self.epochs, lr_start=self.lr_start, lr_end=self.lr_end,
                  batch_size=self.batch_size, loss=self.loss,
                  msssim_levels=self.msssim_levels,
                  seed=self.seed if seed is None else seed)
        kw.update(overrides)
        return TrainConfig(**kw)

    def resolve_train_dose(self) -> float:
        if self.train_dose == 0.0:
            if len(self.dose_fractions) != 1:
                raise ConfigError(
                    "train_dose: must be set explicitly when several dose_fractions "
                    "are configured")
            return self.dose_fractions[0]
        if self.train_dose not in self.dose_fractions:
            raise ConfigError(
                f"train_dose: {self.train_dose} is not among dose_fractions")
        return self.train_dose


_PARSERS = {
    int: int,
    float: float,
    str: lambda s: s.strip(),
    bool: _parse_bool,
    tuple: _parse_fractions,
}


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    types = {f.name: type(getattr(ExperimentConfig, f.name))
             for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[types[key]](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid value for {key!r}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path=path)
