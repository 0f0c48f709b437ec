"""
Configuration for training, evaluation and the command line.

Config files are flat ``key=value`` text parsed with python-dotenv. Each key
is a field of :class:`TrainConfig`; values are coerced to the field's type.
Command-line overrides are applied on top of the file.
"""

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from loguru import logger

from .errors import ConfigError

STAGES = ("decomposition", "enhancement")
STRATEGY_IDS = ("full", "v0_pixel_mult", "v1_latent_mult", "v2_latent_add_nolog", "v3_rgb_add_log")
FUSIONS = ("cross", "none", "mul_v", "mul_in")
GUIDANCES = ("mean", "max")
EXTRACTORS = ("random", "vgg", "none")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    """All tunable settings. Defaults are the full-scale training recipe."""

    stage: str = "decomposition"
    strategy: str = "full"
    iterations: int = 150_000
    batch_size: int = 4
    patch_size: int = 256
    lr_initial: float = 2e-4
    lr_final: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    lambda1: float = 0.1
    lambda2: float = 1.0
    lambda_p: float = 0.01
    alpha_smooth: float = -10.0
    channels: int = 40
    seed: int = 0
    deterministic: bool = False

    # architecture details the recipe leaves open
    heads: int = 1
    ffn_expansion: float = 2.0
    decomposer_depth: int = 1
    refiner_blocks: Tuple[int, ...] = (1, 2, 2)
    qk_norm: bool = True
    gftb_fusion: str = "cross"
    r_guidance: str = "mean"
    l_guidance: str = "max"
    perceptual: str = "random"

    # training bookkeeping
    grad_clip: float = 1.0
    epoch_steps: int = 50
    log_every: int = 100
    stability_runs: int = 5
    stability_workers: int = 1

    # data
    data_root: str = ""
    low_dir: str = "low"
    high_dir: str = "high"
    max_pairs: int = 0
    load_workers: int = 4
    # random right-angle rotations and flips of every training patch
    augment: bool = True

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small profile for CPU runs: short schedule, 32px patches, 8 channels."""
        values = dict(
            iterations=2000,
            patch_size=32,
            channels=8,
            lr_initial=1e-3,
            log_every=50,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {', '.join(STAGES)}, got '{self.stage}'")
        if self.strategy not in STRATEGY_IDS:
            raise ConfigError(f"strategy must be one of {', '.join(STRATEGY_IDS)}, got '{self.strategy}'")
        if self.gftb_fusion not in FUSIONS:
            raise ConfigError(f"gftb_fusion must be one of {', '.join(FUSIONS)}, got '{self.gftb_fusion}'")
        for name in ("r_guidance", "l_guidance"):
            if getattr(self, name) not in GUIDANCES:
                raise ConfigError(f"{name} must be one of {', '.join(GUIDANCES)}")
        if self.perceptual not in EXTRACTORS:
            raise ConfigError(f"perceptual must be one of {', '.join(EXTRACTORS)}")
        for name in ("iterations", "batch_size", "patch_size", "channels", "heads", "epoch_steps", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_initial <= 0 or self.lr_final < 0 or self.lr_final > self.lr_initial:
            raise ConfigError("learning rates must satisfy 0 <= lr_final <= lr_initial, lr_initial > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("optimizer betas must lie in [0, 1)")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if len(self.refiner_blocks) != 3 or min(self.refiner_blocks) < 1:
            raise ConfigError("refiner_blocks needs exactly three positive counts, one per scale")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        values = dataclasses.asdict(self)
        values["refiner_blocks"] = list(self.refiner_blocks)
        return values


def _coerce(name: str, raw: Any, target: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if target is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if target is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if target is float:
            return float(text)
        if target == Tuple[int, ...]:
            return tuple(int(part) for part in text.split(",") if part.strip())
        return text
    except ValueError:
        raise ConfigError(f"invalid value '{raw}' for key '{name}'")


def parse_overrides(pairs: Optional[Iterable[str]]) -> Dict[str, str]:
    """Turn ``["key=value", ...]`` into a dict."""
    result = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        result[key.strip()] = value.strip()
    return result


def build_config(values: Mapping[str, Any], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply raw ``values`` on top of ``base``, rejecting unknown keys."""
    base = base or TrainConfig()
    hints = {f.name: type(getattr(base, f.name)) for f in fields(TrainConfig)}
    hints["refiner_blocks"] = Tuple[int, ...]
    unknown = sorted(set(values) - set(TrainConfig.keys()))
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(TrainConfig.keys())}"
        )
    changes = {key: _coerce(key, value, hints[key]) for key, value in values.items() if value is not None}
    return base.replace(**changes)


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Union[Mapping[str, Any], Iterable[str]]] = None,
    base: Optional[TrainConfig] = None,
) -> TrainConfig:
    """
    Load a config file and apply overrides.

    Args:
        path: Flat key=value file. None uses only ``base`` and overrides.
        overrides: Mapping or ``key=value`` strings that win over file values.
        base: Starting values, full-scale defaults when None.

    Returns:
        A validated TrainConfig.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(dotenv_values(path))
        logger.debug(f"Loaded {len(values)} config keys from {path}")
    if overrides:
        if not isinstance(overrides, Mapping):
            overrides = parse_overrides(overrides)
        values.update(overrides)
    return build_config(values, base)


def output_root(default: str = "runs") -> Path:
    """Output root, overridable through RGT_OUTPUT_ROOT."""
    return Path(os.getenv("RGT_OUTPUT_ROOT", default))
