"""Pipeline configuration: nested dataclasses loaded from YAML.

Unknown keys and wrongly typed values are rejected; ``dump_config`` writes
the full schema with defaults.
"""

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from .optics import OpticsParams

__all__ = [
    "SimulateConfig",
    "ReferenceConfig",
    "FlowConfig",
    "LuckySection",
    "PriorConfig",
    "DeconvSection",
    "CalibrateConfig",
    "PipelineConfig",
    "load_config",
    "dump_config",
    "config_from_dict",
    "ConfigError",
]


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass
class SimulateConfig:
    n_frames: int = 100
    noise_sigma: float = 0.0
    dr0: Optional[float] = None
    image_size: int = 128
    images: List[str] = field(default_factory=lambda: ["camera"])
    input_dir: Optional[str] = None


@dataclass
class ReferenceConfig:
    patch_size: int = 9
    spatial_search: int = 11
    temporal_window: int = 15
    stride: int = 4
    beta: Optional[float] = None
    beta_table: Optional[str] = None


@dataclass
class FlowConfig:
    levels: int = 4
    iters: int = 10
    window_sigma: float = 2.0
    reg: float = 1e-4
    max_displacement: float = 16.0


@dataclass
class LuckySection:
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    patch_size: int = 9
    stride: int = 4
    temporal_window: int = 15


@dataclass
class PriorConfig:
    dr0: List[float] = field(default_factory=lambda: [2.0])
    n_samples: int = 2000
    n_components: int = 60
    kappa: float = 1.0
    tau: float = 1e-4
    basis_path: Optional[str] = None


@dataclass
class DeconvSection:
    lam: float = 1e-5
    gamma: float = 1e-3
    outer_iters: int = 15
    inner_iters: int = 50
    tol: float = 1e-4
    denoiser: str = "nlm"
    rho: List[float] = field(default_factory=lambda: [1e-3, 1e-1])
    pnp_cycles: int = 1


@dataclass
class CalibrateConfig:
    dr0: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    trials: int = 100


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    input_dir: Optional[str] = None
    clean_dir: Optional[str] = None
    bits: int = 16
    save_flow: bool = False
    optics: OpticsParams = field(default_factory=OpticsParams)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    lucky: LuckySection = field(default_factory=LuckySection)
    prior: PriorConfig = field(default_factory=PriorConfig)
    deconv: DeconvSection = field(default_factory=DeconvSection)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)

    def validate(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.bits not in (8, 16):
            raise ConfigError("bits must be 8 or 16")
        if self.simulate.n_frames < 1:
            raise ConfigError("simulate.n_frames must be >= 1")
        if len(self.deconv.rho) != 2:
            raise ConfigError("deconv.rho must hold two values")
        return self


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, where)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, where):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data):
    """Validated :class:`PipelineConfig` from a plain mapping."""
    return _build(PipelineConfig, data or {}, "").validate()


def load_config(path=None):
    """Defaults, overridden by the YAML file at ``path`` if given."""
    if path is None:
        return PipelineConfig().validate()
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg):
    """YAML text of the full configuration."""
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False)
