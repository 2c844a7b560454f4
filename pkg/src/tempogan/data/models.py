"""Configuration dataclasses for every stage of the pipeline.

All configs are frozen and built through :func:`from_mapping`, which rejects
unknown keys and coerces YAML scalars to the annotated field types.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Literal

from tempogan.core.errors import ConfigError


class TemporalVariant(str, Enum):
    """How temporal coherence enters the generator loss."""

    NONE = "none"
    L2T = "l2t"
    DT_UNALIGNED = "dt_unaligned"
    DT_ALIGNED = "dt_aligned"


FEATURE_PRESETS: dict[str, tuple[float, ...]] = {
    "negative": (-1e-5, -1e-5, -1e-5, -1e-5),
    "mixed": (1e-4 / 3, -1e-4 / 3, -1e-4 / 3, 1e-4 / 3),
    "positive": (1e-5, 1e-5, 1e-5, 1e-5),
    "off": (0.0, 0.0, 0.0, 0.0),
}

INPUT_FIELDS = ("density", "velocity", "vorticity")


@dataclass(frozen=True)
class SimConfig:
    n_sims: int = 20
    shape: tuple[int, ...] = (256, 256)
    frames: int = 120
    scale: int = 4
    threshold: float = 0.02
    test_fraction: float = 0.2
    workers: int = 1
    inflow_count: tuple[int, int] = (1, 3)
    radius_fraction: tuple[float, float] = (0.05, 0.15)
    buoyancy: tuple[float, float] = (1e-3, 4e-3)
    rate: tuple[float, float] = (0.2, 0.6)
    speed: tuple[float, float] = (0.5, 1.5)
    cg_tolerance: float = 1e-5
    cg_max_iterations: int = 600

    def __post_init__(self) -> None:
        if len(self.shape) not in (2, 3):
            raise ConfigError(f"sim.shape must have 2 or 3 entries, got {self.shape}")
        if self.frames < 3:
            raise ConfigError("sim.frames must be at least 3")
        if any(n % self.scale for n in self.shape):
            raise ConfigError(f"sim.shape {self.shape} is not divisible by sim.scale {self.scale}")


@dataclass(frozen=True)
class ResidualBlockSpec:
    """Output channels of the two convolutions of one residual block."""

    channels_a: int
    channels_b: int


DEFAULT_BLOCKS = (
    ResidualBlockSpec(8, 32),
    ResidualBlockSpec(128, 128),
    ResidualBlockSpec(32, 8),
    ResidualBlockSpec(2, 1),
)


@dataclass(frozen=True)
class GeneratorConfig:
    """Residual generator: nearest-neighbour upsampling followed by residual blocks."""

    dim: int = 2
    tile: int = 16
    factor: int = 4
    input_fields: tuple[str, ...] = ("density", "velocity")
    blocks: tuple[ResidualBlockSpec, ...] = DEFAULT_BLOCKS
    kernel: int = 5
    batch_norm: bool = True

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ConfigError("generator.dim must be 2 or 3")
        if not self.blocks or self.blocks[-1].channels_b != 1:
            raise ConfigError("the last generator block must output exactly 1 channel")
        if not self.input_fields or self.input_fields[0] != "density":
            raise ConfigError("generator.input_fields must start with density")
        for name in self.input_fields:
            if name not in INPUT_FIELDS:
                raise ConfigError(f"unknown generator input field '{name}'")
        if self.kernel % 2 != 1:
            raise ConfigError("generator.kernel must be odd")

    @property
    def in_channels(self) -> int:
        n = 1
        if "velocity" in self.input_fields:
            n += self.dim
        if "vorticity" in self.input_fields:
            n += 1 if self.dim == 2 else 3
        return n


@dataclass(frozen=True)
class DiscriminatorConfig:
    dim: int = 2
    tile: int = 64
    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (2, 2, 2, 1)
    kernel: int = 4
    slope: float = 0.2
    batch_norm: bool = True

    def __post_init__(self) -> None:
        if len(self.channels) != len(self.strides):
            raise ConfigError("discriminator.channels and discriminator.strides differ in length")
        for s in self.strides:
            if self.kernel % s:
                raise ConfigError(
                    f"discriminator kernel {self.kernel} is not divisible by stride {s}"
                )
        reduction = 1
        for s in self.strides:
            reduction *= s
        if self.tile % reduction:
            raise ConfigError(f"discriminator.tile {self.tile} is not divisible by {reduction}")

    @property
    def feature_size(self) -> int:
        n = self.tile
        for s in self.strides:
            n //= s
        return n


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator loss terms and the selected temporal variant."""

    l1: float = 5.0
    l2: float = 0.0
    feature: tuple[float, ...] = FEATURE_PRESETS["negative"]
    temporal: TemporalVariant = TemporalVariant.DT_ALIGNED
    spatial: bool = True
    l2t: float = 1.0
    l2t_mode: Literal["single", "double"] = "double"

    def __post_init__(self) -> None:
        if len(self.feature) != 4:
            raise ConfigError("losses.feature needs one weight per discriminator layer (4)")

    @property
    def uses_dt(self) -> bool:
        return self.temporal in (TemporalVariant.DT_ALIGNED, TemporalVariant.DT_UNALIGNED)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 40000
    batch: int = 16
    k_ds: int = 2
    k_dt: int = 2
    k_g: int = 2
    lr: float = 2e-4
    lr_decay: float = 20.0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 1000
    device: str = "cpu"

    def __post_init__(self) -> None:
        if min(self.k_ds, self.k_dt, self.k_g) < 1:
            raise ConfigError("train.k_ds, train.k_dt and train.k_g must be >= 1")
        if self.iterations < 0 or self.iterations % 2:
            raise ConfigError("train.iterations must be a non-negative even number")
        if self.batch < 1:
            raise ConfigError("train.batch must be >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    scale_range: tuple[float, float] = (0.85, 1.15)
    angle_range: tuple[float, float] = (-90.0, 90.0)
    flip: bool = True


@dataclass(frozen=True)
class InferConfig:
    tile: int | None = None
    overlap: int = 3
    boundary: Literal["clip", "clamp"] = "clip"
    vel_scale: float = 1.0
    vel_zero: bool = False
    recursive: int = 1
    downsample_between: bool = False
    max_cells: int = 2**26


@dataclass(frozen=True)
class AblationConfig:
    configs: tuple[str, ...] = ("ds_only", "l2t", "dt_unaligned", "tempogan")
    iterations: int = 2000
    batch: int = 8
    eval_frames: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    """The whole run configuration document."""

    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self) -> None:
        if self.generator.dim != self.discriminator.dim:
            raise ConfigError("generator.dim and discriminator.dim differ")
        if self.discriminator.tile != self.generator.tile * self.generator.factor:
            raise ConfigError(
                "discriminator.tile must equal generator.tile * generator.factor"
            )

    def to_dict(self) -> dict[str, Any]:
        return to_plain(self)

    def config_hash(self) -> str:
        return config_hash(self)


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation."""

    command: str
    config_path: str | None = None
    overrides: tuple[str, ...] = ()
    seed: int | None = None


def to_plain(obj: Any) -> Any:
    """Converts dataclasses, enums and tuples into YAML/JSON friendly values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    return obj


def config_hash(obj: Any) -> str:
    """SHA-256 over the canonical JSON form of a config."""
    canonical = json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _coerce(value: Any, hint: Any, path: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is Literal:
        if value not in args:
            raise ConfigError(f"{path} must be one of {list(args)}, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path} must have {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if isinstance(hint, type) and dataclasses.is_dataclass(hint):
        return from_mapping(hint, value, f"{path}.")
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError:
            raise ConfigError(
                f"{path} must be one of {[m.value for m in hint]}, got {value!r}"
            ) from None
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path} must be a number, got {value!r}") from None
    if hint is str:
        return str(value)
    return value


def from_mapping[T](cls: type[T], data: Any, prefix: str = "") -> T:
    """Builds a config dataclass from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key '{prefix}{unknown[0]}'")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if key == "feature" and isinstance(value, str):
            if value not in FEATURE_PRESETS:
                raise ConfigError(
                    f"{prefix}feature preset must be one of {sorted(FEATURE_PRESETS)}"
                )
            value = list(FEATURE_PRESETS[value])
        kwargs[key] = _coerce(value, hint, f"{prefix}{key}")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'}: {e}") from e
