import copy
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml
from yasl import load_data_files, load_schema_files

from tempogan.core.errors import ConfigError
from tempogan.core.fields import BundleKey, FramePair, GridField
from tempogan.core.sim import DatasetManifest
from tempogan.data.io import read_field
from tempogan.data.models import ExperimentConfig, from_mapping

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "run_config.yaml"
CONFIG_NAME = "config.yaml"
DATA_DIR_ENV = "TEMPOGAN_DATA_DIR"


def data_root() -> Path:
    """Default data directory, overridable with ``TEMPOGAN_DATA_DIR``."""
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def apply_override(raw: dict[str, Any], assignment: str) -> None:
    """Applies one ``section.key=value`` override in place; the value is a YAML scalar."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{assignment}' has an empty key")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"override '{assignment}': {e}") from e
    node = raw
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override '{assignment}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


class ConfigManager:
    """
    Loads the run configuration: YASL schema validation, then strict dataclasses.
    """

    def __init__(self, schema_path: Path | None = None):
        self.schema_path = schema_path or SCHEMA_PATH
        self._schema_loaded = False

    def _load_schema(self) -> None:
        if self._schema_loaded:
            return
        if not self.schema_path.exists():
            logger.warning(f"Schema {self.schema_path} does not exist, skipping validation.")
            return
        logger.info(f"Loading schema: {self.schema_path}")
        load_schema_files(str(self.schema_path))
        self._schema_loaded = True

    def validate(self, path: Path) -> None:
        """Validates a configuration file against the bundled schema."""
        try:
            self._load_schema()
            if not self._schema_loaded:
                return
            data = load_data_files(str(path))
        except Exception as e:
            logger.error(f"Failed to validate {path}: {e}")
            raise ConfigError(f"{path}: {e}") from e
        if not data:
            raise ConfigError(f"{path} does not match the run configuration schema")

    def read(self, path: Path) -> dict[str, Any]:
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as e:
            logger.error(f"Error reading config {path}: {e}")
            raise OSError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: the configuration must be a mapping")
        return raw

    def load(
        self,
        path: str | Path | None = None,
        overrides: Sequence[str] = (),
        seed: int | None = None,
    ) -> ExperimentConfig:
        """Builds the effective configuration.

        Args:
            path: Configuration file; defaults apply when omitted.
            overrides: ``key.path=value`` assignments applied after validation.
            seed: Replaces the document's top-level seed.
        """
        raw: dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            raw = self.read(path)
            if raw:
                self.validate(path)
        raw = copy.deepcopy(raw)
        for assignment in overrides:
            apply_override(raw, assignment)
        if seed is not None:
            raw["seed"] = seed
        return from_mapping(ExperimentConfig, raw)

    def write(self, config: ExperimentConfig, out_dir: str | Path) -> Path:
        """Copies the effective configuration into an output directory."""
        out = Path(out_dir) / CONFIG_NAME
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
        except OSError as e:
            logger.error(f"Error writing config {out}: {e}")
            raise OSError(f"cannot write config {out}: {e}") from e
        return out


@dataclass
class SimulationFrames:
    """All kept frames of one simulation, stacked along the first axis."""

    sim: int
    frames: np.ndarray
    x_density: np.ndarray
    x_velocity: np.ndarray
    y_density: np.ndarray
    scale: int
    y_velocity: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def pair(self, k: int) -> FramePair:
        x = {
            BundleKey.DENSITY: GridField(self.x_density[k]),
            BundleKey.VELOCITY: GridField(self.x_velocity[k]),
        }
        y = {BundleKey.DENSITY: GridField(self.y_density[k])}
        if self.y_velocity is not None:
            y[BundleKey.VELOCITY] = GridField(self.y_velocity[k])
        return FramePair(int(self.frames[k]), x, y, self.scale, self.sim)

    def triplet_centres(self) -> list[int]:
        """Positions ``k`` whose frames ``k-1, k, k+1`` were all kept and are consecutive."""
        f = self.frames
        return [
            k for k in range(1, len(f) - 1) if f[k - 1] == f[k] - 1 and f[k + 1] == f[k] + 1
        ]


@dataclass
class Dataset:
    sims: dict[int, SimulationFrames]
    train_sims: list[int]
    test_sims: list[int]
    scale: int
    manifest: DatasetManifest | None = field(default=None, repr=False)

    def split(self, name: str) -> list[SimulationFrames]:
        ids = {"train": self.train_sims, "test": self.test_sims}[name]
        return [self.sims[i] for i in ids if i in self.sims]


def load_dataset(
    manifest: DatasetManifest | str | Path, target_velocity: bool = False
) -> Dataset:
    """Reads every frame a manifest references into memory.

    Raises:
        ValueError: A referenced file is not TGF1 or frames are out of order.
        OSError: A referenced file is missing.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    manifest.validate()
    grouped: dict[int, list] = {}
    for entry in manifest.entries:
        grouped.setdefault(entry.sim, []).append(entry)

    sims = {}
    for sim, entries in grouped.items():
        entries.sort(key=lambda e: e.frame)

        def stack(side: str, key: BundleKey) -> np.ndarray:
            return np.stack(
                [read_field(manifest.path(getattr(e, side)[key.value])).data for e in entries]
            )

        sims[sim] = SimulationFrames(
            sim=sim,
            frames=np.array([e.frame for e in entries]),
            x_density=stack("x", BundleKey.DENSITY),
            x_velocity=stack("x", BundleKey.VELOCITY),
            y_density=stack("y", BundleKey.DENSITY),
            scale=manifest.scale,
            y_velocity=stack("y", BundleKey.VELOCITY) if target_velocity else None,
        )
    logger.info(f"Loaded {len(manifest.entries)} frames of {len(sims)} simulations")
    return Dataset(sims, list(manifest.train_sims), list(manifest.test_sims), manifest.scale, manifest)


class DatasetManager:
    """
    Resolves dataset directories under the data root and caches loaded datasets.
    """

    def __init__(self, root: Path | None = None):
        self.root = root or data_root()
        self._datasets: dict[Path, Dataset] = {}

    def resolve(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.is_absolute() and not p.exists():
            p = self.root / p
        return p

    def get(self, path: str | Path, target_velocity: bool = False) -> Dataset:
        p = self.resolve(path)
        if p not in self._datasets:
            if not p.exists():
                logger.warning(f"Dataset path {p} does not exist.")
                raise FileNotFoundError(f"no dataset at {p}")
            self._datasets[p] = load_dataset(p, target_velocity)
        return self._datasets[p]
