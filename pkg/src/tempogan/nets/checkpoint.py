"""Versioned checkpoint container keyed by the configuration hash."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from tempogan.core.errors import CheckpointError
from tempogan.data.models import ExperimentConfig, from_mapping
from tempogan.nets.discriminator import SpatialDiscriminator, TemporalDiscriminator
from tempogan.nets.generator import Generator

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ExperimentConfig
    generator: Generator
    ds: SpatialDiscriminator
    dt: TemporalDiscriminator
    iteration: int = 0
    optimizers: dict[str, Any] = field(default_factory=dict)
    path: Path | None = None

    @classmethod
    def fresh(cls, config: ExperimentConfig) -> Checkpoint:
        return cls(
            config,
            Generator(config.generator),
            SpatialDiscriminator(config.discriminator),
            TemporalDiscriminator(config.discriminator),
        )

    def eval(self) -> Checkpoint:
        self.generator.eval()
        self.ds.eval()
        self.dt.eval()
        return self


def save_checkpoint(
    path: str | Path,
    ckpt: Checkpoint,
    optimizers: dict[str, torch.optim.Optimizer] | None = None,
) -> Path:
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": ckpt.config.config_hash(),
        "config": ckpt.config.to_dict(),
        "iteration": ckpt.iteration,
        "generator": ckpt.generator.state_dict(),
        "ds": ckpt.ds.state_dict(),
        "dt": ckpt.dt.state_dict(),
        "optimizers": {k: o.state_dict() for k, o in (optimizers or {}).items()},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise OSError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint at iteration {ckpt.iteration} written to {path}")
    ckpt.path = path
    return path


def load_checkpoint(
    path: str | Path, expected: ExperimentConfig | None = None
) -> Checkpoint:
    """Loads a checkpoint; with ``expected`` the config hashes must agree.

    Raises:
        CheckpointError: unknown version, corrupted config or hash mismatch.
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except OSError as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise OSError(f"cannot read checkpoint {path}: {e}") from e
    except Exception as e:
        raise CheckpointError(f"{path} is not a checkpoint: {e}") from e

    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    config = from_mapping(ExperimentConfig, payload["config"])
    if config.config_hash() != payload["config_hash"]:
        raise CheckpointError(f"{path}: stored configuration does not match its hash")
    if expected is not None and expected.config_hash() != payload["config_hash"]:
        raise CheckpointError(f"{path}: configuration hash mismatch")

    ckpt = Checkpoint.fresh(config)
    ckpt.generator.load_state_dict(payload["generator"])
    ckpt.ds.load_state_dict(payload["ds"])
    ckpt.dt.load_state_dict(payload["dt"])
    ckpt.iteration = int(payload["iteration"])
    ckpt.optimizers = dict(payload.get("optimizers") or {})
    ckpt.path = path
    return ckpt
