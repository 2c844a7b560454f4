import numpy as np
import pytest

from tempogan.data.manager import Dataset, SimulationFrames
from tempogan.data.models import (
    AblationConfig,
    DiscriminatorConfig,
    ExperimentConfig,
    GeneratorConfig,
    ResidualBlockSpec,
    TrainConfig,
)

TINY_BLOCKS = (ResidualBlockSpec(4, 4), ResidualBlockSpec(2, 1))


def _experiment(**train) -> ExperimentConfig:
    """4^2 generator tiles, 16^2 discriminator tiles and four-channel discriminators."""
    settings = {"iterations": 2, "batch": 2, "k_ds": 1, "k_dt": 1, "k_g": 1, "checkpoint_every": 1}
    settings.update(train)
    return ExperimentConfig(
        seed=3,
        generator=GeneratorConfig(tile=4, blocks=TINY_BLOCKS),
        discriminator=DiscriminatorConfig(tile=16, channels=(4, 4, 4, 4)),
        train=TrainConfig(**settings),
        ablation=AblationConfig(iterations=2, batch=2, eval_frames=3),
    )


def _sim(sim: int, frames=(0, 1, 2, 3, 4)) -> SimulationFrames:
    """A blob drifting up one low-resolution cell per frame on an 8^2 grid."""
    rng = np.random.default_rng(sim)
    hi = np.arange(32, dtype=np.float32) + 0.5
    gx, gy = np.meshgrid(hi, hi, indexing="ij")
    y = np.stack(
        [np.exp(-((gx - 16) ** 2 + (gy - 8 - 4 * f) ** 2) / 30.0)[None] for f in frames]
    ).astype(np.float32)
    x = y.reshape(len(frames), 1, 8, 4, 8, 4).mean(axis=(3, 5))
    v = np.zeros((len(frames), 2, 8, 8), dtype=np.float32)
    v[:, 1] = 1.0
    v += 0.05 * rng.standard_normal(v.shape).astype(np.float32)
    return SimulationFrames(sim, np.array(frames), x, v, y, scale=4)


@pytest.fixture
def make_config():
    return _experiment


@pytest.fixture
def make_sim():
    return _sim


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return _experiment()


@pytest.fixture
def tiny_dataset() -> Dataset:
    return Dataset({i: _sim(i) for i in range(3)}, [0, 1], [2], 4)
