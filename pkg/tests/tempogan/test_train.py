import dataclasses
import math
from unittest.mock import patch

import numpy as np
import pytest
import torch

from tempogan.core.errors import TrainingError
from tempogan.core.train import (
    BatchSampler,
    Trainer,
    eval_discriminator_balance,
    lr_schedule,
    train,
)
from tempogan.data.manager import Dataset, SimulationFrames
from tempogan.data.models import AugmentConfig, TemporalVariant, TrainConfig
from tempogan.db.database import DB_NAME, fetch_losses
from tempogan.nets.checkpoint import Checkpoint, load_checkpoint


def _with_temporal(config, variant):
    return dataclasses.replace(config, losses=dataclasses.replace(config.losses, temporal=variant))


def _snapshot(module):
    return [p.detach().clone() for p in module.parameters()]


def test_lr_schedule_steps_down_at_half():
    cfg = TrainConfig(iterations=10, lr=2e-4, lr_decay=20.0)
    assert [lr_schedule(i, cfg) for i in range(5)] == [2e-4] * 5
    assert [lr_schedule(i, cfg) for i in range(5, 10)] == pytest.approx([1e-5] * 5)
    with pytest.raises(ValueError, match="outside"):
        lr_schedule(10, cfg)


def test_zero_iterations_writes_initial_checkpoint(tmp_path, make_config, tiny_dataset):
    config = make_config(iterations=0)
    ckpt = train(tiny_dataset, config, tmp_path)
    assert ckpt.iteration == 0
    assert (tmp_path / "checkpoint.pt").exists()
    assert fetch_losses(tmp_path / DB_NAME) == []


def test_tiny_run_stays_finite(tmp_path, tiny_config, tiny_dataset):
    """Verify a short full-objective run logs finite losses for every network."""
    ckpt = train(tiny_dataset, tiny_config, tmp_path, run="tiny")
    assert ckpt.iteration == 2
    rows = fetch_losses(tmp_path / DB_NAME, "tiny")
    assert [r["iteration"] for r in rows] == [0, 1]
    for r in rows:
        for column in ("l_ds", "l_dt", "g_adv_s", "g_adv_t", "g_l1", "g_total"):
            assert math.isfinite(r[column])
        assert 0.0 < r["ds_real"] < 1.0
    loaded = load_checkpoint(tmp_path / "checkpoint.pt", expected=tiny_config)
    assert loaded.iteration == 2
    assert set(loaded.optimizers) == {"generator", "ds", "dt"}


def test_generator_step_leaves_discriminators_untouched(tmp_path, tiny_config, tiny_dataset):
    trainer = Trainer(tiny_config, tiny_dataset, tmp_path)
    ds_before, dt_before = _snapshot(trainer.ds), _snapshot(trainer.dt)
    bn_before = trainer.ds.norms[1].running_mean.clone()
    trainer.train_g(0, 0)
    for a, b in zip(ds_before + dt_before, _snapshot(trainer.ds) + _snapshot(trainer.dt)):
        assert torch.equal(a, b)
    assert torch.equal(bn_before, trainer.ds.norms[1].running_mean)


def test_discriminator_step_leaves_generator_untouched(tmp_path, tiny_config, tiny_dataset):
    trainer = Trainer(tiny_config, tiny_dataset, tmp_path)
    g_before = _snapshot(trainer.generator)
    trainer.train_ds(0, 0)
    trainer.train_dt(0, 0)
    for a, b in zip(g_before, _snapshot(trainer.generator)):
        assert torch.equal(a, b)


@pytest.mark.parametrize(
    "variant, calls",
    [
        (TemporalVariant.DT_ALIGNED, 3),
        (TemporalVariant.DT_UNALIGNED, 0),
        (TemporalVariant.L2T, 0),
        (TemporalVariant.NONE, 0),
    ],
)
def test_alignment_only_for_aligned_variant(tmp_path, tiny_config, tiny_dataset, variant, calls):
    """Both discriminator inputs and the generator path are aligned once per update."""
    trainer = Trainer(_with_temporal(tiny_config, variant), tiny_dataset, tmp_path)
    metrics = trainer.step(0)
    assert trainer.align_calls == calls
    assert (metrics.l_dt is not None) == (variant in (TemporalVariant.DT_ALIGNED, TemporalVariant.DT_UNALIGNED))
    if variant is TemporalVariant.L2T:
        assert metrics.g_terms["temporal"] >= 0.0


def test_resume_matches_uninterrupted_run(tmp_path, make_config, tiny_dataset):
    config = make_config(iterations=4, checkpoint_every=0)
    full = train(tiny_dataset, config, tmp_path / "full")

    first = Trainer(config, tiny_dataset, tmp_path / "resumed")
    for it in range(2):
        first.step(it)
        first.ckpt.iteration = it + 1
    first.save()

    ckpt = load_checkpoint(tmp_path / "resumed" / "checkpoint.pt", expected=config)
    resumed = train(tiny_dataset, config, tmp_path / "resumed", checkpoint=ckpt)
    assert resumed.iteration == 4
    for a, b in zip(full.generator.parameters(), resumed.generator.parameters()):
        torch.testing.assert_close(a, b, rtol=1e-4, atol=1e-6)


def test_empty_training_split(tmp_path, tiny_config):
    empty = Dataset({}, [], [], 4)
    with pytest.raises(TrainingError, match="empty batch"):
        train(empty, tiny_config, tmp_path)


def test_missing_triplets(tmp_path, tiny_config, make_sim):
    sparse = Dataset({0: make_sim(0, frames=(0, 2, 4))}, [0], [], 4)
    with pytest.raises(TrainingError, match="frame triplets"):
        train(sparse, tiny_config, tmp_path)


def test_non_finite_loss_names_last_checkpoint(tmp_path, tiny_config, tiny_dataset):
    with patch("tempogan.core.train.d_loss", return_value=torch.tensor(float("nan"))):
        with pytest.raises(TrainingError, match="non-finite D_s loss") as exc:
            train(tiny_dataset, tiny_config, tmp_path)
    assert exc.value.last_checkpoint == tmp_path / "checkpoint.pt"


def test_sampler_triplets_share_frames(tiny_config, tiny_dataset):
    sampler = BatchSampler(
        tiny_dataset.split("train"), tiny_config.generator, AugmentConfig(enabled=False), 0
    )
    prev, centre, nxt = sampler.triplets(2, 0, 0)
    assert centre.x.shape == (2, 3, 4, 4)
    assert centre.y.shape == (2, 1, 16, 16)
    assert centre.v.shape == (2, 2, 4, 4)
    assert not torch.equal(prev.y, nxt.y)


def test_discriminator_balance(tiny_config, tiny_dataset):
    report = eval_discriminator_balance(Checkpoint.fresh(tiny_config), tiny_dataset, batches=2, batch=2)
    for value in (report.ds_real, report.ds_fake, report.dt_real, report.dt_fake):
        assert 0.0 < value < 1.0
    assert math.isfinite(report.l_ds)
    assert 0.0 < report.ds_mean < 1.0


def test_discriminators_separate_disjoint_constants(make_config, tmp_path):
    """Train only the discriminators on all-ones targets against a generator that outputs zero."""
    config = make_config(lr=5e-3)
    config = dataclasses.replace(
        config, discriminator=dataclasses.replace(config.discriminator, batch_norm=False)
    )
    n = 5
    sim = SimulationFrames(
        0,
        np.arange(n),
        np.ones((n, 1, 8, 8), dtype=np.float32),
        np.zeros((n, 2, 8, 8), dtype=np.float32),
        np.ones((n, 1, 32, 32), dtype=np.float32),
        scale=4,
    )
    dataset = Dataset({0: sim}, [0], [0], 4)
    ckpt = Checkpoint.fresh(config)
    with torch.no_grad():
        for p in ckpt.generator.parameters():
            p.zero_()
    trainer = Trainer(config, dataset, tmp_path, checkpoint=ckpt)
    for it in range(200):
        trainer.train_ds(it, 0)
        trainer.train_dt(it, 0)

    report = eval_discriminator_balance(ckpt, dataset, batches=2, batch=4)
    assert report.ds_real > 0.9
    assert report.ds_fake < 0.1
    assert report.dt_real > 0.9
    assert report.dt_fake < 0.1


def test_discriminator_balance_needs_test_split(tiny_config, tiny_dataset):
    no_test = Dataset(tiny_dataset.sims, [0, 1], [], 4)
    with pytest.raises(ValueError, match="empty test split"):
        eval_discriminator_balance(Checkpoint.fresh(tiny_config), no_test)


@pytest.mark.slow
def test_desk_scale_training(tmp_path):
    """2000 iterations at batch 8 on 128^2 data: finite losses, balanced discriminators, exact reload."""
    from tempogan.core.sim import generate_dataset
    from tempogan.data.manager import load_dataset
    from tempogan.data.models import ExperimentConfig

    generate_dataset(5, 0, tmp_path / "data", shape=(128, 128), frames=60)
    dataset = load_dataset(tmp_path / "data")
    assert sum(len(s) for s in dataset.split("train")) >= 160
    config = ExperimentConfig(train=TrainConfig(iterations=2000, batch=8, checkpoint_every=500))
    ckpt = train(dataset, config, tmp_path / "run")

    rows = fetch_losses(tmp_path / "run" / DB_NAME)
    assert len(rows) == 2000
    assert all(math.isfinite(r["g_total"]) for r in rows)
    report = eval_discriminator_balance(ckpt, dataset)
    assert 0.3 <= report.ds_mean <= 0.7
    assert 0.3 <= report.dt_mean <= 0.7

    reloaded = eval_discriminator_balance(load_checkpoint(tmp_path / "run" / "checkpoint.pt", expected=config), dataset)
    assert reloaded.l_ds == pytest.approx(report.l_ds, abs=1e-6)
    assert reloaded.l_dt == pytest.approx(report.l_dt, abs=1e-6)
