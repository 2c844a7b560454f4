"""Adversarial training of the generator against the spatial and temporal discriminators.

Every outer iteration runs ``k_ds`` spatial discriminator updates, ``k_dt``
temporal discriminator updates and ``k_g`` generator updates, each on a fresh
augmented batch. The learning rate steps down to ``lr / lr_decay`` for the
second half of training.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from tempogan.core import advect
from tempogan.core.augment import augment_sample, sample_rng
from tempogan.core.errors import TrainingError
from tempogan.core.fields import BundleKey, FramePair
from tempogan.core.losses import (
    GeneratorLossTerms,
    d_loss,
    feature_loss,
    g_adv_loss,
    l1_loss,
    l2_loss,
    l2_temporal,
    total_g_loss,
)
from tempogan.data.manager import Dataset, SimulationFrames
from tempogan.data.models import (
    AugmentConfig,
    ExperimentConfig,
    GeneratorConfig,
    TemporalVariant,
    TrainConfig,
)
from tempogan.db.database import DB_NAME, init_db, record_losses
from tempogan.nets.checkpoint import Checkpoint, save_checkpoint
from tempogan.nets.discriminator import ds_forward, dt_forward, feature_maps

logger = logging.getLogger(__name__)

STREAM_DS = 0
STREAM_DT = 1
STREAM_G = 2
STREAM_EVAL = 3
FLUSH_EVERY = 100


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """``lr`` for the first half of training, ``lr / lr_decay`` for the second."""
    if not 0 <= iteration < cfg.iterations:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.iterations})")
    if iteration < cfg.iterations // 2:
        return cfg.lr
    return cfg.lr / cfg.lr_decay


@dataclass
class PairBatch:
    """Generator inputs, targets and low-resolution velocity of one batch."""

    x: torch.Tensor
    y: torch.Tensor
    v: torch.Tensor

    @property
    def density(self) -> torch.Tensor:
        return self.x[:, :1]

    def to(self, device: torch.device | str) -> PairBatch:
        return PairBatch(self.x.to(device), self.y.to(device), self.v.to(device))


class BatchSampler:
    """Draws augmented tiles; every sample has its own rng substream."""

    def __init__(
        self,
        sims: Sequence[SimulationFrames],
        generator: GeneratorConfig,
        augment: AugmentConfig,
        seed: int,
    ) -> None:
        self.sims = [s for s in sims if len(s)]
        self.generator = generator
        self.augment = augment
        self.seed = seed
        self.frames = [(i, k) for i, s in enumerate(self.sims) for k in range(len(s))]
        self.centres = [(i, k) for i, s in enumerate(self.sims) for k in s.triplet_centres()]
        self.tile = (generator.tile,) * generator.dim
        self.vorticity = "vorticity" in generator.input_fields

    def _sample(self, rng: np.random.Generator, triplet: bool) -> list[FramePair]:
        pool = self.centres if triplet else self.frames
        if not pool:
            kind = "frame triplets" if triplet else "frames"
            raise TrainingError(f"empty batch: the dataset has no {kind}")
        i, k = pool[int(rng.integers(len(pool)))]
        sim = self.sims[i]
        pairs = [sim.pair(j) for j in ((k - 1, k, k + 1) if triplet else (k,))]
        return augment_sample(pairs, self.tile, rng, self.augment, vorticity=self.vorticity)

    def _collate(self, samples: Sequence[FramePair]) -> PairBatch:
        x = np.stack(
            [
                np.concatenate([s.x[BundleKey(name)].data for name in self.generator.input_fields])
                for s in samples
            ]
        )
        y = np.stack([s.y[BundleKey.DENSITY].data for s in samples])
        v = np.stack([s.x[BundleKey.VELOCITY].data for s in samples])
        return PairBatch(torch.from_numpy(x), torch.from_numpy(y), torch.from_numpy(v))

    def pairs(self, batch: int, stream: int, counter: int, j: int = 0) -> PairBatch:
        samples = [
            self._sample(sample_rng(self.seed, stream, counter, j, b), False)[0]
            for b in range(batch)
        ]
        return self._collate(samples)

    def triplets(self, batch: int, stream: int, counter: int, j: int = 0) -> list[PairBatch]:
        """Three batches for frames ``t-1``, ``t`` and ``t+1`` sharing one transform per sample."""
        samples = [
            self._sample(sample_rng(self.seed, stream, counter, j, b), True) for b in range(batch)
        ]
        return [self._collate([s[t] for s in samples]) for t in range(3)]


@dataclass
class IterationMetrics:
    iteration: int
    lr: float
    l_ds: float | None = None
    l_dt: float | None = None
    ds_real: float | None = None
    ds_fake: float | None = None
    dt_real: float | None = None
    dt_fake: float | None = None
    g_terms: dict[str, float] = field(default_factory=dict)
    g_total: float | None = None

    def row(self) -> dict[str, float | int | None]:
        return {
            "iteration": self.iteration,
            "lr": self.lr,
            "l_ds": self.l_ds,
            "l_dt": self.l_dt,
            "ds_real": self.ds_real,
            "ds_fake": self.ds_fake,
            "dt_real": self.dt_real,
            "dt_fake": self.dt_fake,
            "g_adv_s": self.g_terms.get("adv_s"),
            "g_adv_t": self.g_terms.get("adv_t"),
            "g_feature": self.g_terms.get("feature"),
            "g_l1": self.g_terms.get("l1"),
            "g_temporal": self.g_terms.get("temporal"),
            "g_total": self.g_total,
        }


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


class Trainer:
    """Runs the training loop for one configuration and owns its optimizers."""

    def __init__(
        self,
        config: ExperimentConfig,
        dataset: Dataset,
        out_dir: str | Path,
        run: str = "train",
        checkpoint: Checkpoint | None = None,
    ) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.run = run
        self.device = torch.device(config.train.device)
        self.losses = config.losses
        torch.manual_seed(config.seed)

        self.ckpt = checkpoint or Checkpoint.fresh(config)
        self.generator = self.ckpt.generator.to(self.device)
        self.ds = self.ckpt.ds.to(self.device)
        self.dt = self.ckpt.dt.to(self.device)

        t = config.train
        betas = (t.beta1, t.beta2)
        self.optimizers = {
            "generator": torch.optim.Adam(self.generator.parameters(), t.lr, betas, t.eps),
            "ds": torch.optim.Adam(self.ds.parameters(), t.lr, betas, t.eps),
            "dt": torch.optim.Adam(self.dt.parameters(), t.lr, betas, t.eps),
        }
        for name, state in self.ckpt.optimizers.items():
            if name in self.optimizers:
                self.optimizers[name].load_state_dict(state)

        self.sampler = BatchSampler(
            dataset.split("train"), config.generator, config.augment, config.seed
        )
        self.db_path = self.out_dir / DB_NAME
        init_db(self.db_path)
        self.last_checkpoint: Path | None = self.ckpt.path
        self.align_calls = 0
        self._pending: list[dict] = []

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / "checkpoint.pt"

    def _set_lr(self, lr: float) -> None:
        for opt in self.optimizers.values():
            for group in opt.param_groups:
                group["lr"] = lr

    def _modes(self, training: str) -> None:
        """Puts only the network being updated into training mode."""
        self.generator.train(training == "generator")
        self.ds.train(training == "ds")
        self.dt.train(training == "dt")

    def _check(self, loss: torch.Tensor, what: str, iteration: int) -> None:
        if not torch.isfinite(loss):
            self._flush()
            logger.error(f"Non-finite {what} loss at iteration {iteration}")
            raise TrainingError(
                f"non-finite {what} loss at iteration {iteration}", self.last_checkpoint
            )

    def _triplet_inputs(
        self, frames: Sequence[torch.Tensor], batches: Sequence[PairBatch]
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if self.losses.temporal is TemporalVariant.DT_ALIGNED:
            self.align_calls += 1
            return advect.align_triplet(frames, batches[0].v, batches[2].v)
        return frames[0], frames[1], frames[2]

    def _generate(self, batches: Sequence[PairBatch]) -> list[torch.Tensor]:
        x = torch.cat([b.x for b in batches])
        out = self.generator(x)
        return list(out.split(batches[0].x.shape[0]))

    def train_ds(self, iteration: int, j: int) -> tuple[float, float, float]:
        self._modes("ds")
        b = self.sampler.pairs(self.config.train.batch, STREAM_DS, iteration, j).to(self.device)
        with torch.no_grad():
            fake = self.generator(b.x)
        real_p = ds_forward(self.ds, b.density, b.y)
        fake_p = ds_forward(self.ds, b.density, fake)
        loss = d_loss(real_p, fake_p)
        self._check(loss, "D_s", iteration)
        opt = self.optimizers["ds"]
        opt.zero_grad()
        loss.backward()
        opt.step()
        return float(loss), float(real_p.mean()), float(fake_p.mean())

    def train_dt(self, iteration: int, j: int) -> tuple[float, float, float]:
        self._modes("dt")
        batches = [
            b.to(self.device)
            for b in self.sampler.triplets(self.config.train.batch, STREAM_DT, iteration, j)
        ]
        with torch.no_grad():
            fake = self._generate(batches)
        real = self._triplet_inputs([b.y for b in batches], batches)
        fake_t = self._triplet_inputs(fake, batches)
        real_p = dt_forward(self.dt, real)
        fake_p = dt_forward(self.dt, fake_t)
        loss = d_loss(real_p, fake_p)
        self._check(loss, "D_t", iteration)
        opt = self.optimizers["dt"]
        opt.zero_grad()
        loss.backward()
        opt.step()
        return float(loss), float(real_p.mean()), float(fake_p.mean())

    def generator_terms(self, batches: Sequence[PairBatch]) -> GeneratorLossTerms:
        """All weighted generator loss components for one batch (single frame or triplet)."""
        w = self.losses
        frames = self._generate(batches)
        centre = len(batches) // 2
        b, g = batches[centre], frames[centre]
        terms = GeneratorLossTerms()
        terms.l1 = l1_loss(g, b.y, w.l1)
        if w.l2:
            terms.l2 = l2_loss(g, b.y, w.l2)
        if w.spatial:
            terms.adv_s = g_adv_loss(ds_forward(self.ds, b.density, g))
            terms.feature = feature_loss(
                feature_maps(self.ds, b.density, g),
                [f.detach() for f in feature_maps(self.ds, b.density, b.y)],
                w.feature,
            )
        if w.uses_dt:
            fake_t = dt_forward(self.dt, self._triplet_inputs(frames, batches))
            terms.adv_t = g_adv_loss(fake_probs_t=fake_t)
        elif w.temporal is TemporalVariant.L2T:
            terms.temporal = w.l2t * l2_temporal(frames, batches[0].v, batches[2].v, w.l2t_mode)
        return terms

    def train_g(self, iteration: int, j: int) -> GeneratorLossTerms:
        self._modes("generator")
        n = self.config.train.batch
        if self.losses.temporal is TemporalVariant.NONE:
            batches = [self.sampler.pairs(n, STREAM_G, iteration, j)]
        else:
            batches = self.sampler.triplets(n, STREAM_G, iteration, j)
        batches = [b.to(self.device) for b in batches]
        terms = self.generator_terms(batches)
        loss = total_g_loss(terms)
        self._check(loss, "generator", iteration)
        opt = self.optimizers["generator"]
        opt.zero_grad()
        loss.backward()
        opt.step()
        return terms

    def step(self, iteration: int) -> IterationMetrics:
        t = self.config.train
        lr = lr_schedule(iteration, t)
        self._set_lr(lr)
        m = IterationMetrics(iteration, lr)
        if self.losses.spatial:
            res = [self.train_ds(iteration, j) for j in range(t.k_ds)]
            m.l_ds, m.ds_real, m.ds_fake = (_mean([r[i] for r in res]) for i in range(3))
        if self.losses.uses_dt:
            res = [self.train_dt(iteration, j) for j in range(t.k_dt)]
            m.l_dt, m.dt_real, m.dt_fake = (_mean([r[i] for r in res]) for i in range(3))
        g_runs = [self.train_g(iteration, j).as_floats() for j in range(t.k_g)]
        m.g_terms = {k: float(np.mean([g[k] for g in g_runs])) for k in g_runs[0]}
        m.g_total = float(sum(m.g_terms.values()))
        return m

    def _flush(self) -> None:
        if self._pending:
            record_losses(self.db_path, self.run, self._pending)
            self._pending = []

    def save(self) -> Path:
        self.ckpt.optimizers = {k: o.state_dict() for k, o in self.optimizers.items()}
        path = save_checkpoint(self.checkpoint_path, self.ckpt, self.optimizers)
        self.last_checkpoint = path
        return path

    def run_training(self) -> Checkpoint:
        t = self.config.train
        start = self.ckpt.iteration
        if start == 0 or self.last_checkpoint is None:
            self.save()
        logger.info(f"Training '{self.run}' from iteration {start} to {t.iterations}")
        for it in range(start, t.iterations):
            metrics = self.step(it)
            self._pending.append(metrics.row())
            self.ckpt.iteration = it + 1
            if len(self._pending) >= FLUSH_EVERY:
                self._flush()
            if t.checkpoint_every and (it + 1) % t.checkpoint_every == 0:
                self._flush()
                self.save()
            if it % max(1, t.iterations // 20) == 0:
                logger.info(
                    f"[{self.run}] iteration {it}: L_Ds={metrics.l_ds} L_Dt={metrics.l_dt} "
                    f"L_G={metrics.g_total:.4f}"
                )
        self._flush()
        self.save()
        self._modes("none")
        return self.ckpt


def train(
    dataset: Dataset,
    config: ExperimentConfig,
    out_dir: str | Path,
    run: str = "train",
    checkpoint: Checkpoint | None = None,
) -> Checkpoint:
    """Trains (or resumes) and returns the final checkpoint written to ``out_dir``."""
    return Trainer(config, dataset, out_dir, run, checkpoint).run_training()


@dataclass
class BalanceReport:
    ds_real: float
    ds_fake: float
    dt_real: float
    dt_fake: float
    l_ds: float
    l_dt: float

    @property
    def ds_mean(self) -> float:
        return (self.ds_real + self.ds_fake) / 2

    @property
    def dt_mean(self) -> float:
        return (self.dt_real + self.dt_fake) / 2


def eval_discriminator_balance(
    ckpt: Checkpoint, dataset: Dataset, batches: int = 4, batch: int = 8, seed: int = 0
) -> BalanceReport:
    """Mean discriminator outputs on un-augmented test tiles, split by real and fake."""
    cfg = ckpt.config
    sampler = BatchSampler(
        dataset.split("test"), cfg.generator, AugmentConfig(enabled=False), seed
    )
    if not sampler.frames:
        raise ValueError("empty test split")
    ckpt.eval()
    device = next(ckpt.generator.parameters()).device
    aligned = cfg.losses.temporal is not TemporalVariant.DT_UNALIGNED
    acc: dict[str, list[float]] = {k: [] for k in ("dsr", "dsf", "dtr", "dtf", "lds", "ldt")}
    with torch.no_grad():
        for i in range(batches):
            b = sampler.pairs(batch, STREAM_EVAL, i).to(device)
            real_p = ds_forward(ckpt.ds, b.density, b.y)
            fake_p = ds_forward(ckpt.ds, b.density, ckpt.generator(b.x))
            acc["dsr"].append(float(real_p.mean()))
            acc["dsf"].append(float(fake_p.mean()))
            acc["lds"].append(float(d_loss(real_p, fake_p)))
            if not sampler.centres:
                continue
            tb = [t.to(device) for t in sampler.triplets(batch, STREAM_EVAL, i, 1)]
            fake = [ckpt.generator(x.x) for x in tb]
            real = [x.y for x in tb]
            if aligned:
                real = list(advect.align_triplet(real, tb[0].v, tb[2].v))
                fake = list(advect.align_triplet(fake, tb[0].v, tb[2].v))
            real_t = dt_forward(ckpt.dt, real)
            fake_t = dt_forward(ckpt.dt, fake)
            acc["dtr"].append(float(real_t.mean()))
            acc["dtf"].append(float(fake_t.mean()))
            acc["ldt"].append(float(d_loss(real_t, fake_t)))
    mean = {k: (float(np.mean(v)) if v else math.nan) for k, v in acc.items()}
    return BalanceReport(
        mean["dsr"], mean["dsf"], mean["dtr"], mean["dtf"], mean["lds"], mean["ldt"]
    )
