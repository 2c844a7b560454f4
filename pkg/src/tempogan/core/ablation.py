"""Comparison studies: the same data and seed trained under different loss and input settings."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from tempogan.core.fields import FramePair
from tempogan.core.infer import evaluate_sequence
from tempogan.core.plot import plot_ablation
from tempogan.core.train import train
from tempogan.data.manager import Dataset, SimulationFrames
from tempogan.data.models import (
    FEATURE_PRESETS,
    AugmentConfig,
    ExperimentConfig,
    TemporalVariant,
)
from tempogan.db.database import DB_NAME, init_db, record_ablation

logger = logging.getLogger(__name__)

Variant = Callable[[ExperimentConfig], ExperimentConfig]


def _losses(**changes) -> Variant:
    return lambda c: dataclasses.replace(c, losses=dataclasses.replace(c.losses, **changes))


def _inputs(*fields: str) -> Variant:
    return lambda c: dataclasses.replace(
        c, generator=dataclasses.replace(c.generator, input_fields=fields)
    )


VARIANTS: dict[str, Variant] = {
    "l2_only": _losses(
        spatial=False,
        temporal=TemporalVariant.NONE,
        l1=0.0,
        l2=1.0,
        feature=FEATURE_PRESETS["off"],
    ),
    "ds_only": _losses(spatial=True, temporal=TemporalVariant.NONE),
    "l2t": _losses(spatial=True, temporal=TemporalVariant.L2T),
    "dt_unaligned": _losses(spatial=True, temporal=TemporalVariant.DT_UNALIGNED),
    "tempogan": _losses(spatial=True, temporal=TemporalVariant.DT_ALIGNED),
    "dt_only": _losses(spatial=False, temporal=TemporalVariant.DT_ALIGNED),
    "input_rho": _inputs("density"),
    "input_rho_v": _inputs("density", "velocity"),
    "input_rho_v_w": _inputs("density", "velocity", "vorticity"),
    "lf_negative": _losses(feature=FEATURE_PRESETS["negative"]),
    "lf_mixed": _losses(feature=FEATURE_PRESETS["mixed"]),
    "lf_positive": _losses(feature=FEATURE_PRESETS["positive"]),
    "no_augment": lambda c: dataclasses.replace(c, augment=AugmentConfig(enabled=False)),
}


@dataclass(frozen=True)
class AblationSuite:
    name: str
    configs: tuple[str, ...]

    def __post_init__(self) -> None:
        unknown = [c for c in self.configs if c not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown ablation configuration '{unknown[0]}'")
        if not self.configs:
            raise ValueError("an ablation suite needs at least one configuration")


SUITES: dict[str, AblationSuite] = {
    "temporal": AblationSuite("temporal", ("ds_only", "l2t", "dt_unaligned", "tempogan")),
    "inputs": AblationSuite("inputs", ("input_rho", "input_rho_v", "input_rho_v_w")),
    "feature": AblationSuite("feature", ("lf_negative", "lf_mixed", "lf_positive")),
    "baselines": AblationSuite("baselines", ("l2_only", "ds_only", "dt_only", "tempogan")),
    "augmentation": AblationSuite("augmentation", ("tempogan", "no_augment")),
    "full": AblationSuite("full", tuple(VARIANTS)),
}


@dataclass
class AblationReport:
    suite: str
    table: dict[str, dict[str, float]] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    plot: Path | None = None

    @property
    def complete(self) -> bool:
        return not self.failed


def variant_config(base: ExperimentConfig, name: str, iterations: int, batch: int) -> ExperimentConfig:
    cfg = VARIANTS[name](base)
    return dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, iterations=iterations, batch=batch)
    )


def evaluation_frames(sim: SimulationFrames, count: int) -> list[FramePair]:
    """The longest run of consecutive kept frames, truncated to ``count``."""
    best: list[int] = []
    run: list[int] = []
    for k, frame in enumerate(sim.frames):
        if run and frame != sim.frames[run[-1]] + 1:
            run = []
        run.append(k)
        if len(run) > len(best):
            best = list(run)
    return [sim.pair(k) for k in best[:count]]


def run_suite(
    suite: AblationSuite,
    base: ExperimentConfig,
    dataset: Dataset,
    out_dir: str | Path,
    iterations: int | None = None,
    batch: int | None = None,
    eval_frames: int | None = None,
) -> AblationReport:
    """Trains every configuration on identical data and seed, then evaluates on the test split.

    A failing configuration is logged and the report is flagged incomplete.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    iterations = base.ablation.iterations if iterations is None else iterations
    batch = base.ablation.batch if batch is None else batch
    eval_frames = base.ablation.eval_frames if eval_frames is None else eval_frames
    test = dataset.split("test") or dataset.split("train")
    pairs = evaluation_frames(test[0], eval_frames) if test else []

    db_path = out_dir / DB_NAME
    init_db(db_path)
    report = AblationReport(suite.name)
    for name in suite.configs:
        logger.info(f"Ablation '{suite.name}': training '{name}' for {iterations} iterations")
        try:
            cfg = variant_config(base, name, iterations, batch)
            ckpt = train(dataset, cfg, out_dir / name, run=name)
            result = evaluate_sequence(ckpt, pairs)
        except Exception as e:
            logger.error(f"Ablation configuration '{name}' failed: {e}")
            report.failed[name] = str(e)
            continue
        report.table[name] = result.summary
        record_ablation(db_path, suite.name, ((name, m, v) for m, v in result.summary.items()))

    if report.failed:
        record_ablation(
            db_path,
            suite.name,
            ((name, "failed", None) for name in report.failed),
            complete=False,
        )
    if report.table:
        report.plot = plot_ablation(report.table, out_dir / f"{suite.name}.png")
    return report
