import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from tempogan.core.errors import ConfigError
from tempogan.core.fields import BundleKey, FramePair, GridField
from tempogan.data.manager import ConfigManager, DatasetManager
from tempogan.data.models import ExperimentConfig, RunConfig

logger = logging.getLogger(__name__)

COMMANDS = ("gen-data", "train", "infer", "eval", "augment-preview", "plot")


def load_env_file(filepath: str = ".env") -> None:
    """Loads environment variables from a .env file without overriding existing ones."""
    if not os.path.exists(filepath):
        return

    with open(filepath, "r") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if (value.startswith('"') and value.endswith('"')) or (
                value.startswith("'") and value.endswith("'")
            ):
                value = value[1:-1]
            if key and key not in os.environ:
                os.environ[key] = value


def _run_options(after_command: bool) -> argparse.ArgumentParser:
    """Options accepted both before and after the subcommand.

    The subcommand copies default to SUPPRESS so they only replace values that
    were actually given; their ``--set`` entries are appended after the global ones.
    """
    options = argparse.ArgumentParser(add_help=False)
    unset = argparse.SUPPRESS if after_command else None
    options.add_argument(
        "--config", default=unset, help="YAML run configuration (defaults apply when omitted)"
    )
    options.add_argument(
        "--set",
        dest="late_overrides" if after_command else "overrides",
        action="append",
        default=argparse.SUPPRESS if after_command else [],
        metavar="KEY=VALUE",
        help="override one configuration key, e.g. train.iterations=200 (repeatable)",
    )
    options.add_argument("--seed", type=int, default=unset, help="replaces the configuration seed")
    options.add_argument(
        "--log-level",
        default=argparse.SUPPRESS if after_command else "INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="root logger level",
    )
    return options


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempogan",
        description="Temporally coherent GAN super-resolution of smoke simulations",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        parents=[_run_options(after_command=False)],
    )
    common = _run_options(after_command=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    def add(name: str, summary: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name,
            help=summary,
            parents=[common],
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )

    gen = add("gen-data", "simulate smoke and write a training dataset")
    gen.add_argument("--sims", type=int, default=None, help="number of simulations (sim.n_sims)")
    gen.add_argument("--frames", type=int, default=None, help="frames per simulation (sim.frames)")
    gen.add_argument("--res", type=int, default=None, help="high-resolution side length (sim.shape)")
    gen.add_argument("--scale", type=int, default=None, help="down-sampling factor (sim.scale)")
    gen.add_argument("--workers", type=int, default=None, help="parallel simulations (sim.workers)")
    gen.add_argument("--out", required=True, help="output directory")

    tr = add("train", "train generator and discriminators")
    tr.add_argument("--manifest", required=True, help="dataset directory or manifest file")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--resume", help="checkpoint to continue from")

    inf = add("infer", "super-resolve low-resolution frames")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--in", dest="in_dir", required=True, help="directory of *density.tgf/*velocity.tgf")
    inf.add_argument("--out", required=True, help="output directory")
    inf.add_argument("--tile", type=int, default=None, help="tile core size (infer.tile)")
    inf.add_argument("--overlap", type=int, default=None, help="tile overlap (infer.overlap)")
    vel = inf.add_mutually_exclusive_group()
    vel.add_argument("--vel-scale", type=float, default=None, help="scale input velocities")
    vel.add_argument("--vel-zero", action="store_true", help="zero input velocities")
    inf.add_argument("--recursive", type=int, default=None, help="generator passes (infer.recursive)")

    ev = add("eval", "evaluate a checkpoint or run an ablation suite")
    ev.add_argument("--checkpoint", help="checkpoint to evaluate")
    ev.add_argument("--manifest", required=True, help="dataset directory or manifest file")
    ev.add_argument("--suite", help="ablation suite: preset name or YAML file with name/configs")
    ev.add_argument("--out", default=None, help="output directory (default: next to the checkpoint)")

    aug = add("augment-preview", "write one augmented tile for inspection")
    aug.add_argument("--in", dest="in_file", required=True, help="TGF1 field file")
    aug.add_argument("--out", required=True, help="output directory")
    aug.add_argument("--tile", type=int, default=None, help="tile size (generator.tile)")

    pl = add("plot", "plot loss curves from a metrics store")
    pl.add_argument("--metrics", required=True, help="metrics.db of a training run")
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--run", default=None, help="only this run")
    return parser


def _gen_data(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.sim import SceneRanges, generate_dataset

    s = config.sim
    shape = s.shape if args.res is None else (args.res,) * len(s.shape)
    ranges = SceneRanges(s.inflow_count, s.radius_fraction, s.buoyancy, s.rate, s.speed)
    generate_dataset(
        args.sims if args.sims is not None else s.n_sims,
        config.seed,
        args.out,
        shape=tuple(shape),
        frames=args.frames if args.frames is not None else s.frames,
        scale=args.scale if args.scale is not None else s.scale,
        threshold=s.threshold,
        test_fraction=s.test_fraction,
        workers=args.workers if args.workers is not None else s.workers,
        ranges=ranges,
        cg_tolerance=s.cg_tolerance,
        cg_max_iterations=s.cg_max_iterations,
    )


def _train(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.train import train
    from tempogan.nets.checkpoint import load_checkpoint

    dataset = DatasetManager().get(args.manifest)
    checkpoint = load_checkpoint(args.resume, expected=config) if args.resume else None
    train(dataset, config, args.out, checkpoint=checkpoint)


def _read_bundles(in_dir: Path) -> list[tuple[str, dict]]:
    from tempogan.data.io import read_field

    bundles = []
    for density_path in sorted(in_dir.glob("*density.tgf")):
        stem = density_path.name[: -len("density.tgf")]
        bundle = {BundleKey.DENSITY: read_field(density_path)}
        for key in (BundleKey.VELOCITY, BundleKey.VORTICITY):
            path = in_dir / f"{stem}{key.value}.tgf"
            if path.exists():
                bundle[key] = read_field(path)
        if BundleKey.VELOCITY not in bundle:
            raise ValueError(f"{density_path} has no matching {stem}velocity.tgf")
        bundles.append((stem, bundle))
    if not bundles:
        raise ValueError(f"no *density.tgf files in {in_dir}")
    return bundles


def _infer(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.infer import (
        VelocityControl,
        infer_full,
        infer_recursive,
        infer_tiled,
        modify_velocity,
        plan_tiles,
        temporal_metric,
    )
    from tempogan.data.io import write_field
    from tempogan.db.database import DB_NAME, init_db, record_evaluation
    from tempogan.nets.checkpoint import load_checkpoint

    ic = config.infer
    ckpt = load_checkpoint(args.checkpoint).eval()
    tile = args.tile if args.tile is not None else ic.tile
    overlap = args.overlap if args.overlap is not None else ic.overlap
    recursive = args.recursive if args.recursive is not None else ic.recursive
    if args.vel_zero or ic.vel_zero:
        control = VelocityControl("zero")
    else:
        control = VelocityControl("scale", args.vel_scale if args.vel_scale is not None else ic.vel_scale)

    out_dir = Path(args.out)
    outputs, velocities = [], []
    for stem, bundle in _read_bundles(Path(args.in_dir)):
        if control.kind != "scale" or control.scale != 1.0:
            bundle = modify_velocity(bundle, control)
        if recursive > 1:
            result = infer_recursive(
                ckpt, bundle, recursive, ic.downsample_between, ic.max_cells, tile, overlap
            )
        elif tile is not None:
            plan = plan_tiles(bundle[BundleKey.DENSITY].shape, tile, overlap, ic.boundary)
            result = infer_tiled(ckpt, bundle, plan)
        else:
            result = infer_full(ckpt, bundle)
        write_field(out_dir / f"{stem}density.tgf", result)
        outputs.append(result)
        velocities.append(bundle[BundleKey.VELOCITY])

    logger.info(f"Wrote {len(outputs)} super-resolved frames to {out_dir}")
    if recursive == 1 and len(outputs) >= 2:
        db_path = out_dir / DB_NAME
        init_db(db_path)
        rows = []
        for m in temporal_metric(outputs, velocities):
            rows.append((m.frame, "temporal_advected", m.advected))
            rows.append((m.frame, "temporal_raw", m.raw))
        record_evaluation(db_path, "infer", rows)


def _load_suite(choice: str, config: ExperimentConfig):
    from tempogan.core.ablation import SUITES, AblationSuite

    if choice in SUITES:
        return SUITES[choice]
    path = Path(choice)
    if not path.exists():
        raise ConfigError(f"'{choice}' is neither a suite name ({', '.join(SUITES)}) nor a file")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: a suite file must be a mapping")
    configs = raw.get("configs") or list(config.ablation.configs)
    return AblationSuite(str(raw.get("name", path.stem)), tuple(configs))


def _eval(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.ablation import evaluation_frames, run_suite
    from tempogan.core.infer import evaluate_sequence
    from tempogan.db.database import DB_NAME, init_db, record_evaluation
    from tempogan.nets.checkpoint import load_checkpoint

    dataset = DatasetManager().get(args.manifest)
    if args.suite:
        out_dir = Path(args.out or "ablation")
        suite = _load_suite(args.suite, config)
        ConfigManager().write(config, out_dir)
        report = run_suite(suite, config, dataset, out_dir)
        for name, summary in report.table.items():
            print(f"{name}: " + ", ".join(f"{k}={v:.6g}" for k, v in sorted(summary.items())))
        if not report.complete:
            raise RuntimeError(f"suite incomplete, failed: {', '.join(report.failed)}")
        return

    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint or --suite")
    ckpt = load_checkpoint(args.checkpoint).eval()
    sims = dataset.split("test") or dataset.split("train")
    if not sims:
        raise ValueError("the dataset holds no frames")
    pairs: list[FramePair] = evaluation_frames(sims[0], config.ablation.eval_frames)
    result = evaluate_sequence(ckpt, pairs)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    db_path = out_dir / DB_NAME
    init_db(db_path)
    record_evaluation(db_path, "eval", result.rows)
    for frame, metric, value in result.rows:
        print(f"{frame}\t{metric}\t{value:.6g}")


def _augment_preview(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.augment import augment_bundle, sample_rng, sample_transform
    from tempogan.core.plot import plot_preview
    from tempogan.data.io import read_field, write_field

    field = read_field(args.in_file)
    tile = args.tile if args.tile is not None else config.generator.tile
    tile_shape = (min(tile, min(field.shape)),) * field.dim
    key = BundleKey.VELOCITY if field.is_vector else BundleKey.DENSITY
    rng = sample_rng(config.seed, 0, 0)
    transform = sample_transform(rng, tile_shape, field.shape, 1, config.augment)
    after: GridField = augment_bundle({key: field}, transform, tile_shape)[key]

    out_dir = Path(args.out)
    write_field(out_dir / "before.tgf", field)
    write_field(out_dir / "after.tgf", after)
    title = f"scale {transform.scale:.3f}, angle {transform.angle:.1f}, flips {transform.flips}"
    plot_preview(field, after, out_dir / "preview.png", title)
    logger.info(f"Augmentation preview: {title}; translation {np.round(transform.translation, 2)}")


def _plot(args: argparse.Namespace, config: ExperimentConfig) -> None:
    from tempogan.core.plot import plot_metrics

    plot_metrics(args.metrics, args.out, args.run)


HANDLERS = {
    "gen-data": _gen_data,
    "train": _train,
    "infer": _infer,
    "eval": _eval,
    "augment-preview": _augment_preview,
    "plot": _plot,
}


def run_config(args: argparse.Namespace) -> RunConfig:
    """The invocation's config path, overrides and seed, wherever they were given."""
    return RunConfig(
        command=args.command,
        config_path=args.config,
        overrides=(*args.overrides, *getattr(args, "late_overrides", ())),
        seed=args.seed,
    )


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Parses ``argv`` and runs one command.

    Returns:
        0 on success, 2 on a usage or configuration error, 1 on any other failure.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    run = run_config(args)
    try:
        manager = ConfigManager()
        config = manager.load(run.config_path, run.overrides, run.seed)
        out = getattr(args, "out", None)
        if out is not None and run.command != "eval":
            manager.write(config, out)
        HANDLERS[run.command](args, config)
    except ConfigError as e:
        print(f"tempogan {run.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        print(f"tempogan {run.command}: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    load_env_file()
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
