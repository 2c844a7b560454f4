"""Randomized smoke simulations producing paired low/high-resolution frames.

The solver is a stable-fluids style step on a collocated grid inside a closed
box: inflows, MacCormack advection of density and velocity, buoyancy, and a
pressure projection solved with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from tempogan.core.errors import SolverError
from tempogan.core.fields import (
    BundleKey,
    GridField,
    cell_positions,
    downsample,
    stencil_bounds,
)
from tempogan.data.io import read_field, write_field

logger = logging.getLogger(__name__)

DENSITY_THRESHOLD = 0.02
MANIFEST_NAME = "manifest.yaml"


@dataclass(frozen=True)
class SmokeInflow:
    position: tuple[float, ...]
    radius: float
    rate: float


@dataclass(frozen=True)
class VelocityInflow:
    position: tuple[float, ...]
    radius: float
    direction: tuple[float, ...]
    magnitude: float


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to reproduce one simulation."""

    seed: int = 0
    shape: tuple[int, ...] = (256, 256)
    frames: int = 120
    smoke_inflows: tuple[SmokeInflow, ...] = ()
    velocity_inflows: tuple[VelocityInflow, ...] = ()
    buoyancy: tuple[float, ...] = (0.0, 2e-3)
    cg_tolerance: float = 1e-5
    cg_max_iterations: int = 600

    def __post_init__(self) -> None:
        if self.frames < 3:
            raise ValueError("a scene needs at least 3 frames")
        if len(self.buoyancy) != len(self.shape):
            raise ValueError("buoyancy must have one component per axis")
        regions: list[tuple[tuple[float, ...], float]] = [
            (s.position, s.radius) for s in self.smoke_inflows
        ]
        regions += [(s.position, s.radius) for s in self.velocity_inflows]
        for position, radius in regions:
            if len(position) != len(self.shape):
                raise ValueError(f"inflow position {position} has wrong dimension")
            for p, n in zip(position, self.shape):
                if p - radius < 0 or p + radius > n - 1:
                    raise ValueError(
                        f"inflow at {position} with radius {radius} leaves the domain {self.shape}"
                    )

    @property
    def dim(self) -> int:
        return len(self.shape)


@dataclass(frozen=True)
class SceneRanges:
    """Randomization ranges used by :func:`sample_scene`."""

    inflow_count: tuple[int, int] = (1, 3)
    radius_fraction: tuple[float, float] = (0.05, 0.15)
    buoyancy: tuple[float, float] = (1e-3, 4e-3)
    rate: tuple[float, float] = (0.2, 0.6)
    speed: tuple[float, float] = (0.5, 1.5)


def sample_scene(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    frames: int,
    ranges: SceneRanges = SceneRanges(),
) -> SceneSpec:
    """Draws a random scene: smoke inflows, velocity inflows and buoyancy."""
    dim = len(shape)
    lo_n = min(shape)

    def region() -> tuple[tuple[float, ...], float]:
        radius = float(rng.uniform(*ranges.radius_fraction) * lo_n)
        position = tuple(float(rng.uniform(radius, n - 1 - radius)) for n in shape)
        return position, radius

    smoke = []
    for _ in range(int(rng.integers(ranges.inflow_count[0], ranges.inflow_count[1] + 1))):
        position, radius = region()
        # keep smoke sources in the lower part so plumes have room to rise
        up = shape[1]
        low = list(position)
        low[1] = float(rng.uniform(radius, max(radius, 0.4 * (up - 1) - radius) + 1e-9))
        smoke.append(SmokeInflow(tuple(low), radius, float(rng.uniform(*ranges.rate))))

    vel = []
    for _ in range(int(rng.integers(ranges.inflow_count[0], ranges.inflow_count[1] + 1))):
        position, radius = region()
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction) + 1e-12
        vel.append(
            VelocityInflow(
                position,
                radius,
                tuple(float(c) for c in direction),
                float(rng.uniform(*ranges.speed)),
            )
        )

    log_b = rng.uniform(math.log(ranges.buoyancy[0]), math.log(ranges.buoyancy[1]))
    buoyancy = [0.0] * dim
    buoyancy[1] = float(math.exp(log_b))
    return SceneSpec(
        seed=int(rng.integers(0, 2**31 - 1)),
        shape=tuple(shape),
        frames=frames,
        smoke_inflows=tuple(smoke),
        velocity_inflows=tuple(vel),
        buoyancy=tuple(buoyancy),
    )


@functools.lru_cache(maxsize=8)
def _projection_operators(shape: tuple[int, ...]) -> tuple[sparse.csr_matrix, sparse.csr_matrix, sparse.dia_matrix]:
    """Sparse divergence D, Poisson matrix D D^T and its Jacobi preconditioner."""
    blocks = []
    for axis, n in enumerate(shape):
        central = 0.5 * sparse.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n))
        op = sparse.identity(1, format="csr")
        for other, m in enumerate(shape):
            op = sparse.kron(op, central if other == axis else sparse.identity(m), format="csr")
        blocks.append(op)
    div = sparse.hstack(blocks, format="csr")
    poisson = (div @ div.T).tocsr()
    diag = poisson.diagonal()
    precond = sparse.diags(np.where(diag > 0, 1.0 / np.maximum(diag, 1e-30), 1.0))
    return div, poisson, precond


def project(
    v: np.ndarray,
    tolerance: float = 1e-5,
    max_iterations: int = 600,
    pressure: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Removes the divergence of ``v`` (shape ``(d, *shape)``).

    Solves ``D D^T q = D v`` and returns ``(v - D^T q, q)``. The CG residual
    equals the divergence left in the projected field.
    """
    shape = v.shape[1:]
    div, poisson, precond = _projection_operators(tuple(shape))
    flat = v.reshape(-1).astype(np.float64)
    rhs = div @ flat
    x0 = None if pressure is None else pressure.reshape(-1)
    q, info = cg(poisson, rhs, x0=x0, rtol=0.0, atol=tolerance, maxiter=max_iterations, M=precond)
    if info != 0:
        residual = float(np.linalg.norm(rhs - poisson @ q))
        logger.error(f"Pressure solve stopped after {max_iterations} iterations")
        raise SolverError("pressure solve did not converge", residual)
    projected = flat - div.T @ q
    return projected.reshape(v.shape), q.reshape(shape)


def _interp(arr: np.ndarray, coords: np.ndarray) -> np.ndarray:
    flat = coords.reshape(coords.shape[0], -1)
    return ndimage.map_coordinates(arr, flat, order=1, mode="nearest").reshape(coords.shape[1:])


def advect_maccormack(phi: np.ndarray, v: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """MacCormack advection of a scalar array with clamped correction.

    Cells whose forward or backward trace leaves the domain keep the plain
    semi-Lagrangian value.
    """
    shape = phi.shape
    pos = cell_positions(shape)
    upper = np.array(shape, dtype=np.float64).reshape((-1,) + (1,) * len(shape)) - 1
    back = pos - dt * v
    fwd_pos = pos + dt * v
    outside = np.any((back < 0) | (back > upper) | (fwd_pos < 0) | (fwd_pos > upper), axis=0)
    back = np.clip(back, 0, upper)
    fwd_pos = np.clip(fwd_pos, 0, upper)

    semi = _interp(phi, back)
    returned = _interp(semi, fwd_pos)
    corrected = semi + 0.5 * (phi - returned)
    lo, hi = stencil_bounds(phi, back)
    corrected = np.clip(corrected, lo, hi)
    return np.where(outside, semi, corrected)


def _disc_mask(shape: tuple[int, ...], position: Sequence[float], radius: float) -> np.ndarray:
    pos = cell_positions(shape)
    center = np.asarray(position, dtype=np.float64).reshape((-1,) + (1,) * len(shape))
    return np.sum((pos - center) ** 2, axis=0) <= radius * radius


class SmokeSolver:
    """Steps a single scene; keeps the last pressure as CG warm start."""

    def __init__(self, spec: SceneSpec) -> None:
        self.spec = spec
        self.pressure: np.ndarray | None = None
        self._smoke = [
            (_disc_mask(spec.shape, s.position, s.radius), s.rate) for s in spec.smoke_inflows
        ]
        self._velocity = [
            (
                _disc_mask(spec.shape, s.position, s.radius),
                np.asarray(s.direction, dtype=np.float64) * s.magnitude,
            )
            for s in spec.velocity_inflows
        ]

    def initial_state(self) -> tuple[GridField, GridField]:
        return GridField.zeros(self.spec.shape), GridField.zeros(self.spec.shape, self.spec.dim)

    def step(self, rho: GridField, v: GridField) -> tuple[GridField, GridField]:
        if rho.shape != v.shape or rho.shape != tuple(self.spec.shape):
            raise ValueError(f"state shapes {rho.shape}, {v.shape} do not match scene {self.spec.shape}")
        density = rho.scalar().astype(np.float64)
        vel = v.data.astype(np.float64)

        for mask, rate in self._smoke:
            density[mask] += rate
        for mask, value in self._velocity:
            vel[:, mask] = value[:, None]

        density = advect_maccormack(density, vel)
        vel = np.stack([advect_maccormack(vel[c], vel) for c in range(self.spec.dim)])

        buoyancy = np.asarray(self.spec.buoyancy, dtype=np.float64)
        vel += buoyancy.reshape((-1,) + (1,) * self.spec.dim) * density[None]

        vel, self.pressure = project(
            vel,
            tolerance=self.spec.cg_tolerance,
            max_iterations=self.spec.cg_max_iterations,
            pressure=self.pressure,
        )
        return GridField(density[None].astype(np.float32)), GridField(vel.astype(np.float32))


def solver_step(rho: GridField, v: GridField, spec: SceneSpec) -> tuple[GridField, GridField]:
    """One solver step without warm-start state."""
    return SmokeSolver(spec).step(rho, v)


@dataclass
class ManifestEntry:
    sim: int
    frame: int
    x: dict[str, str]
    y: dict[str, str]
    mean_density_lo: float


@dataclass
class DatasetManifest:
    """Index of a generated dataset; paths are relative to ``root``."""

    entries: list[ManifestEntry]
    scale: int
    mean_density: float
    max_density: float
    train_sims: list[int]
    test_sims: list[int]
    shape: tuple[int, ...] = ()
    root: Path = field(default=Path("."), compare=False)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def validate(self) -> None:
        """Checks that every referenced file exists and parses as TGF1."""
        for entry in self.entries:
            for rel in [*entry.x.values(), *entry.y.values()]:
                read_field(self.path(rel))
        by_sim: dict[int, list[int]] = {}
        for entry in self.entries:
            by_sim.setdefault(entry.sim, []).append(entry.frame)
        for sim, frames in by_sim.items():
            if frames != sorted(frames):
                raise ValueError(f"frames of simulation {sim} are not in order")

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "shape": list(self.shape),
            "statistics": {
                "mean_density": self.mean_density,
                "max_density": self.max_density,
            },
            "split": {"train": self.train_sims, "test": self.test_sims},
            "entries": [
                {
                    "sim": e.sim,
                    "frame": e.frame,
                    "x": dict(e.x),
                    "y": dict(e.y),
                    "mean_density_lo": e.mean_density_lo,
                }
                for e in self.entries
            ],
        }

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        try:
            path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        except OSError as e:
            logger.error(f"Error writing manifest {path}: {e}")
            raise OSError(f"cannot write manifest {path}: {e}") from e
        return path

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as e:
            logger.error(f"Error reading manifest {path}: {e}")
            raise OSError(f"cannot read manifest {path}: {e}") from e
        entries = [
            ManifestEntry(
                sim=int(e["sim"]),
                frame=int(e["frame"]),
                x=dict(e["x"]),
                y=dict(e["y"]),
                mean_density_lo=float(e["mean_density_lo"]),
            )
            for e in raw.get("entries") or []
        ]
        return cls(
            entries=entries,
            scale=int(raw["scale"]),
            mean_density=float(raw["statistics"]["mean_density"]),
            max_density=float(raw["statistics"]["max_density"]),
            train_sims=list(raw["split"]["train"]),
            test_sims=list(raw["split"]["test"]),
            shape=tuple(raw.get("shape") or ()),
            root=path.parent,
        )


@dataclass
class _SimResult:
    entries: list[ManifestEntry]
    max_density: float


def _run_simulation(
    sim: int, scene: SceneSpec, out_dir: Path, scale: int, threshold: float
) -> _SimResult:
    solver = SmokeSolver(scene)
    rho, v = solver.initial_state()
    entries: list[ManifestEntry] = []
    max_density = 0.0
    sim_dir = f"sim_{sim:04d}"
    for t in range(scene.frames):
        rho, v = solver.step(rho, v)
        rho_lo = downsample(rho, scale, "passive")
        mean_lo = float(rho_lo.data.astype(np.float64).mean())
        if mean_lo < threshold:
            continue
        v_lo = downsample(v, scale, "velocity")
        stem = f"{sim_dir}/frame_{t:04d}"
        files = {
            ("x", BundleKey.DENSITY.value): rho_lo,
            ("x", BundleKey.VELOCITY.value): v_lo,
            ("y", BundleKey.DENSITY.value): rho,
            ("y", BundleKey.VELOCITY.value): v,
        }
        paths: dict[str, dict[str, str]] = {"x": {}, "y": {}}
        for (side, name), fld in files.items():
            rel = f"{stem}_{side}_{name}.tgf"
            write_field(out_dir / rel, fld)
            paths[side][name] = rel
        entries.append(ManifestEntry(sim, t, paths["x"], paths["y"], mean_lo))
        max_density = max(max_density, float(rho.data.max()))
    logger.info(f"Simulation {sim}: kept {len(entries)} of {scene.frames} frames")
    if not entries:
        logger.warning(f"Simulation {sim} produced no frame above density {threshold}")
    return _SimResult(entries, max_density)


def split_simulations(n_sims: int, test_fraction: float = 0.2) -> tuple[list[int], list[int]]:
    """Splits simulation ids into train/test; the last ids form the test set."""
    if n_sims < 2:
        return list(range(n_sims)), []
    n_test = max(1, int(round(test_fraction * n_sims)))
    return list(range(n_sims - n_test)), list(range(n_sims - n_test, n_sims))


def generate_dataset(
    n_sims: int,
    seed: int,
    out_dir: str | Path,
    *,
    shape: tuple[int, ...] = (256, 256),
    frames: int = 120,
    scale: int = 4,
    threshold: float = DENSITY_THRESHOLD,
    test_fraction: float = 0.2,
    workers: int = 1,
    ranges: SceneRanges = SceneRanges(),
    scenes: Sequence[SceneSpec] | None = None,
    cg_tolerance: float | None = None,
    cg_max_iterations: int | None = None,
) -> DatasetManifest:
    """Simulates ``n_sims`` random scenes and writes TGF1 frames plus a manifest.

    Args:
        n_sims: Number of simulations (ignored when ``scenes`` is given).
        seed: Master seed; every scene draws from its own spawned stream.
        out_dir: Output directory for fields and ``manifest.yaml``.
        scenes: Explicit scenes to run instead of random ones.

    Returns:
        The manifest that was written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if any(n % scale for n in shape):
        raise ValueError(f"resolution {shape} is not divisible by scale {scale}")
    if scenes is None:
        streams = np.random.SeedSequence(seed).spawn(n_sims)
        scenes = [
            sample_scene(np.random.default_rng(s), tuple(shape), frames, ranges) for s in streams
        ]
    if cg_tolerance is not None:
        scenes = [dataclasses.replace(s, cg_tolerance=cg_tolerance) for s in scenes]
    if cg_max_iterations is not None:
        scenes = [dataclasses.replace(s, cg_max_iterations=cg_max_iterations) for s in scenes]
    n_sims = len(scenes)

    jobs = [(i, scene, out_dir, scale, threshold) for i, scene in enumerate(scenes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_simulation, *zip(*jobs)))
    else:
        results = [_run_simulation(*job) for job in jobs]

    entries = [e for r in results for e in r.entries]
    train, test = split_simulations(n_sims, test_fraction)
    manifest = DatasetManifest(
        entries=entries,
        scale=scale,
        mean_density=float(np.mean([e.mean_density_lo for e in entries])) if entries else 0.0,
        max_density=max((r.max_density for r in results), default=0.0),
        train_sims=train,
        test_sims=test,
        shape=tuple(scenes[0].shape) if scenes else tuple(shape),
        root=out_dir,
    )
    path = manifest.save()
    logger.info(f"Wrote {len(entries)} frames from {n_sims} simulations to {path}")
    return manifest
