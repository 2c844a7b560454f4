"""Applying a trained generator: full-domain, tiled and recursive inference."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
import torch

from tempogan.core import advect
from tempogan.core.errors import MemoryBudgetError
from tempogan.core.fields import (
    Bundle,
    BundleKey,
    FramePair,
    GridField,
    curl,
    downsample,
    gradient_magnitude,
    upsample_nn,
)
from tempogan.nets.checkpoint import Checkpoint
from tempogan.nets.generator import Generator

logger = logging.getLogger(__name__)

# low-res cells that can reach an output cell through the generator's convolutions
RECEPTIVE_MARGIN = 4

Boundary = Literal["clip", "clamp"]


@dataclass(frozen=True)
class TileWindow:
    """Input window and the core it is responsible for, both ``(start, stop)`` per axis.

    In ``clamp`` mode the input window may extend past the domain; those
    cells are filled by edge replication.
    """

    input: tuple[tuple[int, int], ...]
    core: tuple[tuple[int, int], ...]

    def crop(self, factor: int) -> tuple[slice, ...]:
        """Slice of the window's output that belongs to the core."""
        return tuple(
            slice((c0 - i0) * factor, (c1 - i0) * factor)
            for (i0, _), (c0, c1) in zip(self.input, self.core)
        )

    def target(self, factor: int) -> tuple[slice, ...]:
        return tuple(slice(c0 * factor, c1 * factor) for c0, c1 in self.core)


@dataclass(frozen=True)
class TilePlan:
    shape: tuple[int, ...]
    core: int
    overlap: int
    boundary: Boundary
    windows: tuple[TileWindow, ...]


def plan_tiles(
    shape: Sequence[int], core: int, overlap: int = 3, boundary: Boundary = "clip"
) -> TilePlan:
    """Splits a low-resolution domain into cores of size ``core`` with ``overlap`` margins."""
    if core < 1 or overlap < 0:
        raise ValueError("tile core must be >= 1 and overlap >= 0")
    per_axis = []
    for n in shape:
        spans = []
        for start in range(0, n, core):
            stop = min(start + core, n)
            lo, hi = start - overlap, stop + overlap
            if boundary == "clip":
                lo, hi = max(lo, 0), min(hi, n)
            spans.append(((lo, hi), (start, stop)))
        per_axis.append(spans)
    windows = tuple(
        TileWindow(tuple(s[0] for s in combo), tuple(s[1] for s in combo))
        for combo in itertools.product(*per_axis)
    )
    plan = TilePlan(tuple(shape), core, overlap, boundary, windows)
    logger.info(f"Tile plan: {len(windows)} tiles of core {core} with overlap {overlap}")
    return plan


def _model(model: Checkpoint | Generator) -> Generator:
    gen = model.generator if isinstance(model, Checkpoint) else model
    gen.eval()
    return gen


def input_array(bundle: Mapping[str, GridField], input_fields: Sequence[str]) -> np.ndarray:
    """Stacks a bundle into generator channels, computing vorticity when it is missing."""
    parts = []
    for name in input_fields:
        key = BundleKey(name)
        if key in bundle:
            parts.append(bundle[key].data)
        elif key is BundleKey.VORTICITY and BundleKey.VELOCITY in bundle:
            parts.append(curl(bundle[BundleKey.VELOCITY]).data)
        else:
            raise ValueError(f"input bundle lacks '{name}'")
    return np.concatenate(parts, axis=0)


def _run(gen: Generator, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != gen.cfg.in_channels:
        raise ValueError(
            f"channel mismatch: generator expects {gen.cfg.in_channels}, got {x.shape[0]}"
        )
    param = next(gen.parameters())
    with torch.no_grad():
        out = gen(torch.from_numpy(np.ascontiguousarray(x))[None].to(param.device, param.dtype))
    return out[0].cpu().numpy()


def infer_full(model: Checkpoint | Generator, x: Mapping[str, GridField]) -> GridField:
    """One generator pass over the whole domain; densities are clamped at zero."""
    gen = _model(model)
    out = _run(gen, input_array(x, gen.cfg.input_fields))
    return GridField(np.maximum(out, 0.0))


def infer_tiled(
    model: Checkpoint | Generator, x: Mapping[str, GridField], plan: TilePlan
) -> GridField:
    """Evaluates every window of ``plan`` and assembles the cores."""
    gen = _model(model)
    arr = input_array(x, gen.cfg.input_fields)
    shape = arr.shape[1:]
    if tuple(shape) != plan.shape:
        raise ValueError(f"tile plan covers {plan.shape}, input is {tuple(shape)}")
    f = gen.cfg.factor
    out = np.zeros((1, *(n * f for n in shape)), dtype=np.float32)
    for w in plan.windows:
        src = tuple(slice(max(a, 0), min(b, n)) for (a, b), n in zip(w.input, shape))
        pad = [(0, 0)] + [
            (max(0, -a), max(0, b - n)) for (a, b), n in zip(w.input, shape)
        ]
        tile = arr[(slice(None), *src)]
        if any(p != (0, 0) for p in pad):
            tile = np.pad(tile, pad, mode="edge")
        res = _run(gen, tile)
        out[(slice(None), *w.target(f))] = res[(slice(None), *w.crop(f))]
    return GridField(np.maximum(out, 0.0))


@dataclass(frozen=True)
class VelocityControl:
    """Replaces the velocity handed to the generator."""

    kind: Literal["scale", "zero", "field"] = "scale"
    scale: float = 1.0
    field: GridField | None = None


def modify_velocity(x: Bundle, control: VelocityControl) -> Bundle:
    """Density untouched; velocity scaled, zeroed or replaced; vorticity recomputed."""
    if BundleKey.VELOCITY not in x:
        raise ValueError("bundle has no velocity to modify")
    v = x[BundleKey.VELOCITY]
    if control.kind == "scale":
        new_v = GridField(v.data * np.float32(control.scale))
    elif control.kind == "zero":
        new_v = GridField(np.zeros_like(v.data))
    else:
        if control.field is None or control.field.data.shape != v.data.shape:
            raise ValueError("procedural velocity must match the input velocity's shape")
        new_v = control.field
    out = dict(x)
    out[BundleKey.VELOCITY] = new_v
    if BundleKey.VORTICITY in x:
        out[BundleKey.VORTICITY] = curl(new_v)
    return out


def suggested_core(max_cells: int, dim: int, factor: int, overlap: int) -> int:
    """Largest core whose padded window output stays within ``max_cells``."""
    side = int(math.floor(max_cells ** (1.0 / dim) / factor)) - 2 * overlap
    return max(1, side)


def infer_recursive(
    model: Checkpoint | Generator,
    x: Mapping[str, GridField],
    times: int,
    downsample_between: bool = False,
    max_cells: int = 2**26,
    plan_core: int | None = None,
    overlap: int = RECEPTIVE_MARGIN,
) -> GridField:
    """Feeds the generator its own output ``times`` times.

    The velocity of later passes is the nearest-neighbour upsampled velocity of
    the previous pass. With ``downsample_between`` each intermediate result is
    halved before the next pass, for a total factor of ``4**times / 2**(times - 1)``
    instead of ``4**times``.

    Raises:
        MemoryBudgetError: a pass without tile plan would exceed ``max_cells`` outputs.
    """
    if times < 1:
        raise ValueError("times must be >= 1")
    gen = _model(model)
    f = gen.cfg.factor
    bundle: dict = dict(x)
    density = bundle[BundleKey.DENSITY]
    for n in range(times):
        cells = int(np.prod(density.shape)) * f**density.dim
        if plan_core is None and cells > max_cells:
            core = suggested_core(max_cells, density.dim, f, overlap)
            logger.error(f"Recursive pass {n + 1} needs {cells} output cells")
            raise MemoryBudgetError(
                f"pass {n + 1} produces {cells} cells, budget is {max_cells}", core
            )
        if plan_core is None:
            density = infer_full(gen, bundle)
        else:
            density = infer_tiled(gen, bundle, plan_tiles(density.shape, plan_core, overlap))
        if n == times - 1:
            break
        velocity = upsample_nn(bundle[BundleKey.VELOCITY], f, "velocity")
        if downsample_between:
            density = downsample(density, 2, "passive")
            velocity = downsample(velocity, 2, "velocity")
        bundle = {BundleKey.DENSITY: density, BundleKey.VELOCITY: velocity}
    return density


@dataclass(frozen=True)
class TemporalMetric:
    frame: int
    advected: float
    raw: float


def temporal_metric(
    outputs: Sequence[GridField], velocities: Sequence[GridField]
) -> list[TemporalMetric]:
    """Per-frame mean ``|G_t - A(G_{t-1}, v_{t-1})|`` and raw ``|G_t - G_{t-1}|``.

    Velocities may be given at the input resolution; they are upsampled.
    """
    if len(outputs) < 2:
        raise ValueError("temporal metric needs at least 2 frames")
    if len(velocities) < len(outputs) - 1:
        raise ValueError("one velocity per frame is required")
    rows = []
    for t in range(1, len(outputs)):
        prev, cur = outputs[t - 1], outputs[t]
        v = velocities[t - 1]
        if v.shape != cur.shape:
            v = upsample_nn(v, cur.shape[0] // v.shape[0], "velocity")
        moved = advect.apply(advect.build_coeffs(v), prev)
        adv = float(np.mean(np.abs(cur.data.astype(np.float64) - moved.data)))  # type: ignore[union-attr]
        raw = float(np.mean(np.abs(cur.data.astype(np.float64) - prev.data)))
        rows.append(TemporalMetric(t, adv, raw))
    return rows


def psnr(output: GridField, reference: GridField, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; the peak defaults to the reference maximum."""
    if output.data.shape != reference.data.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((output.data.astype(np.float64) - reference.data) ** 2))
    peak = float(reference.data.max()) if peak is None else peak
    if mse == 0.0:
        return math.inf
    if peak <= 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / mse)


def detail(output: GridField) -> float:
    """Mean gradient magnitude of a density, used as a proxy for small-scale detail."""
    return float(gradient_magnitude(output).mean())


def mass(output: GridField) -> float:
    return float(output.data.astype(np.float64).sum())


@dataclass
class Evaluation:
    """Per-frame metric rows ``(frame, metric, value)`` and their means."""

    rows: list[tuple[int, str, float]]
    summary: dict[str, float]


def evaluate_sequence(model: Checkpoint | Generator, pairs: Sequence[FramePair]) -> Evaluation:
    """Infers consecutive frames and scores temporal coherence, PSNR, detail and mass."""
    if not pairs:
        raise ValueError("nothing to evaluate")
    outputs = [infer_full(model, p.x) for p in pairs]
    rows: list[tuple[int, str, float]] = []
    for p, out in zip(pairs, outputs):
        rows.append((p.index, "detail", detail(out)))
        rows.append((p.index, "mass", mass(out)))
        if BundleKey.DENSITY in p.y:
            rows.append((p.index, "psnr", psnr(out, p.y[BundleKey.DENSITY])))
    if len(pairs) >= 2:
        velocities = [p.x[BundleKey.VELOCITY] for p in pairs]
        for m in temporal_metric(outputs, velocities):
            rows.append((pairs[m.frame].index, "temporal_advected", m.advected))
            rows.append((pairs[m.frame].index, "temporal_raw", m.raw))
    summary: dict[str, list[float]] = {}
    for _, name, value in rows:
        summary.setdefault(name, []).append(value)
    return Evaluation(rows, {k: float(np.mean(v)) for k, v in summary.items()})
