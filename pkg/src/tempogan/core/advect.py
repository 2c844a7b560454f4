"""Differentiable first-order semi-Lagrangian advection.

The advection of a field ``y`` by a fixed velocity is a sparse linear map
``M y``: every target cell gathers its ``2**d`` multilinear stencil around the
backtraced position ``p - dt v(p)``. ``M`` depends only on the velocity, so the
gradient with respect to ``y`` is the scatter ``M^T g``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from tempogan.core.fields import GridField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdvectionCoeffs:
    """Rows of the advection matrix for a batch of velocity fields.

    Attributes:
        index: Flat source cell indices, shape ``(B, N, 2**d)``.
        weight: Interpolation weights, shape ``(B, N, 2**d)``; rows sum to 1.
        shape: Spatial grid shape.
    """

    index: torch.Tensor
    weight: torch.Tensor
    shape: tuple[int, ...]

    @property
    def batch(self) -> int:
        return self.index.shape[0]

    @property
    def cells(self) -> int:
        return self.index.shape[1]


def _as_batched(v: GridField | torch.Tensor) -> torch.Tensor:
    if isinstance(v, GridField):
        return torch.from_numpy(v.data.copy())[None]
    return v


def build_coeffs(v: GridField | torch.Tensor, dt: float = 1.0) -> AdvectionCoeffs:
    """Stencils of ``p - dt v(p)`` clamped to the domain.

    Args:
        v: Velocity in cells per step, ``GridField`` or tensor ``(B, d, *shape)``.
        dt: Step length; ``-1`` advects forward in time.
    """
    vel = _as_batched(v).detach()
    batch, dim = vel.shape[0], vel.shape[1]
    shape = tuple(vel.shape[2:])
    if dim != len(shape):
        raise ValueError(f"velocity has {dim} components on a {len(shape)}D grid")
    if min(shape) < 2:
        raise ValueError("degenerate grid")

    axes = [torch.arange(n, dtype=vel.dtype, device=vel.device) for n in shape]
    grid = torch.stack(torch.meshgrid(*axes, indexing="ij"))
    pos = grid[None] - dt * vel

    base, frac = [], []
    for a, n in enumerate(shape):
        q = pos[:, a].clamp(0, n - 1)
        i0 = torch.floor(q).clamp(max=n - 2)
        base.append(i0.long().reshape(batch, -1))
        frac.append((q - i0).reshape(batch, -1))

    strides = [1] * len(shape)
    for a in range(len(shape) - 2, -1, -1):
        strides[a] = strides[a + 1] * shape[a + 1]

    index, weight = [], []
    for corner in itertools.product((0, 1), repeat=len(shape)):
        flat = torch.zeros_like(base[0])
        w = torch.ones_like(frac[0])
        for a, bit in enumerate(corner):
            flat = flat + (base[a] + bit) * strides[a]
            w = w * (frac[a] if bit else 1 - frac[a])
        index.append(flat)
        weight.append(w)
    return AdvectionCoeffs(torch.stack(index, -1), torch.stack(weight, -1), shape)


def _check(c: AdvectionCoeffs, y: torch.Tensor) -> None:
    if tuple(y.shape[2:]) != c.shape or y.shape[0] != c.batch:
        raise ValueError(
            f"shape mismatch: field {tuple(y.shape)} vs coefficients {c.batch} x {c.shape}"
        )


def _gather(c: AdvectionCoeffs, y: torch.Tensor) -> torch.Tensor:
    _check(c, y)
    batch, channels = y.shape[:2]
    flat = y.reshape(batch, channels, -1)
    k = c.index.shape[-1]
    idx = c.index.reshape(batch, 1, -1).expand(batch, channels, c.cells * k)
    picked = torch.gather(flat, 2, idx).reshape(batch, channels, c.cells, k)
    out = (picked * c.weight.to(y.dtype)[:, None]).sum(-1)
    return out.reshape(y.shape)


def _scatter(c: AdvectionCoeffs, g: torch.Tensor) -> torch.Tensor:
    _check(c, g)
    batch, channels = g.shape[:2]
    k = c.index.shape[-1]
    contrib = g.reshape(batch, channels, c.cells, 1) * c.weight.to(g.dtype)[:, None]
    idx = c.index.reshape(batch, 1, -1).expand(batch, channels, c.cells * k)
    out = torch.zeros(batch, channels, c.cells, dtype=g.dtype, device=g.device)
    out.scatter_add_(2, idx, contrib.reshape(batch, channels, -1))
    return out.reshape(g.shape)


class _AdvectFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, y, index, weight, shape):  # type: ignore[override]
        coeffs = AdvectionCoeffs(index, weight, shape)
        ctx.save_for_backward(index, weight)
        ctx.shape = shape
        return _gather(coeffs, y)

    @staticmethod
    def backward(ctx, grad_output):  # type: ignore[override]
        index, weight = ctx.saved_tensors
        grad_y = None
        if ctx.needs_input_grad[0]:
            grad_y = _scatter(AdvectionCoeffs(index, weight, ctx.shape), grad_output)
        return grad_y, None, None, None


def apply(c: AdvectionCoeffs, y: GridField | torch.Tensor) -> GridField | torch.Tensor:
    """``M y``; differentiable with respect to ``y`` when given a tensor."""
    if isinstance(y, GridField):
        out = _gather(c, torch.from_numpy(y.data.copy())[None])
        return GridField(out[0].numpy())
    return _AdvectFunction.apply(y, c.index, c.weight, c.shape)


def apply_transpose(c: AdvectionCoeffs, g: GridField | torch.Tensor) -> GridField | torch.Tensor:
    """``M^T g``, the gradient of :func:`apply` with respect to its field."""
    if isinstance(g, GridField):
        out = _scatter(c, torch.from_numpy(g.data.copy())[None])
        return GridField(out[0].numpy())
    return _scatter(c, g)


def advect(y: torch.Tensor, v: torch.Tensor, dt: float = 1.0) -> torch.Tensor:
    return apply(build_coeffs(v, dt), y)  # type: ignore[return-value]


def upsample_velocity(v: torch.Tensor, factor: int) -> torch.Tensor:
    """Nearest-neighbour upsampling of ``(B, d, *shape)`` velocities, rescaled by ``factor``."""
    out = v
    for axis in range(2, v.dim()):
        out = out.repeat_interleave(factor, dim=axis)
    return out * factor


def align_triplet(
    frames: Sequence[torch.Tensor],
    v_prev: torch.Tensor,
    v_next: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Advects frames ``t-1`` and ``t+1`` onto frame ``t``.

    Returns ``(A(f0, v_prev), f1, A(f2, -v_next))``. Velocities given at a lower
    resolution than the frames are upsampled first.
    """
    if len(frames) != 3:
        raise ValueError("a triplet needs exactly 3 frames")
    f0, f1, f2 = frames
    if f0.shape != f1.shape or f1.shape != f2.shape:
        raise ValueError("triplet frames differ in shape")
    size = f1.shape[2]
    if v_prev.shape[2] != size:
        factor = size // v_prev.shape[2]
        v_prev = upsample_velocity(v_prev, factor)
        v_next = upsample_velocity(v_next, factor)
    return advect(f0, v_prev, 1.0), f1, advect(f2, v_next, -1.0)
