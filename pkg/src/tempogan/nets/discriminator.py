"""Spatial and temporal discriminators sharing one convolutional stack."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from tempogan.data.models import DiscriminatorConfig
from tempogan.nets.generator import batch_norm_type, conv_type, init_weights

logger = logging.getLogger(__name__)


class Discriminator(nn.Module):
    """Strided conv stack, leaky ReLU, one fully connected logit.

    ``forward`` returns the sigmoid probability and the post-activation
    output of every conv layer.
    """

    def __init__(self, cfg: DiscriminatorConfig, in_channels: int) -> None:
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        conv = conv_type(cfg.dim)
        norm = batch_norm_type(cfg.dim)
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        cin = in_channels
        for i, (cout, stride) in enumerate(zip(cfg.channels, cfg.strides)):
            padding: int | str = "same" if stride == 1 else (cfg.kernel - stride) // 2
            self.convs.append(conv(cin, cout, cfg.kernel, stride=stride, padding=padding))
            # no normalization on the first layer
            self.norms.append(norm(cout) if cfg.batch_norm and i > 0 else nn.Identity())
            cin = cout
        self.fc = nn.Linear(cin * cfg.feature_size**cfg.dim, 1)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"discriminator expects {self.in_channels} channels, got {x.shape[1]}"
            )
        if tuple(x.shape[2:]) != (self.cfg.tile,) * self.cfg.dim:
            raise ValueError(
                f"discriminator expects {self.cfg.tile}^{self.cfg.dim} tiles, got {tuple(x.shape[2:])}"
            )
        features = []
        h = x
        for conv, bn in zip(self.convs, self.norms):
            h = F.leaky_relu(bn(conv(h)), self.cfg.slope)
            features.append(h)
        logit = self.fc(h.flatten(1))
        return torch.sigmoid(logit).squeeze(1), features


class SpatialDiscriminator(Discriminator):
    """Conditional on the low-resolution density, upsampled to the target size."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()) -> None:
        super().__init__(cfg, 2)

    def inputs(self, x_lo: torch.Tensor, y_hi: torch.Tensor) -> torch.Tensor:
        factor = y_hi.shape[2] // x_lo.shape[2]
        if tuple(n * factor for n in x_lo.shape[2:]) != tuple(y_hi.shape[2:]):
            raise ValueError(
                f"shape mismatch: input {tuple(x_lo.shape[2:])} vs target {tuple(y_hi.shape[2:])}"
            )
        up = F.interpolate(x_lo, scale_factor=factor, mode="nearest")
        return torch.cat([up, y_hi], dim=1)


class TemporalDiscriminator(Discriminator):
    """Unconditional; classifies three consecutive frames stacked as channels."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()) -> None:
        super().__init__(cfg, 3)

    def inputs(self, frames: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(frames) != 3:
            raise ValueError("the temporal discriminator takes exactly 3 frames")
        if not (frames[0].shape == frames[1].shape == frames[2].shape):
            raise ValueError("shape mismatch between triplet frames")
        return torch.cat(list(frames), dim=1)


def ds_forward(d: SpatialDiscriminator, x_lo: torch.Tensor, y_hi: torch.Tensor) -> torch.Tensor:
    return d(d.inputs(x_lo, y_hi))[0]


def dt_forward(d: TemporalDiscriminator, frames: Sequence[torch.Tensor]) -> torch.Tensor:
    return d(d.inputs(frames))[0]


def feature_maps(d: Discriminator, *inputs: torch.Tensor | Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Activations of the four conv layers for the given discriminator inputs."""
    if isinstance(d, (SpatialDiscriminator, TemporalDiscriminator)):
        x = d.inputs(*inputs)  # type: ignore[arg-type]
    else:
        x = inputs[0]  # type: ignore[assignment]
    return d(x)[1]


@dataclass
class ParameterReport:
    rows: list[tuple[str, int, bool]]

    @property
    def total(self) -> int:
        return sum(n for _, n, _ in self.rows)

    @property
    def total_without_bn(self) -> int:
        return sum(n for _, n, bn in self.rows if not bn)

    def format(self) -> str:
        lines = [f"{name:<32} {n:>10}{'  (bn)' if bn else ''}" for name, n, bn in self.rows]
        lines.append(f"{'total':<32} {self.total:>10}")
        lines.append(f"{'total without batch norm':<32} {self.total_without_bn:>10}")
        return "\n".join(lines)


def parameter_report(module: nn.Module) -> ParameterReport:
    """Per-tensor parameter counts; batch-norm affine parameters are flagged."""
    rows = []
    for mod_name, mod in module.named_modules():
        is_bn = isinstance(mod, nn.modules.batchnorm._BatchNorm)
        for p_name, p in mod.named_parameters(recurse=False):
            name = f"{mod_name}.{p_name}" if mod_name else p_name
            rows.append((name, p.numel(), is_bn))
    return ParameterReport(rows)
