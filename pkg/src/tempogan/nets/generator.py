"""Fully convolutional residual generator."""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from tempogan.core.fields import BundleKey, GridField
from tempogan.data.models import GeneratorConfig

logger = logging.getLogger(__name__)


def conv_type(dim: int) -> type[nn.Module]:
    return {2: nn.Conv2d, 3: nn.Conv3d}[dim]


def batch_norm_type(dim: int) -> type[nn.Module]:
    return {2: nn.BatchNorm2d, 3: nn.BatchNorm3d}[dim]


def init_weights(module: nn.Module) -> None:
    """Gaussian weights (std 0.02) and zero biases for conv and linear layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    """``ReLU((C_A, BN, ReLU, C_B, BN)(x) + (C_S, BN)(x))`` with a 1x1 shortcut C_S."""

    def __init__(
        self, dim: int, cin: int, ca: int, cb: int, kernel: int, batch_norm: bool
    ) -> None:
        super().__init__()
        conv = conv_type(dim)
        norm = batch_norm_type(dim)
        pad = kernel // 2
        self.conv_a = conv(cin, ca, kernel, padding=pad)
        self.bn_a = norm(ca) if batch_norm else nn.Identity()
        self.conv_b = conv(ca, cb, kernel, padding=pad)
        self.bn_b = norm(cb) if batch_norm else nn.Identity()
        self.skip = conv(cin, cb, 1)
        self.bn_s = norm(cb) if batch_norm else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.bn_a(self.conv_a(x)))
        h = self.bn_b(self.conv_b(h))
        return F.relu(h + self.bn_s(self.skip(x)))


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()) -> None:
        super().__init__()
        self.cfg = cfg
        blocks = []
        cin = cfg.in_channels
        for i, spec in enumerate(cfg.blocks):
            last = i == len(cfg.blocks) - 1
            bn = cfg.batch_norm and not last
            blocks.append(
                ResidualBlock(cfg.dim, cin, spec.channels_a, spec.channels_b, cfg.kernel, bn)
            )
            cin = spec.channels_b
        self.blocks = nn.Sequential(*blocks)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != self.cfg.dim + 2 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"generator expects {self.cfg.in_channels} input channels on a "
                f"{self.cfg.dim}D grid, got {tuple(x.shape)}"
            )
        up = F.interpolate(x, scale_factor=self.cfg.factor, mode="nearest")
        return self.blocks(up)


def bundle_tensor(
    bundle: Mapping[str, GridField], input_fields: tuple[str, ...]
) -> torch.Tensor:
    """Stacks the selected fields of a bundle into a ``(1, C, *shape)`` tensor."""
    parts = []
    for name in input_fields:
        key = BundleKey(name)
        if key not in bundle:
            raise ValueError(f"input bundle lacks '{name}'")
        parts.append(bundle[key].data)
    return torch.from_numpy(np.concatenate(parts, axis=0))[None]


def generator_forward(
    model: Generator, x: torch.Tensor | Mapping[str, GridField]
) -> torch.Tensor:
    """Runs the generator on a tensor batch or a single input bundle."""
    if not isinstance(x, torch.Tensor):
        x = bundle_tensor(x, model.cfg.input_fields)
    param = next(model.parameters())
    return model(x.to(device=param.device, dtype=param.dtype))
