"""Discriminator and generator loss terms.

Norms are means over elements so weights carry over between tile sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Sequence

import torch

from tempogan.core.advect import align_triplet
from tempogan.data.models import FEATURE_PRESETS, LossWeights, TemporalVariant

logger = logging.getLogger(__name__)

EPS = 1e-7

__all__ = [
    "EPS",
    "FEATURE_PRESETS",
    "GeneratorLossTerms",
    "LossWeights",
    "TemporalVariant",
    "d_loss",
    "feature_loss",
    "g_adv_loss",
    "l1_loss",
    "l2_loss",
    "l2_temporal",
    "total_g_loss",
]


def _probs(p: torch.Tensor | Sequence[float] | float) -> torch.Tensor:
    t = torch.as_tensor(p)
    if not t.is_floating_point():
        t = t.double()
    return t.clamp(EPS, 1 - EPS)


def d_loss(real_probs, fake_probs) -> torch.Tensor:
    """Binary cross entropy of a discriminator: real labelled 1, fake labelled 0."""
    real = _probs(real_probs)
    fake = _probs(fake_probs)
    return (-torch.log(real)).mean() + (-torch.log(1 - fake)).mean()


def g_adv_loss(fake_probs_s=None, fake_probs_t=None) -> torch.Tensor:
    """Non-saturating generator loss ``-log D`` summed over the active discriminators."""
    total = torch.zeros((), dtype=torch.float64)
    for p in (fake_probs_s, fake_probs_t):
        if p is not None:
            term = (-torch.log(_probs(p))).mean()
            total = total.to(term.dtype) + term
    return total


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(generated: torch.Tensor, target: torch.Tensor, weight: float = 5.0) -> torch.Tensor:
    _same_shape(generated, target)
    return weight * (generated - target).abs().mean()


def l2_loss(generated: torch.Tensor, target: torch.Tensor, weight: float = 1.0) -> torch.Tensor:
    _same_shape(generated, target)
    return weight * ((generated - target) ** 2).mean()


def feature_loss(
    generated: Sequence[torch.Tensor],
    reference: Sequence[torch.Tensor],
    weights: Sequence[float] = FEATURE_PRESETS["negative"],
) -> torch.Tensor:
    """``sum_j w_j * mean((F_j(G(x)) - F_j(y))^2)``; weights may be negative."""
    if not (len(generated) == len(reference) == len(weights)):
        raise ValueError(
            f"layer count mismatch: {len(generated)} generated, {len(reference)} reference, "
            f"{len(weights)} weights"
        )
    total = torch.zeros((), dtype=generated[0].dtype if generated else torch.float32)
    for a, b, w in zip(generated, reference, weights):
        _same_shape(a, b)
        total = total + w * ((a - b) ** 2).mean()
    return total


def l2_temporal(
    outputs: Sequence[torch.Tensor],
    v_prev: torch.Tensor,
    v_next: torch.Tensor,
    mode: str = "double",
) -> torch.Tensor:
    """Squared difference between the centre frame and its advected neighbours.

    ``single`` compares against the previous frame advected forward; ``double``
    adds the next frame advected backward.
    """
    if mode not in ("single", "double"):
        raise ValueError(f"unknown temporal mode '{mode}'")
    prev, centre, nxt = align_triplet(outputs, v_prev, v_next)
    loss = ((centre - prev) ** 2).mean()
    if mode == "double":
        loss = loss + ((centre - nxt) ** 2).mean()
    return loss


@dataclass
class GeneratorLossTerms:
    """Individually reported generator loss components (already weighted)."""

    adv_s: torch.Tensor | float = 0.0
    adv_t: torch.Tensor | float = 0.0
    feature: torch.Tensor | float = 0.0
    l1: torch.Tensor | float = 0.0
    l2: torch.Tensor | float = 0.0
    temporal: torch.Tensor | float = 0.0

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def total_g_loss(terms: GeneratorLossTerms) -> torch.Tensor:
    total = torch.zeros(())
    for f in fields(terms):
        total = total + getattr(terms, f.name)
    return total
