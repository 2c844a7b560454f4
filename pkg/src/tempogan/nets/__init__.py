from tempogan.nets.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tempogan.nets.discriminator import (
    Discriminator,
    SpatialDiscriminator,
    TemporalDiscriminator,
    ds_forward,
    dt_forward,
    feature_maps,
    parameter_report,
)
from tempogan.nets.generator import Generator, generator_forward

__all__ = [
    "Checkpoint",
    "Discriminator",
    "Generator",
    "SpatialDiscriminator",
    "TemporalDiscriminator",
    "ds_forward",
    "dt_forward",
    "feature_maps",
    "generator_forward",
    "load_checkpoint",
    "parameter_report",
    "save_checkpoint",
]
