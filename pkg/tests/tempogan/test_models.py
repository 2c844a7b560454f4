import dataclasses

import pytest

from tempogan.core.errors import ConfigError
from tempogan.data.models import (
    FEATURE_PRESETS,
    DiscriminatorConfig,
    ExperimentConfig,
    GeneratorConfig,
    LossWeights,
    ResidualBlockSpec,
    SimConfig,
    TemporalVariant,
    TrainConfig,
    config_hash,
    from_mapping,
    to_plain,
)


def test_defaults_are_consistent():
    cfg = ExperimentConfig()
    assert cfg.discriminator.tile == cfg.generator.tile * cfg.generator.factor
    assert cfg.discriminator.feature_size == 8
    assert cfg.generator.in_channels == 3
    assert cfg.losses.uses_dt


def test_in_channels_by_dimension():
    assert GeneratorConfig(input_fields=("density", "velocity", "vorticity")).in_channels == 4
    assert GeneratorConfig(dim=3, input_fields=("density", "velocity", "vorticity")).in_channels == 7
    assert GeneratorConfig(input_fields=("density",)).in_channels == 1


def test_from_mapping_coerces_yaml_values():
    """Verify lists become tuples, strings become enums and nested sections become dataclasses."""
    cfg = from_mapping(
        ExperimentConfig,
        {
            "seed": 4,
            "sim": {"shape": [64, 64], "threshold": "2.0e-2"},
            "generator": {"blocks": [{"channels_a": 4, "channels_b": 1}], "tile": 8},
            "discriminator": {"tile": 32},
            "losses": {"temporal": "l2t", "feature": "mixed"},
        },
    )
    assert cfg.sim.shape == (64, 64)
    assert cfg.sim.threshold == 0.02
    assert cfg.generator.blocks == (ResidualBlockSpec(4, 1),)
    assert cfg.losses.temporal is TemporalVariant.L2T
    assert cfg.losses.feature == FEATURE_PRESETS["mixed"]


def test_plain_form_round_trips():
    cfg = ExperimentConfig(seed=9, losses=LossWeights(temporal=TemporalVariant.DT_UNALIGNED))
    plain = to_plain(cfg)
    assert plain["losses"]["temporal"] == "dt_unaligned"
    assert from_mapping(ExperimentConfig, plain) == cfg


def test_config_hash_tracks_content():
    a = ExperimentConfig()
    assert a.config_hash() == config_hash(ExperimentConfig())
    b = dataclasses.replace(a, train=TrainConfig(iterations=2))
    assert a.config_hash() != b.config_hash()


@pytest.mark.parametrize(
    "data, message",
    [
        ({"bogus": 1}, "unknown key 'bogus'"),
        ({"train": {"lr_schedule": 1}}, "unknown key 'train.lr_schedule'"),
        ({"train": {"iterations": 3}}, "non-negative even"),
        ({"train": {"batch": 1.5}}, "train.batch must be an integer"),
        ({"train": {"k_g": 0}}, ">= 1"),
        ({"sim": {"shape": [30, 32]}}, "not divisible"),
        ({"sim": {"frames": 2}}, "at least 3"),
        ({"losses": {"temporal": "sometimes"}}, "losses.temporal must be one of"),
        ({"losses": {"feature": "loud"}}, "feature preset"),
        ({"losses": {"feature": [1.0, 2.0]}}, "one weight per discriminator layer"),
        ({"augment": {"enabled": "yes"}}, "true or false"),
        ({"infer": {"boundary": "wrap"}}, "infer.boundary must be one of"),
        ({"generator": {"tile": 8}}, "discriminator.tile must equal"),
        ({"generator": {"blocks": [{"channels_a": 2, "channels_b": 2}]}}, "exactly 1 channel"),
        ({"generator": {"input_fields": ["velocity"]}}, "start with density"),
        ({"generator": {"dim": 3}}, "dim differ"),
        ({"sim": [1, 2]}, "sim must be a mapping"),
    ],
)
def test_invalid_documents(data, message):
    with pytest.raises(ConfigError, match=message):
        from_mapping(ExperimentConfig, data)


def test_discriminator_geometry_checks():
    with pytest.raises(ConfigError, match="not divisible by stride"):
        DiscriminatorConfig(kernel=3)
    with pytest.raises(ConfigError, match="not divisible by 8"):
        DiscriminatorConfig(tile=60)
    with pytest.raises(ConfigError, match="differ in length"):
        DiscriminatorConfig(channels=(4, 4))


def test_sim_config_rejects_four_dimensions():
    with pytest.raises(ConfigError, match="2 or 3 entries"):
        SimConfig(shape=(8, 8, 8, 8))
