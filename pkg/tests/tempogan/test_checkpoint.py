import dataclasses

import pytest
import torch

from tempogan.core.errors import CheckpointError
from tempogan.nets.checkpoint import (
    CHECKPOINT_VERSION,
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)


def test_save_then_load_restores_state(tmp_path, tiny_config):
    torch.manual_seed(0)
    ckpt = Checkpoint.fresh(tiny_config)
    ckpt.iteration = 7
    opt = torch.optim.Adam(ckpt.generator.parameters())
    path = save_checkpoint(tmp_path / "run" / "ckpt.pt", ckpt, {"generator": opt})
    assert ckpt.path == path

    loaded = load_checkpoint(path, expected=tiny_config)
    assert loaded.iteration == 7
    assert loaded.config == tiny_config
    assert "generator" in loaded.optimizers
    for a, b in zip(ckpt.generator.state_dict().values(), loaded.generator.state_dict().values()):
        assert torch.equal(a, b)
    for a, b in zip(ckpt.dt.state_dict().values(), loaded.dt.state_dict().values()):
        assert torch.equal(a, b)


def test_config_hash_mismatch(tmp_path, tiny_config):
    path = save_checkpoint(tmp_path / "c.pt", Checkpoint.fresh(tiny_config))
    other = dataclasses.replace(tiny_config, seed=tiny_config.seed + 1)
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(path, expected=other)
    # without an expectation any valid checkpoint loads
    assert load_checkpoint(path).config.seed == tiny_config.seed


def test_unknown_version(tmp_path, tiny_config):
    path = tmp_path / "old.pt"
    payload = {
        "version": CHECKPOINT_VERSION + 1,
        "config": tiny_config.to_dict(),
        "config_hash": tiny_config.config_hash(),
    }
    torch.save(payload, path)
    with pytest.raises(CheckpointError, match="unsupported checkpoint version"):
        load_checkpoint(path)


def test_tampered_config_is_rejected(tmp_path, tiny_config):
    path = tmp_path / "t.pt"
    save_checkpoint(path, Checkpoint.fresh(tiny_config))
    payload = torch.load(path, weights_only=True)
    payload["config"]["seed"] = 99
    torch.save(payload, path)
    with pytest.raises(CheckpointError, match="does not match its hash"):
        load_checkpoint(path)


def test_garbage_file(tmp_path):
    path = tmp_path / "garbage.pt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="garbage.pt"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError, match="missing.pt"):
        load_checkpoint(tmp_path / "missing.pt")
