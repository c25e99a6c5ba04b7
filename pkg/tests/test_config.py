import json

import pytest

from duetmotion.config import ConfigError, RunConfig


def test_defaults_pinned():
    cfg = RunConfig()
    assert cfg.num_frames == 30
    assert cfg.extraction.fps == 10.0
    assert cfg.schedule.diffusion_steps == 1000
    assert cfg.schedule.ddim_steps == 50
    assert cfg.extraction.contact_threshold == 0.013
    assert cfg.metrics.contact_threshold == 0.013
    assert cfg.loss.lambda_inter == 0.5
    assert cfg.optimizer.anchor_noise_std == 0.02
    assert cfg.optimizer.p_text == 0.8
    assert cfg.optimizer.p_pose == 0.2
    assert (cfg.net.latent_dim, cfg.net.num_layers, cfg.net.num_heads) == (128, 4, 8)
    assert cfg.metrics.feature_dim == 64


def test_empty_dict_is_default():
    assert RunConfig.from_dict({}) == RunConfig()


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig.from_dict({"nett": {}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig.from_dict({"net": {"latent": 16}})


def test_partial_override_keeps_other_defaults():
    cfg = RunConfig.from_dict({"net": {"latent_dim": 32}})
    assert cfg.net.latent_dim == 32
    assert cfg.net.num_layers == 4
    assert cfg.schedule.diffusion_steps == 1000


def test_value_type_checks():
    with pytest.raises(ConfigError, match="must be a number"):
        RunConfig.from_dict({"net": {"latent_dim": "big"}})
    with pytest.raises(ConfigError, match="must be a number"):
        RunConfig.from_dict({"net": {"latent_dim": True}})
    with pytest.raises(ConfigError, match="must be an integer"):
        RunConfig.from_dict({"schedule": {"ddim_steps": 5.5}})
    with pytest.raises(ConfigError, match="must be an object"):
        RunConfig.from_dict({"net": [1, 2]})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError, match="probabilities"):
        RunConfig.from_dict({"optimizer": {"p_text": 2.0}})
    # a window that is not an integer number of frames
    with pytest.raises(ConfigError, match="positive integer"):
        RunConfig.from_dict({"extraction": {"window_seconds": 0.25}})


def test_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"optimizer": {"train_steps": 7}}))
    assert RunConfig.from_file(path).optimizer.train_steps == 7
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.from_file(bad)


def test_round_trip_via_dict():
    cfg = RunConfig.from_dict({"loss": {"lambda_vel": 2.0}, "metrics": {"knn_k": 5}})
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_hash_stable_and_sensitive():
    a, b = RunConfig(), RunConfig()
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64 and int(a.config_hash(), 16) >= 0
    c = RunConfig.from_dict({"net": {"latent_dim": 32}})
    assert c.config_hash() != a.config_hash()


def test_module_config_adapters():
    cfg = RunConfig.from_dict({
        "net": {"latent_dim": 16, "num_layers": 1, "num_heads": 2},
        "schedule": {"diffusion_steps": 100, "ddim_steps": 8},
        "loss": {"lambda_inter": 0.25, "contact_margin": 0.2},
        "optimizer": {"train_steps": 3, "p_pose": 0.4},
    })
    acfg = cfg.animator_config()
    assert acfg.num_frames == 30 and acfg.latent_dim == 16
    assert acfg.diffusion_steps == 100 and acfg.ddim_steps == 8
    assert acfg.weights.lambda_inter == 0.25 and acfg.weights.contact_threshold == 0.2
    gcfg = cfg.generator_config()
    assert gcfg.p_pose == 0.4 and gcfg.train_steps == 3 and gcfg.num_layers == 1
    ecfg = cfg.extraction_config()
    assert ecfg.frames == 30 and ecfg.contact_threshold == 0.013
    aecfg = cfg.autoencoder_config()
    assert aecfg.feature_dim == 64 and aecfg.hidden_dim == 512
