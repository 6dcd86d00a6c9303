import json

import pytest

from pyramidssl import config as C
from pyramidssl.errors import ConfigError


def test_defaults_validate_for_both_profiles():
    for profile in ("desk", "full"):
        cfg = C.resolve({"profile": profile})
        assert set(C.SECTIONS) <= set(cfg)
    full = C.defaults("full")
    assert full["pretext"]["input_size"] == 112 and full["train"]["pretext"]["lr0"] == 2e-5
    assert full["train"]["downstream"]["epochs"] == 120 and full["train"]["downstream"]["batch"] == 2
    assert full["model"]["preset"] == "vgg16-shape"
    with pytest.raises(ConfigError):
        C.defaults("laptop")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="synth.colour"):
        C.resolve({"synth": {"colour": 1}})
    with pytest.raises(ConfigError):
        C.resolve({"extras": {}})
    with pytest.raises(ConfigError):
        C.resolve({"train": {"pretext": {"momentum": 0.9}}})


def test_overrides_merge_and_seed():
    cfg = C.resolve({"pretext": {"count": 50}, "seed": 4}, seed=9)
    assert cfg["pretext"]["count"] == 50 and cfg["pretext"]["n"] == 2 and cfg["seed"] == 9
    assert C.sampler_config(cfg).seed == 9


def test_module_invariants_checked():
    bad = [
        {"synth": {"train_per_class": 0}},
        {"pretext": {"level_probs": [0.5, 0.6, 0.1]}},
        {"pretext": {"task": "jigsaw"}},
        {"model": {"preset": "resnet"}},
        {"train": {"downstream": {"epochs": 3}}},
        {"downstream": {"split_mode": "slide"}},
        {"eval": {"variants": ["imagenet"]}},
        {"eval": {"variants": ["external-weights"]}},
        {"eval": {"fractions": [0.0]}},
        {"synth": "big"},
    ]
    for doc in bad:
        with pytest.raises(ConfigError):
            C.resolve(doc)


def test_typed_views():
    cfg = C.resolve({"model": {"blocks": [[4, 1], [8, 2]]}})
    assert C.encoder_spec(cfg).blocks == [(4, 1), (8, 2)]
    assert C.encoder_spec(C.resolve()).latent_dim == 32
    assert C.pretext_schedule(cfg).actions == [["lr", 1e-4], ["batch", 64]]
    assert C.downstream_schedule(cfg).stage1_epochs == 4


def test_load_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"synth": {"base_size": 64}}))
    assert C.load(tmp_path / "c.json")["synth"]["base_size"] == 64
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        C.load(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        C.load(tmp_path / "missing.json")


def test_keys_of():
    keys = C.keys_of(C.defaults(), "train")
    assert "train.pretext.lr0" in keys and "train.downstream.peak_lr" in keys
