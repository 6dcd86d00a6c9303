"""JSON run configuration: defaults for two profiles, merging, validation.

A config document has a top-level ``profile`` ("desk" or "full"), a
``seed`` and one section per stage. Only keys present in the chosen
profile's defaults are accepted; anything else is a :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict

from .downstream import DownstreamConfig
from .errors import ConfigError, PyramidSSLError
from .evaluation import VARIANTS
from .model import PRESETS, EncoderSpec
from .pretext import SamplerConfig
from .synth import CohortConfig
from .train import DownstreamSchedule, PretextSchedule

SECTIONS = ("synth", "pretext", "model", "train", "downstream", "eval")


def _desk() -> dict:
    return {
        "profile": "desk",
        "seed": 0,
        "synth": asdict(CohortConfig()),
        "pretext": {
            **{k: v for k, v in asdict(SamplerConfig()).items() if k != "seed"},
            "level_probs": [0.4, 0.4, 0.2],
            "task": "location",
            "count": 20000,
            "split_ratio": [0.92, 0.08],
        },
        "model": {"preset": "desk", "blocks": None, "kernel": 3, "hidden": 256},
        "train": {
            "pretext": {**asdict(PretextSchedule()), "lr0": 1e-3,
                        "actions": [["lr", 1e-4], ["batch", 64]], "max_epochs": 30},
            "downstream": {**asdict(DownstreamSchedule()), "epochs": 40, "batch": 16,
                           "stage1": [[2, 1e-3], [2, 1e-4]], "peak_lr": 1e-3},
        },
        "downstream": asdict(DownstreamConfig()),
        "eval": {
            "variants": ["location-ssl", "random-init"],
            "fractions": [0.33, 0.66, 1.0],
            "runs": 5,
            "external_weights": None,
        },
    }


def _full() -> dict:
    cfg = _desk()
    cfg["profile"] = "full"
    cfg["synth"].update(levels=6, base_size=256, roi_size=4096, memory_budget_mb=8192.0)
    cfg["pretext"].update(patch_size=256, input_size=112, count=784495)
    cfg["model"].update(preset="vgg16-shape")
    cfg["train"]["pretext"] = {**asdict(PretextSchedule()), "actions": [["lr", 1e-4], ["batch", 64]]}
    cfg["train"]["downstream"] = {**asdict(DownstreamSchedule()),
                                  "stage1": [[2, 1e-3], [2, 1e-4]]}
    cfg["downstream"].update(tile=1024, input_size=112)
    # external-weights joins once eval.external_weights names a checkpoint
    cfg["eval"]["variants"] = ["location-ssl", "pair-ssl", "random-init"]
    return cfg


PROFILES = {"desk": _desk, "full": _full}


def defaults(profile: str = "desk") -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return PROFILES[profile]()


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "textures":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def resolve(document: dict | None = None, seed: int | None = None) -> dict:
    """Defaults of the requested profile, overlaid with ``document`` and validated."""
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(defaults(document.get("profile", "desk")), document)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def load(path: str | os.PathLike | None, seed: int | None = None) -> dict:
    if path is None:
        return resolve({}, seed)
    try:
        with open(path) as fh:
            document = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve(document, seed)


# -- typed views ------------------------------------------------------------

def cohort_config(cfg: dict) -> CohortConfig:
    return CohortConfig(**cfg["synth"])


def sampler_config(cfg: dict) -> SamplerConfig:
    keys = SamplerConfig.__dataclass_fields__
    return SamplerConfig(**{k: v for k, v in cfg["pretext"].items() if k in keys}, seed=cfg["seed"])


def encoder_spec(cfg: dict) -> EncoderSpec:
    m = cfg["model"]
    if m["blocks"] is not None:
        return EncoderSpec(m["blocks"], m["kernel"])
    return EncoderSpec(list(EncoderSpec.preset(m["preset"]).blocks), m["kernel"])


def pretext_schedule(cfg: dict) -> PretextSchedule:
    return PretextSchedule(**cfg["train"]["pretext"])


def downstream_schedule(cfg: dict) -> DownstreamSchedule:
    return DownstreamSchedule(**cfg["train"]["downstream"])


def downstream_config(cfg: dict) -> DownstreamConfig:
    return DownstreamConfig(**cfg["downstream"])


def validate(cfg: dict) -> None:
    try:
        cohort_config(cfg).validate()
        sampler_config(cfg).validate()
        if cfg["model"]["preset"] not in PRESETS:
            raise ConfigError(f"unknown model preset {cfg['model']['preset']!r}")
        encoder_spec(cfg)
        pretext_schedule(cfg).validate()
        downstream_schedule(cfg).validate()
        downstream_config(cfg).validate()
    except PyramidSSLError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    p = cfg["pretext"]
    if p["task"] not in ("location", "pair"):
        raise ConfigError(f"pretext.task must be 'location' or 'pair', got {p['task']!r}")
    if int(p["count"]) < 2:
        raise ConfigError("pretext.count must be at least 2")
    if len(p["split_ratio"]) != 2 or min(p["split_ratio"]) < 0 or sum(p["split_ratio"]) <= 0:
        raise ConfigError("pretext.split_ratio must be two non-negative weights")
    e = cfg["eval"]
    bad = set(e["variants"]) - set(VARIANTS)
    if bad:
        raise ConfigError(f"unknown eval variants {sorted(bad)}")
    if int(e["runs"]) < 1:
        raise ConfigError("eval.runs must be positive")
    if any(not 0 < f <= 1 for f in e["fractions"]):
        raise ConfigError("eval.fractions must lie in (0, 1]")
    if "external-weights" in e["variants"] and not e["external_weights"]:
        raise ConfigError("variant 'external-weights' needs eval.external_weights")


def keys_of(cfg: dict, section: str) -> list[str]:
    """Dotted key names under ``section``, for help text."""
    out = []

    def walk(node, prefix):
        for k, v in node.items():
            if isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            else:
                out.append(f"{prefix}{k}")

    walk(cfg[section], f"{section}.")
    return out
