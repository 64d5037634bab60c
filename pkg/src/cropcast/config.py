"""Run configuration: defaults, JSON loading, merging, stage hashing.

One JSON file with per-stage sections drives the whole pipeline; CLI flags
override individual keys. Every stage's artifacts carry a cumulative hash
of the config sections that influence them (and of everything upstream),
so a downstream command can tell exactly when its inputs went stale.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigError

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "out": "runs/demo",
    "threads": None,
    "grid": {"width": 128, "height": 128, "lon_min": 60.0, "lat_max": 64.0,
             "cell": 0.125},
    "synth": {
        "baseline_years": 10,
        "future_years": 2,
        "class_proportions": [0.40, 0.15, 0.20, 0.25],
        "climate_models": ["alpha", "beta"],
        "ssps": ["ssp-warm", "ssp-hot"],
        "periods": ["2020-2030", "2040-2050"],
        "label_noise": 0.0,
        "include_futures": True,
    },
    "features": {"chunk": 1024},
    "dataset": {
        "undersample": True,
        "train_frac": 0.75,
        "val_frac": 0.15,
        "paper_protocol": False,
    },
    "train": {
        "models": ["logreg", "mlp", "lstm"],
        "epochs": 50,
        "batch_size": 512,
        "lr": 1e-3,
        "patience": 10,
        "mlp_hidden": [128, 128],
        "lstm_hidden": 64,
    },
    "attribute": {
        "model": "mlp",
        "n_reps": 10,
        "steps": 32,
        "scenario": {"climate_model": "alpha", "ssp": "ssp-hot",
                     "period": "2040-2050"},
        "regions": [
            {"name": "north-band", "rect": [64.0, 60.0, 61.0, 76.0],
             "class": 3},
            {"name": "south-band", "rect": [51.0, 60.0, 48.0, 76.0],
             "class": 3},
        ],
    },
    "project": {"model": "lstm"},
    "report": {"top_features": 10, "delta_classes": [3]},
}

#: stage -> config sections that shape its artifacts
STAGE_SECTIONS = {
    "synth": ("grid", "synth"),
    "features": ("features",),
    "train": ("dataset", "train"),
    "eval": (),
    "attribute": ("attribute",),
    "project": ("project",),
    "report": ("report",),
}

#: stage -> stage whose artifacts it consumes
UPSTREAM = {
    "synth": None,
    "features": "synth",
    "train": "features",
    "eval": "train",
    "attribute": "train",
    "project": "train",
    "report": "project",
}

STAGES = tuple(STAGE_SECTIONS)

_MODEL_KINDS = ("logreg", "mlp", "lstm")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- JSON file <- explicit overrides; validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg.get("seed"), int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg.get("threads") is not None:
        if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
            raise ConfigError("threads must be a positive integer")
    grid = cfg["grid"]
    if grid["width"] < 8 or grid["height"] < 8:
        raise ConfigError("grid must be at least 8x8")
    if grid["cell"] <= 0:
        raise ConfigError("grid cell size must be positive")
    props = cfg["synth"]["class_proportions"]
    if len(props) != 4 or any(p < 0 for p in props):
        raise ConfigError("class_proportions needs four non-negative values")
    if abs(sum(props) - 1.0) > 1e-9:
        raise ConfigError("class_proportions must sum to 1")
    if cfg["synth"]["baseline_years"] < 4:
        raise ConfigError("baseline_years must be at least 4 "
                          "(the SPI baseline fit needs them)")
    noise = cfg["synth"]["label_noise"]
    if not isinstance(noise, (int, float)) or not 0.0 <= noise < 0.5:
        raise ConfigError("label_noise must lie in [0, 0.5)")
    if not 0.0 < cfg["dataset"]["train_frac"] < 1.0:
        raise ConfigError("train_frac must be in (0, 1)")
    if not 0.0 < cfg["dataset"]["val_frac"] < 1.0:
        raise ConfigError("val_frac must be in (0, 1)")
    for kind in cfg["train"]["models"]:
        if kind not in _MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
    hidden = cfg["train"]["mlp_hidden"]
    if len(hidden) != 2 or any(not isinstance(h, int) or h < 1
                               for h in hidden):
        raise ConfigError("mlp_hidden must be two positive layer widths")
    if not isinstance(cfg["train"]["lstm_hidden"], int) \
            or cfg["train"]["lstm_hidden"] < 1:
        raise ConfigError("lstm_hidden must be a positive integer")
    for key in ("epochs", "batch_size", "patience"):
        if not isinstance(cfg["train"][key], int) or cfg["train"][key] < 1:
            raise ConfigError(f"train.{key} must be a positive integer")
    if cfg["attribute"]["model"] not in _MODEL_KINDS:
        raise ConfigError("attribute.model must be one of "
                          + ", ".join(_MODEL_KINDS))
    if cfg["project"]["model"] not in _MODEL_KINDS:
        raise ConfigError("project.model must be one of "
                          + ", ".join(_MODEL_KINDS))
    for region in cfg["attribute"]["regions"]:
        rect = region.get("rect")
        if rect is None or len(rect) != 4:
            raise ConfigError("each region needs rect "
                              "[lat_top, lon_left, lat_bottom, lon_right]")
        if not 0 <= int(region.get("class", -1)) <= 3:
            raise ConfigError("each region needs a class in 0..3")


def config_hash(obj) -> str:
    """Stable sha256 of any JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def stage_hash(cfg: dict, stage: str) -> str:
    """Cumulative hash: this stage's sections + seed + upstream hash."""
    if stage not in STAGE_SECTIONS:
        raise ConfigError(f"unknown stage {stage!r}")
    upstream = UPSTREAM[stage]
    payload = {
        "stage": stage,
        "seed": cfg["seed"],
        "sections": {s: cfg[s] for s in STAGE_SECTIONS[stage]},
        "upstream": stage_hash(cfg, upstream) if upstream else None,
    }
    return config_hash(payload)
