"""Run-config files: strict loading, dotted overrides, schema validation.

Configs are YAML (or JSON; YAML is a superset). Unknown keys are rejected,
not ignored, so typos fail fast. ``--set a.b=c`` overrides parse their value
as YAML scalars.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import yaml

from .errors import ConfigError
from .trainer import RunConfig

# section -> allowed keys; None marks scalar top-level keys
_SCHEMA: dict[str, set[str] | None] = {
    "run_id": None,
    "task": None,
    "transform": None,
    "encoder": {"backend", "width"},
    "dataset_name": None,
    "data": {"train", "dev", "test"},
    "learning_rate": None,
    "batch_size": None,
    "max_sequence_length": None,
    "epochs": None,
    "seeds": None,
    "encoder_width": None,
    "head": {"sc_feature_mode", "oe_feature_mode", "mlp_hidden", "dropout",
             "lambda_l2"},
    "early_stop_patience": None,
    "grad_clip": None,
    "dev_split_seed": None,
    "dev_size": None,
    "dev_fraction": None,
    "oe_aggregation": None,
    "prompt": None,
    "checkpoint_root": None,
    "out_dir": None,
}


def _validate_keys(raw: dict) -> None:
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            for sub in value:
                if sub not in allowed:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place."""
    key, sep, value = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    parts = key.strip().split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through scalar key {part!r}")
    node[parts[-1]] = yaml.safe_load(value)


def load_run_config(
    path: str | Path, overrides: Sequence[str] = ()
) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    for assignment in overrides:
        apply_override(raw, assignment)
    _validate_keys(raw)
    return build_run_config(raw)


def build_run_config(raw: dict) -> RunConfig:
    """Map a validated config dict onto RunConfig fields."""
    data = raw.get("data", {}) or {}
    head = raw.get("head", {}) or {}
    enc = raw.get("encoder", {}) or {}
    kwargs = dict(
        task=raw.get("task"),
        transform=raw.get("transform"),
        train_path=data.get("train"),
        dev_path=data.get("dev"),
        test_path=data.get("test"),
    )
    if kwargs["task"] is None or kwargs["transform"] is None:
        raise ConfigError("config must set 'task' and 'transform'")
    if enc.get("backend") is not None:
        kwargs["backend"] = enc["backend"]
    if enc.get("width") is not None:
        kwargs["encoder_width"] = enc["width"]
    passthrough = (
        "run_id", "dataset_name", "learning_rate", "batch_size",
        "max_sequence_length", "epochs", "early_stop_patience",
        "grad_clip", "dev_split_seed", "dev_size", "dev_fraction",
        "oe_aggregation", "checkpoint_root", "out_dir",
    )
    for key in passthrough:
        if key in raw and raw[key] is not None:
            kwargs[key] = raw[key]
    if raw.get("seeds") is not None:
        kwargs["seeds"] = tuple(raw["seeds"])
    if raw.get("prompt") is not None:
        kwargs["prompt_words"] = tuple(raw["prompt"])
    renames = {"dropout": "dropout", "lambda_l2": "lambda_l2",
               "sc_feature_mode": "sc_feature_mode",
               "oe_feature_mode": "oe_feature_mode", "mlp_hidden": "mlp_hidden"}
    for src, dst in renames.items():
        if head.get(src) is not None:
            kwargs[dst] = head[src]
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
