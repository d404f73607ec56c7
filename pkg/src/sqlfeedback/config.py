"""Pipeline configuration: one JSON document, flag and env overrides."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Optional

from sqlfeedback.evaluator import EvalHyperparams

ENV_EMBED_ENDPOINT = "SQLFEEDBACK_EMBED_ENDPOINT"
ENV_GEN_ENDPOINT = "SQLFEEDBACK_GEN_ENDPOINT"

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 13,
    "strict": True,
    "paths": {
        "examples": None,
        "schemas": None,
        "templates": None,
        "model": None,
        "out": "out",
    },
    "provider": {
        "kind": "deterministic",
        "dim": 64,
        "endpoint": None,
        "timeout_ms": 5000,
        "retries": 2,
        "cache_path": None,
    },
    "generation": {
        "endpoint": None,
        "timeout_ms": 10000,
        "retries": 2,
        "params": {},
        "parallelism": 1,
    },
    "evaluator": {
        "margin": 0.1,
        "lambda_sparsity": 1e-3,
        "gamma_prior": 1e-3,
        "w_primary": 0.9,
        "w_secondary": 0.1,
        # the projection is trained directly, so the rate is far larger than
        # the encoder fine-tuning rate the same loss is usually quoted with
        "learning_rate": 1e-2,
        "batch_size": 64,
        "epochs": 200,
        "negatives_per_positive": 50,
    },
    "lowdata": {
        "k_percent": 100,
        "seed": None,
    },
}


class ConfigError(ValueError):
    pass


def load_config(path: Optional[str | Path] = None,
                overrides: Optional[list[str]] = None,
                env: Optional[dict[str, str]] = None) -> dict[str, Any]:
    """Merge defaults <- config file <- env endpoints <- --set overrides."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        _deep_merge(config, payload)
    env = os.environ if env is None else env
    if env.get(ENV_EMBED_ENDPOINT):
        config["provider"]["endpoint"] = env[ENV_EMBED_ENDPOINT]
        config["provider"]["kind"] = "remote"
    if env.get(ENV_GEN_ENDPOINT):
        config["generation"]["endpoint"] = env[ENV_GEN_ENDPOINT]
    for override in overrides or []:
        _apply_override(config, override)
    return config


def _deep_merge(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value


def _apply_override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got '{assignment}'")
    key, raw_value = assignment.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config section '{part}' in '{key}'")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key '{key}'")
    node[parts[-1]] = value


def hyperparams_from(config: dict) -> EvalHyperparams:
    section = config["evaluator"]
    return EvalHyperparams(
        margin=section["margin"],
        lambda_sparsity=section["lambda_sparsity"],
        gamma_prior=section["gamma_prior"],
        w_primary=section["w_primary"],
        w_secondary=section["w_secondary"],
        learning_rate=section["learning_rate"],
        batch_size=section["batch_size"],
        epochs=section["epochs"],
        negatives_per_positive=section["negatives_per_positive"],
    )
