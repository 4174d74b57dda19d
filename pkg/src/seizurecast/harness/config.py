"""JSON experiment configs: schema, defaults, resolution.

Every section is optional; omitted keys take the defaults below. Unknown keys
anywhere are rejected. ``resolve`` returns the fully populated config that
is written next to every run's outputs.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from seizurecast.clipdata import DEFAULT_COUNTS, ClipGeometry, Configuration, DatasetSpec
from seizurecast.errors import ConfigError
from seizurecast.model import ModelConfig
from seizurecast.tubelet import TubeletGrid, masked_cell_count

OUTPUT_ROOT_ENV = "SEIZURECAST_OUTPUT_ROOT"

CONFIG_NAMES = [c.value for c in Configuration]
PRETRAINED_NAMES = [c for c in CONFIG_NAMES if c != Configuration.BASE.value]
RATIOS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_lr = {"type": "number", "exclusiveMinimum": 0}
_ratio = {"type": "number", "minimum": 0.1, "maximum": 0.9}
_config_name = {"enum": CONFIG_NAMES}
_config_list = {"type": "array", "items": _config_name, "uniqueItems": True}
_shots = {"type": "array", "items": {"enum": [2, 3, 4]}, "minItems": 1, "uniqueItems": True}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "seizurecast experiment config",
    **_section(
        {
            "seed": _nonneg_int,
            "output_dir": {"type": "string", "minLength": 1},
            "cache_dir": {"type": "string", "minLength": 1},
            "data": _section(
                {
                    "counts": _section({k: _nonneg_int for k in DEFAULT_COUNTS}),
                    "rodent_normal_pool": _nonneg_int,
                    "frames": _pos_int,
                    "height": _pos_int,
                    "width": _pos_int,
                }
            ),
            "model": _section(
                {
                    "enc_dim": _pos_int,
                    "enc_depth": _nonneg_int,
                    "enc_heads": _pos_int,
                    "dec_dim": _pos_int,
                    "dec_depth": _nonneg_int,
                    "dec_heads": _pos_int,
                    "T": _pos_int,
                    "rate": _pos_int,
                    "t_p": _pos_int,
                    "h_p": _pos_int,
                    "w_p": _pos_int,
                }
            ),
            "pretrain": _section(
                {
                    "configuration": {"enum": PRETRAINED_NAMES},
                    "lr": _lr,
                    "epochs": _pos_int,
                    "batch_size": _pos_int,
                    "mask_ratio": _ratio,
                }
            ),
            "finetune": _section(
                {
                    "configuration": _config_name,
                    "lr": _lr,
                    "epochs": _pos_int,
                    "shot": {"enum": [2, 3, 4]},
                    "split": _nonneg_int,
                }
            ),
            "evaluate": _section(
                {
                    "configs": _config_list,
                    "linear_probe": _config_list,
                    "zeroshot": _config_list,
                    "shots": _shots,
                    "n_splits": _pos_int,
                }
            ),
            "ablate": _section({"shots": _shots, "n_splits": _pos_int}),
            "sweep": _section(
                {
                    "ratios": {"type": "array", "items": _ratio, "minItems": 1, "uniqueItems": True},
                    "configs": {"type": "array", "items": {"enum": PRETRAINED_NAMES}, "uniqueItems": True},
                    "shots": _shots,
                    "n_splits": _pos_int,
                }
            ),
        }
    ),
}

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs",
    "cache_dir": None,  # <output_dir>/cache
    "data": {"counts": dict(DEFAULT_COUNTS), "rodent_normal_pool": 64, "frames": 40, "height": 32, "width": 32},
    "model": {"enc_dim": 64, "enc_depth": 4, "enc_heads": 4, "dec_dim": 32, "dec_depth": 2, "dec_heads": 2, "T": 16, "rate": 2, "t_p": 2, "h_p": 8, "w_p": 8},
    "pretrain": {"configuration": Configuration.RYN_H.value, "lr": 1e-4, "epochs": 50, "batch_size": 8, "mask_ratio": 0.3},
    "finetune": {"configuration": Configuration.RYN_H.value, "lr": 1e-4, "epochs": 20, "shot": 2, "split": 0},
    "evaluate": {
        "configs": [Configuration.RYN_H.value, Configuration.BASE.value],
        "linear_probe": [Configuration.RYN_H.value],
        "zeroshot": [Configuration.RYN_H.value, Configuration.BASE.value],
        "shots": [2, 3, 4],
        "n_splits": 10,
    },
    "ablate": {"shots": [2, 3, 4], "n_splits": 10},
    "sweep": {"ratios": list(RATIOS), "configs": list(PRETRAINED_NAMES), "shots": [2, 3, 4], "n_splits": 10},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path_of(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path = ".".join(filter(None, [path, extra[0] if extra else ""]))
    return path or "<root>"


def validate(raw: dict) -> None:
    """Raise ConfigError naming the first offending field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, path=_path_of(err))


def resolve(raw: dict, env: dict | None = None) -> dict:
    """Validate ``raw``, fill defaults, apply the output-root override, and
    check cross-field constraints (grid divisibility, clip length)."""
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    env = os.environ if env is None else env
    if env.get(OUTPUT_ROOT_ENV):
        cfg["output_dir"] = env[OUTPUT_ROOT_ENV]
    if cfg["cache_dir"] is None:
        cfg["cache_dir"] = str(Path(cfg["output_dir"]) / "cache")
    try:
        model_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc), path="model") from exc
    m, d = cfg["model"], cfg["data"]
    if (m["T"] - 1) * m["rate"] + 1 > d["frames"]:
        raise ConfigError(f"T={m['T']} at rate {m['rate']} needs more than data.frames={d['frames']}", path="model.T")
    cells = model_config(cfg).grid.spatial_cells
    for where, ratio in [("pretrain.mask_ratio", cfg["pretrain"]["mask_ratio"])] + [(f"sweep.ratios.{i}", r) for i, r in enumerate(cfg["sweep"]["ratios"])]:
        n = masked_cell_count(ratio, cells)
        if not 0 < n < cells:
            raise ConfigError(f"ratio {ratio} masks {n} of {cells} spatial cells; need at least one masked and one visible", path=where)
    if d["rodent_normal_pool"] < d["counts"]["rodent/normal"]:
        raise ConfigError("pool smaller than requested rodent/normal count", path="data.rodent_normal_pool")
    return cfg


def load(path: str | os.PathLike, env: dict | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found", path="<file>") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", path="<file>") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", path="<root>")
    return resolve(raw, env)


def model_config(cfg: dict) -> ModelConfig:
    m, d = cfg["model"], cfg["data"]
    grid = TubeletGrid(1, m["T"], d["height"], d["width"], m["t_p"], m["h_p"], m["w_p"])
    keys = ("enc_dim", "enc_depth", "enc_heads", "dec_dim", "dec_depth", "dec_heads")
    return ModelConfig(grid=grid, **{k: m[k] for k in keys})


def geometry(cfg: dict) -> ClipGeometry:
    d = cfg["data"]
    return ClipGeometry(1, d["frames"], d["height"], d["width"])


def dataset_spec(cfg: dict, configuration: str | Configuration) -> DatasetSpec:
    d = cfg["data"]
    return DatasetSpec(configuration, dict(d["counts"]), d["rodent_normal_pool"], cfg["seed"], geometry(cfg))
