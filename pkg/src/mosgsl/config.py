"""Config files: flat TOML with [data] [model] [sgsl] [motif] [train] sections.

Unknown sections or keys are rejected, every value is type-checked, and the
result is validated before any training starts. CLI flags override file
values. Ready-made configs for the five benchmark datasets ship with the
package and can be referenced by stem name (e.g. "imdb_b").
"""

from __future__ import annotations

import os
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .training import RunConfig

# section -> key -> (config field, type)
SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "data": {
        "dataset": ("dataset", str),
        "data_dir": ("data_dir", str),
        "degree_cap": ("degree_cap", int),
    },
    "model": {
        "backbone": ("backbone", str),
        "hidden": ("hidden", int),
        "dropout": ("dropout", float),
    },
    "sgsl": {
        "k_subgraphs": ("k_subgraphs", int),
        "max_subgraph_nodes": ("max_subgraph_nodes", int),
        "candidate_fraction": ("candidate_fraction", float),
        "gamma": ("gamma", float),
        "processor": ("processor", str),
        "knn_k": ("knn_k", int),
        "eps_theta": ("eps_theta", float),
    },
    "motif": {
        "motifs_per_class": ("motifs_per_class", int),
        "motif_coefficient": ("motif_coefficient", float),
        "temperature": ("temperature", float),
        "update_every": ("update_every", int),  # 0 freezes motifs
        "motif_init": ("motif_init", str),
        "numerator": ("numerator", str),
        "pretrain_epochs": ("pretrain_epochs", int),
    },
    "train": {
        "lr": ("lr", float),
        "weight_decay": ("weight_decay", float),
        "batch_size": ("batch_size", int),
        "max_epochs": ("max_epochs", int),
        "patience": ("patience", int),
        "seed": ("seed", int),
        "regime": ("regime", str),
        "variant": ("variant", str),
        "jobs": ("jobs", int),
    },
}


def resolve_config_path(ref: str) -> str:
    """An existing file path wins; otherwise fall back to a packaged config."""
    if os.path.isfile(ref):
        return ref
    stem = os.path.splitext(os.path.basename(ref))[0]
    packaged = resources.files("mosgsl").joinpath(f"configs/{stem}.toml")
    if packaged.is_file():
        return str(packaged)
    raise ConfigError(f"config file not found: {ref}")


def load_config(ref: str, overrides: dict | None = None) -> RunConfig:
    path = resolve_config_path(ref)
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc

    values: dict = {}
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        for key, raw in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            field, typ = SCHEMA[section][key]
            if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
                raw = float(raw)
            if not isinstance(raw, typ) or isinstance(raw, bool):
                raise ConfigError(
                    f"{path}: {section}.{key} must be {typ.__name__}, got {raw!r}")
            values[field] = raw

    if values.get("update_every") == 0:
        values["update_every"] = None
    if not values.get("data_dir"):
        values["data_dir"] = None

    cfg = RunConfig(**values)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown override: {key}")
        setattr(cfg, key, val)
    cfg.validate()
    return cfg


def resolve_data_dir(cfg: RunConfig) -> str:
    if cfg.data_dir:
        return cfg.data_dir
    env = os.environ.get("MOSGSL_DATA_DIR")
    if env:
        return env
    return "data"
