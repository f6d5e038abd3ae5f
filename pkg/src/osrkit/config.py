"""Declarative experiment configuration: one JSON file describes a whole run.

Every key is validated before any work starts; unknown keys are rejected with
their full path so typos cannot silently fall back to defaults.  CLI flags
(--seed, --out) override the corresponding top-level keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetBundle, SyntheticSpec, generate, load_csv
from .errors import ConfigError, ContractError
from .losses import FAMILIES, LossConfig
from .model import OpenSetModel, build_model
from .trainer import OptimConfig


@dataclass
class EvalConfig:
    fpr_target: float = 0.1
    tpr_target: float = 0.95
    f1_accept_fraction: float = 0.95
    f1_threshold: float | None = None

    def validate(self) -> None:
        if not 0.0 <= self.fpr_target <= 1.0:
            raise ConfigError(f"eval.fpr_target must be in [0, 1], got {self.fpr_target}")
        if not 0.0 < self.tpr_target <= 1.0:
            raise ConfigError(f"eval.tpr_target must be in (0, 1], got {self.tpr_target}")
        if not 0.0 < self.f1_accept_fraction <= 1.0:
            raise ConfigError(
                f"eval.f1_accept_fraction must be in (0, 1], got {self.f1_accept_fraction}"
            )


@dataclass
class CsvPaths:
    train_known: str
    background: str
    test_known: str
    test_unknown: str


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    synthetic: SyntheticSpec | None = None
    csv: CsvPaths | None = None
    hidden_sizes: list[int] = field(default_factory=lambda: [32, 32])
    latent_dim: int = 8
    head: str = "distance"
    freeze_anchors: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def resolved_dict(self) -> dict:
        """Full key tree with defaults filled in, for manifests."""
        out = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data": {},
            "model": {
                "hidden_sizes": list(self.hidden_sizes),
                "latent_dim": self.latent_dim,
                "head": self.head,
                "freeze_anchors": self.freeze_anchors,
            },
            "loss": {
                "family": self.loss.family,
                "lambda": self.loss.lam,
                "triplet_margin": self.loss.triplet_margin,
                "objectosphere_xi": self.loss.objectosphere_xi,
                "energy_m_in": self.loss.energy_m_in,
                "energy_m_out": self.loss.energy_m_out,
            },
            "optim": {
                "epochs": self.optim.epochs,
                "batch_size_known": self.optim.batch_size_known,
                "batch_size_background": self.optim.batch_size_background,
                "lr_init": self.optim.lr_init,
                "warmup_epochs": self.optim.warmup_epochs,
                "momentum": self.optim.momentum,
                "checkpoint_every": self.optim.checkpoint_every,
            },
            "eval": asdict(self.eval),
        }
        if self.synthetic is not None:
            spec = asdict(self.synthetic)
            spec.pop("seed")  # the run seed governs generation
            out["data"]["synthetic"] = spec
        if self.csv is not None:
            out["data"]["csv"] = asdict(self.csv)
        return out


_SYNTHETIC_KEYS = {
    "input_dim": int,
    "total_classes": int,
    "kkc_count": int,
    "uuc_count": int,
    "samples_per_class": int,
    "class_center_scale": float,
    "cluster_std": float,
    "kuc_mode": str,
}
_CSV_KEYS = {"train_known": str, "background": str, "test_known": str, "test_unknown": str}
_MODEL_KEYS = {"hidden_sizes": list, "latent_dim": int, "head": str, "freeze_anchors": bool}
_LOSS_KEYS = {
    "family": str,
    "lambda": float,
    "triplet_margin": float,
    "objectosphere_xi": float,
    "energy_m_in": float,
    "energy_m_out": float,
}
_OPTIM_KEYS = {
    "epochs": int,
    "batch_size_known": int,
    "batch_size_background": int,
    "lr_init": float,
    "warmup_epochs": int,
    "momentum": float,
    "checkpoint_every": int,
}
_EVAL_KEYS = {
    "fpr_target": float,
    "tpr_target": float,
    "f1_accept_fraction": float,
    "f1_threshold": float,
}
_TOP_KEYS = ("seed", "output_dir", "data", "model", "loss", "optim", "eval")
_NULLABLE = {"loss.objectosphere_xi", "eval.f1_threshold"}


def _check_keys(section: dict, allowed, path: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be an object, got {type(section).__name__}")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}")


def _typed(section: dict, key: str, expected, path: str):
    value = section[key]
    full = f"{path}.{key}"
    if value is None:
        if full in _NULLABLE:
            return None
        raise ConfigError(f"{full} must not be null")
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{full} must be a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{full} must be an integer, got {value!r}")
        return value
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{full} must be a boolean, got {value!r}")
        return value
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(f"{full} must be a string, got {value!r}")
        return value
    if expected is list:
        if not isinstance(value, list):
            raise ConfigError(f"{full} must be a list, got {value!r}")
        return value
    raise AssertionError(f"unhandled schema type {expected}")


def _apply(section: dict, keys: dict, path: str) -> dict:
    _check_keys(section, keys, path)
    return {k: _typed(section, k, t, path) for k, t in section.items() for t in [keys[k]]}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw dict (parsed JSON) into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be an object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key}")
    cfg = ExperimentConfig()

    if "seed" in raw:
        cfg.seed = _typed(raw, "seed", int, "<top>")
        if cfg.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {cfg.seed}")
    if "output_dir" in raw:
        cfg.output_dir = _typed(raw, "output_dir", str, "<top>")

    data_section = raw.get("data", {"synthetic": {}})
    _check_keys(data_section, ("synthetic", "csv"), "data")
    if ("synthetic" in data_section) == ("csv" in data_section):
        raise ConfigError("data must contain exactly one of 'synthetic' or 'csv'")
    if "synthetic" in data_section:
        vals = _apply(data_section["synthetic"], _SYNTHETIC_KEYS, "data.synthetic")
        cfg.synthetic = SyntheticSpec(seed=cfg.seed, **vals)
        cfg.synthetic.validate()
    else:
        vals = _apply(data_section["csv"], _CSV_KEYS, "data.csv")
        missing = set(_CSV_KEYS) - set(vals)
        if missing:
            raise ConfigError(f"data.csv missing paths: {sorted(missing)}")
        cfg.csv = CsvPaths(**vals)

    if "model" in raw:
        vals = _apply(raw["model"], _MODEL_KEYS, "model")
        if "hidden_sizes" in vals:
            sizes = vals["hidden_sizes"]
            if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in sizes):
                raise ConfigError(f"model.hidden_sizes must be positive integers, got {sizes}")
            cfg.hidden_sizes = sizes
        if "latent_dim" in vals:
            if vals["latent_dim"] < 1:
                raise ConfigError(f"model.latent_dim must be >= 1, got {vals['latent_dim']}")
            cfg.latent_dim = vals["latent_dim"]
        if "head" in vals:
            if vals["head"] not in ("distance", "softmax"):
                raise ConfigError(f"model.head must be 'distance' or 'softmax', got {vals['head']!r}")
            cfg.head = vals["head"]
        if "freeze_anchors" in vals:
            cfg.freeze_anchors = vals["freeze_anchors"]

    if "loss" in raw:
        vals = _apply(raw["loss"], _LOSS_KEYS, "loss")
        if "family" in vals and vals["family"] not in FAMILIES:
            raise ConfigError(f"loss.family must be one of {FAMILIES}, got {vals['family']!r}")
        cfg.loss = LossConfig(
            family=vals.get("family", cfg.loss.family),
            lam=vals.get("lambda", cfg.loss.lam),
            triplet_margin=vals.get("triplet_margin", cfg.loss.triplet_margin),
            objectosphere_xi=vals.get("objectosphere_xi", cfg.loss.objectosphere_xi),
            energy_m_in=vals.get("energy_m_in", cfg.loss.energy_m_in),
            energy_m_out=vals.get("energy_m_out", cfg.loss.energy_m_out),
        )
        if cfg.loss.objectosphere_xi is not None and cfg.loss.objectosphere_xi <= 0:
            raise ConfigError("loss.objectosphere_xi must be positive or null")

    if "optim" in raw:
        vals = _apply(raw["optim"], _OPTIM_KEYS, "optim")
        cfg.optim = OptimConfig(seed=cfg.seed, **vals)
    else:
        cfg.optim = OptimConfig(seed=cfg.seed)
    cfg.optim.validate()

    if "eval" in raw:
        vals = _apply(raw["eval"], _EVAL_KEYS, "eval")
        cfg.eval = EvalConfig(**vals)
    cfg.eval.validate()

    try:
        cfg.loss.validate(cfg.head)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, seed=None, output_dir=None) -> ExperimentConfig:
    """Parse and validate a config file, applying CLI overrides."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    return parse_config(raw)


def make_bundle(cfg: ExperimentConfig) -> DatasetBundle:
    if cfg.synthetic is not None:
        return generate(cfg.synthetic)
    paths = cfg.csv
    train_x, train_y = load_csv(paths.train_known, expect_label=True)
    bg_x, _ = load_csv(paths.background, expect_label=False)
    test_x, test_y = load_csv(paths.test_known, expect_label=True)
    unk_x, _ = load_csv(paths.test_unknown, expect_label=False)
    dims = {a.shape[1] for a in (train_x, bg_x, test_x, unk_x)}
    if len(dims) != 1:
        raise ConfigError(f"CSV feature dimensions disagree: {sorted(dims)}")
    class_count = int(train_y.max())
    if set(np.unique(train_y)) != set(range(1, class_count + 1)):
        raise ConfigError("train labels must cover 1..C without gaps")
    if test_y.max() > class_count:
        raise ConfigError("test_known labels exceed the training class count")
    return DatasetBundle(
        train_known_x=train_x,
        train_known_y=train_y,
        background_x=bg_x,
        test_known_x=test_x,
        test_known_y=test_y,
        test_unknown_x=unk_x,
        class_count=class_count,
    )


def model_from_config(cfg: ExperimentConfig, input_dim: int, class_count: int) -> OpenSetModel:
    layer_sizes = [input_dim] + list(cfg.hidden_sizes) + [cfg.latent_dim]
    return build_model(
        layer_sizes, cfg.head, class_count, seed=cfg.seed, freeze_anchors=cfg.freeze_anchors
    )
