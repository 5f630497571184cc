"""Experiment configuration: INI-style text files or JSON run manifests.

Every key is declared in ``SCHEMA``; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .clipping import ClipConfig
from .privacy import DEFAULT_ALPHAS, Variant
from .training import Algorithm, Seeds, TrainConfig


class ConfigError(ValueError):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).replace(",", " ").split())


def _ints(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _opt_float(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return float(v)


def _opt_int(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return int(v)


def _opt_str(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return str(v)


SCHEMA = {
    "experiment": {
        "dataset": str, "data_dir": _opt_str, "out": _opt_str, "delta": float,
        "alpha_grid": _floats, "variant": str, "t_interpretation": str, "conservative": _bool,
        "uniform": _bool, "validation_fraction": float, "train_subset": _opt_int,
        "target_accuracy": _opt_float, "target_tolerance": float,
    },
    "train": {
        "algorithm": str, "epochs": int, "batch_size": int, "learning_rate": _opt_float,
        "momentum": float, "private": _bool, "noise_sigma": float, "ternary_threshold": float,
        "per_pass_noise": _bool, "feedback_std": _opt_float, "widths": _ints,
        "hidden_activation": str, "record_alignment": _bool,
    },
    "clip": {
        "tau_h_min": float, "tau_h_max": float, "tau_B": float, "input_cap": _opt_float,
        "magnitude_floor_mode": _bool, "gamma_min": _floats, "gamma_max": _floats,
    },
    "seeds": {"data": int, "init": int, "noise": int, "matrix": int},
}

DEFAULTS = {
    "experiment": {
        "dataset": "fashion_mnist", "data_dir": None, "out": None, "delta": 1e-5,
        "alpha_grid": DEFAULT_ALPHAS, "variant": "main", "t_interpretation": "steps",
        "conservative": False, "uniform": False, "validation_fraction": 0.1, "train_subset": None,
        "target_accuracy": None, "target_tolerance": 1.5,
    },
    "train": {
        "algorithm": "dfa", "epochs": 15, "batch_size": 256, "learning_rate": None, "momentum": 0.9,
        "private": False, "noise_sigma": 0.0, "ternary_threshold": 0.15, "per_pass_noise": False,
        "feedback_std": None, "widths": (784, 512, 512, 10), "hidden_activation": "tanh",
        "record_alignment": False,
    },
    "clip": {
        "tau_h_min": 0.1, "tau_h_max": 1.0, "tau_B": 1.0, "input_cap": 1.0,
        "magnitude_floor_mode": False, "gamma_min": (), "gamma_max": (),
    },
    "seeds": {"data": 0, "init": 1, "noise": 2, "matrix": 3},
}

# BP under the private mechanism runs at a lower step size
PRIVATE_BP_LR = 1e-4
DEFAULT_LR = 0.01


@dataclass
class ExperimentConfig:
    sections: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULTS.items()})

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def experiment(self) -> dict:
        return self.sections["experiment"]

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        try:
            self.sections[section][key] = SCHEMA[section][key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {value!r}: {exc}") from None

    def train_config(self) -> TrainConfig:
        t, c, s = self["train"], self["clip"], self["seeds"]
        try:
            algorithm = Algorithm(t["algorithm"])
            lr = t["learning_rate"]
            if lr is None:
                private_bp = algorithm is Algorithm.NOISY_BP or (algorithm is Algorithm.BP and t["private"])
                lr = PRIVATE_BP_LR if private_bp else DEFAULT_LR
            clip = ClipConfig(tau_h_min=c["tau_h_min"], tau_h_max=c["tau_h_max"], tau_B=c["tau_B"],
                              input_cap=c["input_cap"], magnitude_floor_mode=c["magnitude_floor_mode"],
                              gamma_min=c["gamma_min"], gamma_max=c["gamma_max"])
            return TrainConfig(
                algorithm=algorithm, epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=lr,
                momentum=t["momentum"], private=t["private"], noise_sigma=t["noise_sigma"],
                ternary_threshold=t["ternary_threshold"], per_pass_noise=t["per_pass_noise"],
                feedback_std=t["feedback_std"], widths=t["widths"], hidden_activation=t["hidden_activation"],
                record_alignment=t["record_alignment"], clip=clip,
                seeds=Seeds(data=s["data"], init=s["init"], noise=s["noise"], matrix=s["matrix"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> TrainConfig:
        e = self.experiment
        try:
            Variant(e["variant"])
        except ValueError:
            raise ConfigError(f"[experiment] variant: unknown value {e['variant']!r}") from None
        if e["t_interpretation"] not in ("steps", "epochs"):
            raise ConfigError(f"[experiment] t_interpretation must be 'steps' or 'epochs'")
        if not 0 < e["delta"] < 1:
            raise ConfigError(f"[experiment] delta must lie in (0, 1), got {e['delta']}")
        if not 0 < e["validation_fraction"] < 1:
            raise ConfigError("[experiment] validation_fraction must lie in (0, 1)")
        return self.train_config()

    def to_dict(self) -> dict:
        return {sec: {k: (list(v) if isinstance(v, tuple) else v) for k, v in vals.items()}
                for sec, vals in self.sections.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _apply(cfg: ExperimentConfig, sections: dict, where: str) -> ExperimentConfig:
    for section, values in sections.items():
        if section not in SCHEMA:
            raise ConfigError(f"{where}: unknown section [{section}]")
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key [{section}] {key}")
            cfg.set(section, key, value)
    return cfg


def parse_text(text: str, where: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return _apply(ExperimentConfig(), sections, where)


def load_dict(sections: dict, where: str = "<dict>") -> ExperimentConfig:
    return _apply(ExperimentConfig(), sections, where)


def load(path) -> ExperimentConfig:
    """Read an INI config or a JSON run manifest (its ``config`` block)."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return load_dict(data.get("config", data), str(path))
    return parse_text(text, str(path))
