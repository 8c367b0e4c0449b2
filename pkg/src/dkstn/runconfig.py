"""Run configuration: a line-based ``key = value`` file with ``[section]``
headers, validated against a fixed schema so typos fail loudly.

Defaults follow the published operating point (7-day input, 35-day horizon,
hidden size 256, 25 epochs, learning rate 1e-4, weight decay 1e-3, batch 16,
equal loss weights); the shipped toy configuration overrides them to desk
scale.
"""

from __future__ import annotations

import configparser
import hashlib
import io

from .errors import ConfigError
from .grid import GridSpec, SynthParams
from .srcm import SrcmConfig
from .taam import TaamConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return value

    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "grid": {
        "lat_count": (int, 13),
        "lon_count": (int, 144),
        "lat_start": (float, 15.0),
        "lat_step": (float, -2.5),
        "lon_start": (float, 0.0),
        "lon_step": (float, 2.5),
    },
    "synth": {
        "days": (int, 1200),
        "seed": (int, 42),
        "annual_amplitude": (float, 10.0),
        "drift_per_day": (float, 2e-3),
        "wave_amplitude": (float, 5.0),
        "wave_period_days": (float, 45.0),
        "noise_amplitude": (float, 1.0),
        "model_bias": (float, 0.5),
        "model_seed_offset": (int, 1000),
    },
    "dkpm": {
        "max_wave": (int, 3),
    },
    "srcm": {
        "layers": (int, 7),
        "channels": (int, 16),
        "first_stride": (int, 2),
        "projection_dim": (int, 256),
        "first_kernel": (int, 7),
        "residual_kernel": (int, 3),
        "learned_projection": (_bool, True),
    },
    "taam": {
        "k": (int, 7),
        "n": (int, 35),
        "hidden": (int, 256),
        "tied_decoder": (_bool, False),
    },
    "training": {
        "epochs": (int, 25),
        "learning_rate": (float, 1e-4),
        "weight_decay": (float, 0.001),
        "batch_size": (int, 16),
        "beta": (float, 0.5),
        "gamma": (float, 0.5),
        "seed": (int, 0),
        "valid_fraction": (float, 0.1),
        "reanalysis_stride": (int, 2),
        "model_stride": (int, 7),
    },
    "eval": {
        "cor_threshold": (float, 0.5),
        "rmse_threshold": (float, 1.4),
        "pe_mode": (_choice("wrapped", "literal"), "wrapped"),
        "seasonal": (_bool, False),
    },
}


class RunConfig:
    """Validated configuration tree; every key from the schema is present."""

    def __init__(self, values: dict):
        self.values = values

    def get(self, section: str, key: str):
        return self.values[section][key]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str, origin: str = "<config>") -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";")
        )
        try:
            parser.read_string(text, source=origin)
        except configparser.Error as exc:
            raise ConfigError(f"{origin}: {exc}") from None
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{origin}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{origin}: unknown key [{section}] {key}")
                parse, _ = SCHEMA[section][key]
                try:
                    values[section][key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"{origin}: [{section}] {key}: {exc}") from None
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read(), origin=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def canonical_text(self) -> str:
        out = io.StringIO()
        for section in sorted(self.values):
            out.write(f"[{section}]\n")
            for key in sorted(self.values[section]):
                out.write(f"{key} = {self.values[section][key]!r}\n")
        return out.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    # -- typed views ---------------------------------------------------------
    def grid_spec(self) -> GridSpec:
        g = self.values["grid"]
        return GridSpec(
            lat_count=g["lat_count"],
            lon_count=g["lon_count"],
            lat_start=g["lat_start"],
            lat_step=g["lat_step"],
            lon_start=g["lon_start"],
            lon_step=g["lon_step"],
        )

    def synth_params(self, model_data: bool = False) -> SynthParams:
        s = self.values["synth"]
        return SynthParams(
            annual_amplitude=s["annual_amplitude"],
            drift_per_day=s["drift_per_day"],
            wave_amplitude=s["wave_amplitude"],
            wave_period_days=s["wave_period_days"],
            noise_amplitude=s["noise_amplitude"],
            channel_bias=s["model_bias"] if model_data else 0.0,
        )

    def srcm_config(self) -> SrcmConfig:
        s = self.values["srcm"]
        return SrcmConfig(
            layer_count=s["layers"],
            first_kernel=s["first_kernel"],
            residual_kernel=s["residual_kernel"],
            channels=s["channels"],
            first_stride=s["first_stride"],
            projection_dim=s["projection_dim"],
            learned_projection=s["learned_projection"],
        )

    def taam_config(self) -> TaamConfig:
        t = self.values["taam"]
        return TaamConfig(
            k=t["k"], n=t["n"], hidden=t["hidden"], tied_decoder=t["tied_decoder"]
        )

    def train_config(self) -> TrainConfig:
        t = self.values["training"]
        return TrainConfig(
            epochs=t["epochs"],
            learning_rate=t["learning_rate"],
            weight_decay=t["weight_decay"],
            batch_size=t["batch_size"],
            beta=t["beta"],
            gamma=t["gamma"],
            seed=t["seed"],
            valid_fraction=t["valid_fraction"],
        )
