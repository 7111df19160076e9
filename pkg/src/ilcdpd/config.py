"""Experiment configuration: strict key/value file parsing.

Config files are INI-style sections.  Unknown sections or keys are
rejected so a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

from .errors import ConfigError
from .gmp import GmpOrders
from .ilc import BlaReference, ConstantGain, IlcConfig
from .siggen import CONSTELLATIONS


def _parse_orders_grid(text: str) -> tuple:
    grid = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"order must be n_m:n_p:n_g, got {item!r}")
        grid.append(GmpOrders(int(parts[0]), int(parts[1]), int(parts[2])))
    return tuple(grid)


def _parse_bands(text: str) -> tuple:
    bands = []
    for item in text.split(","):
        center, width = item.strip().split(":")
        bands.append((int(center), int(width)))
    return tuple(bands)


# section -> key -> (parser, default); default None with required=True markers
_SCHEMA = {
    "signal": {
        "class": (str, "ofdm"),
        "n": (int, None),
        "sample_rate_hz": (float, 1.0),
        "carrier_hz": (float, 0.0),
        "excited_tones": (int, 121),
        "controlled_bins": (int, None),  # defaults to 3 * excited_tones
        "constellation": (str, "qam16"),
        "papr_lo_db": (float, None),
        "papr_hi_db": (float, None),
        "seed": (int, None),
        "realizations": (int, 6),
        "validation_realization": (int, None),  # defaults to realizations + 1
        "target_rms": (float, 1.0),
        "bands": (_parse_bands, None),  # multiband only
    },
    "plant": {
        "preset": (str, "mild"),
        "remote": (str, None),
        "timeout_s": (float, 30.0),
        "noise_std": (float, None),
        "noise_seed": (int, None),
    },
    "bla": {
        "realizations": (int, 256),
        "gain_floor_rel": (float, 1e-6),
        "seed": (int, 97),
    },
    "ilc": {
        "max_iterations": (int, 20),
        "relaxation": (float, 1.0),
        "stop_tolerance": (float, 1e-6),
        "divergence_factor": (float, 2.0),
        "n_averages": (int, 1),
        "desired": (str, "bla"),
    },
    "gmp": {
        "orders": (_parse_orders_grid, "2:3:1, 3:4:1, 3:5:2, 4:5:2"),
        "ridge": (float, 0.0),
        "tie_tol": (float, 1e-6),
    },
    "output": {
        "directory": (str, None),
    },
}

_REQUIRED = {("signal", "n"), ("signal", "seed")}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict  # {(section, key): parsed value}
    source_text: str = ""

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    @property
    def signal_class(self) -> str:
        return self.get("signal", "class")

    @property
    def papr_bounds_db(self):
        lo = self.get("signal", "papr_lo_db")
        hi = self.get("signal", "papr_hi_db")
        if lo is None and hi is None:
            return None
        if lo is None or hi is None:
            raise ConfigError("papr_lo_db and papr_hi_db must be set together")
        return (lo, hi)

    @property
    def constellation(self):
        name = self.get("signal", "constellation")
        try:
            return CONSTELLATIONS[name]
        except KeyError:
            raise ConfigError(f"unknown constellation {name!r}") from None

    @property
    def controlled_width(self) -> int:
        width = self.get("signal", "controlled_bins")
        return width if width is not None else 3 * self.get("signal", "excited_tones")

    @property
    def validation_realization(self) -> int:
        v = self.get("signal", "validation_realization")
        return v if v is not None else self.get("signal", "realizations") + 1

    def ilc_config(self) -> IlcConfig:
        return IlcConfig(
            max_iterations=self.get("ilc", "max_iterations"),
            relaxation=self.get("ilc", "relaxation"),
            stop_tolerance=self.get("ilc", "stop_tolerance"),
            divergence_factor=self.get("ilc", "divergence_factor"),
            n_averages=self.get("ilc", "n_averages"),
        )

    def desired_mode(self):
        text = self.get("ilc", "desired")
        if text == "bla":
            return BlaReference()
        if text.startswith("gain:"):
            return ConstantGain(complex(text[5:]))
        raise ConfigError(f"ilc desired must be 'bla' or 'gain:<complex>', got {text!r}")


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            parse = _SCHEMA[section][key][0]
            try:
                values[(section, key)] = parse(raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    for (section, key), raw in (overrides or {}).items():
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown override {section}.{key}")
        values[(section, key)] = _SCHEMA[section][key][0](raw)
    for section, keys in _SCHEMA.items():
        for key, (_, default) in keys.items():
            if (section, key) not in values:
                if (section, key) in _REQUIRED:
                    raise ConfigError(f"missing required config key {section}.{key}")
                if isinstance(default, str):
                    values[(section, key)] = _SCHEMA[section][key][0](default)
                else:
                    values[(section, key)] = default
    return ExperimentConfig(values=values, source_text=text)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), overrides)


def resolved_text(cfg: ExperimentConfig) -> str:
    """Deterministic dump of every resolved key, sufficient to replay."""
    lines = ["# resolved experiment config"]
    for section in _SCHEMA:
        lines.append(f"[{section}]")
        for key in _SCHEMA[section]:
            value = cfg.values[(section, key)]
            if value is None:
                continue
            if isinstance(value, tuple) and value and isinstance(value[0], GmpOrders):
                value = ", ".join(f"{o.n_m}:{o.n_p}:{o.n_g}" for o in value)
            elif isinstance(value, tuple):
                value = ", ".join(f"{c}:{w}" for c, w in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
