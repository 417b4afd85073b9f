"""Run configuration: INI files with one section per command."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from pathlib import Path

from .process import ProcessConfig, RestartPolicy
from .scaling import DomainError, VolatilityMixture, student_t_mixture

SCHEMA_VERSION = 1

DEFAULTS = {
    "process": {
        "D_e": "0.24",
        "window": "100",
        "restart_mean": "500",
        "restart_policy": "from_beginning",
        "length": "26000",
        "seed": "1",
    },
    "mixture": {
        "preset": "student_t",
        "nu": "3",
        "scale": "0.03",
        "components": "16",
        "weights": "",
        "sigmas": "",
        "file": "",
    },
    "analyze": {
        "bins": "61",
        "span_sd": "6",
        "lags": "1, 2, 4, 8, 16, 32",
        "tau_max": "100",
        "fit_range": "2, 100",
        "orders": "1, 2, 3, 4, 5",
        "deff_D_e": "0.24",
        "deff_t": "0, 1, 3, 10, 30, 100, 300, 1000, 3000, 10000",
        "deff_T_range": "1, 40",
    },
    "calibrate": {
        "components": "16",
        "grid_start": "0.02",
        "grid_stop": "0.5",
        "grid_step": "0.02",
        "seeds": "101, 102, 103, 104",
        "workers": "1",
    },
    "conditional": {
        "T": "1, 5, 20",
        "r1_abs": "0.02",
        "r2_max": "0.1",
        "points": "401",
    },
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Parsed configuration with defaults filled in.

    Values are kept as text so the resolved config serialises exactly as
    read; typed accessors validate on access and name the offending field.
    """

    def __init__(self, parser: configparser.ConfigParser, source: str = "<defaults>"):
        self._parser = parser
        self.source = source

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_dict(DEFAULTS)
        source = "<defaults>"
        if path is not None:
            path = Path(path)
            try:
                text = path.read_text()
                parser.read_string(text, source=str(path))
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            source = str(path)
            for section in parser.sections():
                if section not in DEFAULTS:
                    raise ConfigError(f"unknown section [{section}]")
                for key in parser[section]:
                    if key not in DEFAULTS[section]:
                        raise ConfigError(f"unknown field [{section}] {key}")
        for (section, key), value in (overrides or {}).items():
            parser[section][key] = str(value)
        return cls(parser, source)

    def raw(self, section: str, key: str) -> str:
        return self._parser[section][key].strip()

    def _convert(self, section, key, fn):
        text = self.raw(section, key)
        try:
            return fn(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from None

    def get_int(self, section, key, minimum=None) -> int:
        value = self._convert(section, key, int)
        if minimum is not None and value < minimum:
            raise ConfigError(f"[{section}] {key} must be >= {minimum}, got {value}")
        return value

    def get_float(self, section, key) -> float:
        return self._convert(section, key, float)

    def get_list(self, section, key, fn=float) -> list:
        return self._convert(section, key, lambda t: [fn(p) for p in t.replace(";", ",").split(",") if p.strip()])

    def as_dict(self) -> dict:
        return {s: dict(self._parser[s]) for s in self._parser.sections()}

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            self._parser.write(fh)

    def mixture(self) -> VolatilityMixture:
        preset = self.raw("mixture", "preset").lower()
        try:
            if preset == "student_t":
                return student_t_mixture(
                    self.get_float("mixture", "nu"),
                    self.get_float("mixture", "scale"),
                    self.get_int("mixture", "components", minimum=1),
                )
            if preset == "explicit":
                return VolatilityMixture.from_arrays(
                    self.get_list("mixture", "weights"), self.get_list("mixture", "sigmas")
                )
            if preset == "file":
                return load_mixture(self.raw("mixture", "file"))
        except DomainError as exc:
            raise ConfigError(f"[mixture] invalid definition: {exc}") from None
        raise ConfigError(f"[mixture] preset must be student_t, explicit or file, got {preset!r}")

    def process(self, seed: int | None = None) -> ProcessConfig:
        restart = self.get_float("process", "restart_mean")
        policy = self.raw("process", "restart_policy").lower()
        if policy not in {p.value for p in RestartPolicy}:
            raise ConfigError(f"[process] restart_policy must be one of {[p.value for p in RestartPolicy]}")
        try:
            return ProcessConfig(
                mixture=self.mixture(),
                D_e=self.get_float("process", "D_e"),
                window=self.get_int("process", "window"),
                restart_mean=restart,
                restart_policy=RestartPolicy(policy),
                seed=self.get_int("process", "seed") if seed is None else int(seed),
            )
        except DomainError as exc:
            raise ConfigError(f"[process] {exc}") from None


def load_mixture(path) -> VolatilityMixture:
    """Mixture JSON: {"weights": [...], "sigmas": [...]}.

    Calibration reports are accepted too; their ensemble mixture is used.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mixture file {path}: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("report"), dict):
        data = data["report"]
    if isinstance(data, dict) and "ensemble_mixture" in data:
        data = data["ensemble_mixture"]
    if not isinstance(data, dict):
        raise ConfigError(f"mixture file {path} must hold a JSON object")
    try:
        return VolatilityMixture.from_dict(data)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"mixture file {path}: {exc}") from None


def save_mixture(mix: VolatilityMixture, path) -> None:
    Path(path).write_text(json.dumps({"schema_version": SCHEMA_VERSION, **mix.to_dict()}, indent=2) + "\n")


def finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x
