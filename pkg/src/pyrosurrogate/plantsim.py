"""Deterministic synthetic pyrolysis plant used as ground truth.

Formulas and default constants are documented in ``plant_defaults.ini``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .telemetry import Schema, TelemetryRecord, write_csv

STATE_NAMES = ("feed_rate", "air_valve", "ventilator", "oxygen_flow")
SENSOR_NAMES = ("temperature", "o2", "co2", "nox")
SCHEMA = Schema(STATE_NAMES, SENSOR_NAMES)

TRUTH_KEYS = tuple(
    [f"{p}_{s}" for p in ("t", "o", "c") for s in ("bias",) + STATE_NAMES]
    + ["o2_max", "co2_max", "nox_base", "nox_scale", "nox_activation", "nox_floor"]
)

_NOISE_STREAM = 1
_SCHEDULE_STREAM = 0


@dataclass(frozen=True)
class SimPlantConfig:
    state_bounds: Mapping[str, tuple[float, float]]
    noise_std: Mapping[str, float]
    truth: Mapping[str, float]
    temp_range: tuple[float, float] = (600.0, 1200.0)
    drift_amplitude: float = 0.0
    drift_period: float = 86400.0
    seed: int = 0
    sample_interval: int = 60
    start_time: int = 0
    schedule: str | Sequence[Sequence[float]] = "random_walk"
    step_std: float = 0.02
    jump_prob: float = 0.002
    nox_window: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if tuple(self.state_bounds) != STATE_NAMES:
            raise ConfigError("bounds", f"expected states {list(STATE_NAMES)}")
        for name, (lo, hi) in self.state_bounds.items():
            if not lo < hi:
                raise ConfigError(f"bounds.{name}", f"lower {lo} must be below upper {hi}")
        lo, hi = self.temp_range
        if not 600.0 <= lo < hi <= 1200.0:
            raise ConfigError("plant.temp_range", "must lie within [600, 1200] degC")
        for s in SENSOR_NAMES:
            if s not in self.noise_std:
                raise ConfigError(f"noise.{s}", "missing")
            if not self.noise_std[s] >= 0.0:
                raise ConfigError(f"noise.{s}", "must be >= 0")
        for k in TRUTH_KEYS:
            if k not in self.truth:
                raise ConfigError(f"truth.{k}", "missing")
        if self.drift_period <= 0:
            raise ConfigError("drift.period", "must be positive")
        if self.sample_interval <= 0:
            raise ConfigError("plant.sample_interval", "must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("plant.seed", "must be a non-negative 64-bit integer")
        if isinstance(self.schedule, str) and self.schedule != "random_walk":
            raise ConfigError("schedule.kind", f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.jump_prob <= 1.0:
            raise ConfigError("schedule.jump_prob", "must lie in [0, 1]")
        start, frac = self.nox_window
        if not (0.0 <= start <= 1.0 and 0.0 <= frac <= 1.0):
            raise ConfigError("nox_window", "start and fraction must lie in [0, 1]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.state_bounds[s][0] for s in STATE_NAMES])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.state_bounds[s][1] for s in STATE_NAMES])

    def with_noise(self, sigma: float | Mapping[str, float]) -> "SimPlantConfig":
        if not isinstance(sigma, Mapping):
            sigma = {s: float(sigma) for s in SENSOR_NAMES}
        return replace(self, noise_std={**self.noise_std, **sigma})


# ----------------------------------------------------------------------------
# config files

def _floats(text: str, key: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(key, f"not a number: {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(key, f"expected {n} comma-separated values")
    return vals


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(key, f"not an integer: {text!r}") from None


_LAYOUT = {
    "plant": {"seed", "sample_interval", "start_time", "temp_range"},
    "bounds": set(STATE_NAMES),
    "noise": set(SENSOR_NAMES),
    "drift": {"amplitude", "period"},
    "schedule": {"kind", "step_std", "jump_prob"},
    "nox_window": {"start", "fraction"},
    "truth": set(TRUTH_KEYS),
}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def load_config(path=None) -> SimPlantConfig:
    """Defaults overlaid with the key-value file at ``path`` (if given)."""
    cp = _parser()
    cp.read_string(resources.files(__package__).joinpath("plant_defaults.ini").read_text())
    if path is not None:
        user = _parser()
        try:
            user.read_string(Path(path).read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ConfigError(str(path), f"unparseable config: {exc}") from None
        for section in user.sections():
            if section not in _LAYOUT:
                raise ConfigError(section, "unknown section")
            for key, val in user[section].items():
                if key not in _LAYOUT[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                cp[section][key] = val
    return _from_parser(cp)


def _from_parser(cp: configparser.ConfigParser) -> SimPlantConfig:
    def get(section, key):
        return cp[section][key]

    bounds = {s: tuple(_floats(get("bounds", s), f"bounds.{s}", 2)) for s in STATE_NAMES}
    noise = {s: _floats(get("noise", s), f"noise.{s}", 1)[0] for s in SENSOR_NAMES}
    truth = {k: _floats(get("truth", k), f"truth.{k}", 1)[0] for k in TRUTH_KEYS}
    return SimPlantConfig(
        state_bounds=bounds,
        noise_std=noise,
        truth=truth,
        temp_range=tuple(_floats(get("plant", "temp_range"), "plant.temp_range", 2)),
        drift_amplitude=_floats(get("drift", "amplitude"), "drift.amplitude", 1)[0],
        drift_period=_floats(get("drift", "period"), "drift.period", 1)[0],
        seed=_int(get("plant", "seed"), "plant.seed"),
        sample_interval=_int(get("plant", "sample_interval"), "plant.sample_interval"),
        start_time=_int(get("plant", "start_time"), "plant.start_time"),
        schedule=get("schedule", "kind").strip(),
        step_std=_floats(get("schedule", "step_std"), "schedule.step_std", 1)[0],
        jump_prob=_floats(get("schedule", "jump_prob"), "schedule.jump_prob", 1)[0],
        nox_window=tuple(
            _floats(get("nox_window", k), f"nox_window.{k}", 1)[0] for k in ("start", "fraction")
        ),
    )


def default_config() -> SimPlantConfig:
    return load_config()


def dump_config(config: SimPlantConfig) -> str:
    """Render a config in the key-value format ``load_config`` reads."""
    if not isinstance(config.schedule, str):
        raise ConfigError("schedule.kind", "scripted schedules cannot be written to a config file")
    cp = _parser()
    cp["plant"] = {
        "seed": str(config.seed),
        "sample_interval": str(config.sample_interval),
        "start_time": str(config.start_time),
        "temp_range": ", ".join(map(repr, config.temp_range)),
    }
    cp["bounds"] = {s: ", ".join(map(repr, config.state_bounds[s])) for s in STATE_NAMES}
    cp["noise"] = {s: repr(config.noise_std[s]) for s in SENSOR_NAMES}
    cp["drift"] = {"amplitude": repr(config.drift_amplitude), "period": repr(config.drift_period)}
    cp["schedule"] = {
        "kind": config.schedule,
        "step_std": repr(config.step_std),
        "jump_prob": repr(config.jump_prob),
    }
    cp["nox_window"] = {"start": repr(config.nox_window[0]), "fraction": repr(config.nox_window[1])}
    cp["truth"] = {k: repr(config.truth[k]) for k in TRUTH_KEYS}
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ----------------------------------------------------------------------------
# ground truth

def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def ground_truth_many(config: SimPlantConfig, states) -> np.ndarray:
    """Noise- and drift-free sensors for an ``(n, 4)`` state array, columns in SENSOR_NAMES order."""
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    u = (X - config.lower) / (config.upper - config.lower)
    c = config.truth

    def lin(prefix):
        return c[f"{prefix}_bias"] + sum(c[f"{prefix}_{s}"] * u[:, i] for i, s in enumerate(STATE_NAMES))

    lo, hi = config.temp_range
    temp = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.tanh(lin("t"))
    o2 = c["o2_max"] * _logistic(lin("o"))
    co2 = c["co2_max"] * _logistic(lin("c"))
    nox = nox_from(config, temp, o2)
    return np.column_stack([temp, o2, co2, nox])


def nox_from(config: SimPlantConfig, temperature, o2):
    c = config.truth
    t_k = np.asarray(temperature, dtype=np.float64) + 273.15
    floor_k = c["nox_floor"] + 273.15
    b = c["nox_activation"]
    excess = np.maximum(0.0, np.exp(-b / t_k) - math.exp(-b / floor_k))
    return c["nox_base"] + c["nox_scale"] * np.sqrt(np.maximum(o2, 0.0)) * excess


def ground_truth(config: SimPlantConfig, state) -> dict[str, float]:
    vals = ground_truth_many(config, np.asarray(state, dtype=np.float64)[None, :])[0]
    return dict(zip(SENSOR_NAMES, map(float, vals)))


def drift(config: SimPlantConfig, t: int) -> float:
    return config.drift_amplitude * math.sin(2.0 * math.pi * t / config.drift_period)


def _check_state(config: SimPlantConfig, state) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (len(STATE_NAMES),):
        raise DomainError(f"state must have {len(STATE_NAMES)} entries")
    if np.any(x < config.lower) or np.any(x > config.upper) or not np.isfinite(x).all():
        raise DomainError(f"state {x.tolist()} outside bounds")
    return x


def noise_rng(config: SimPlantConfig, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, _NOISE_STREAM, int(t)]))


def step(config: SimPlantConfig, state, t: int) -> TelemetryRecord:
    """Noisy telemetry at time ``t``; a pure function of ``(config, state, t)``."""
    x = _check_state(config, state)
    truth = ground_truth_many(config, x[None, :])[0]
    z = noise_rng(config, t).standard_normal(len(SENSOR_NAMES))
    sigma = np.array([config.noise_std[s] for s in SENSOR_NAMES])
    vals = truth + sigma * z
    vals[0] += drift(config, t)
    return TelemetryRecord(
        timestamp=int(t),
        states=dict(zip(STATE_NAMES, map(float, x))),
        sensors=dict(zip(SENSOR_NAMES, map(float, vals))),
    )


def schedule_states(config: SimPlantConfig, n: int) -> np.ndarray:
    """States for ``n`` steps: scripted rows, or a reflected random walk with occasional jumps."""
    if not isinstance(config.schedule, str):
        rows = np.asarray(config.schedule, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(STATE_NAMES):
            raise ConfigError("schedule", "scripted schedule must be rows of 4 states")
        if len(rows) < n:
            raise ConfigError("schedule", f"scripted schedule has {len(rows)} rows, need {n}")
        return rows[:n].copy()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _SCHEDULE_STREAM]))
    p = len(STATE_NAMES)
    u = rng.uniform(size=p)
    out = np.empty((n, p))
    for i in range(n):
        out[i] = u
        if rng.uniform() < config.jump_prob:
            u = rng.uniform(size=p)
        else:
            u = u + config.step_std * rng.standard_normal(p)
            u = np.abs(u)
            u = np.where(u > 1.0, 2.0 - u, u)
            u = np.clip(u, 0.0, 1.0)
    return config.lower + out * (config.upper - config.lower)


def nox_mask(config: SimPlantConfig, n: int) -> np.ndarray:
    start, frac = config.nox_window
    a = min(n, int(math.floor(start * n)))
    b = min(n, a + int(math.ceil(frac * n)))
    mask = np.zeros(n, dtype=bool)
    mask[a:b] = True
    return mask


def generate_dataset(config: SimPlantConfig, n: int) -> list[TelemetryRecord]:
    if n < 1:
        raise ValueError("n must be >= 1")
    states = schedule_states(config, n)
    mask = nox_mask(config, n)
    records = []
    for i in range(n):
        rec = step(config, states[i], config.start_time + i * config.sample_interval)
        if not mask[i]:
            rec = replace(rec, sensors={**rec.sensors, "nox": None})
        records.append(rec)
    return records


def write_dataset(records, path) -> None:
    write_csv(records, path, SCHEMA)
