"""Run configuration: one INI-style file with ``[section]`` headers and
``key = value`` lines.

Sections and keys mirror the library types.  Unknown sections or keys are
errors, and every value is validated by constructing the target object.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import ChannelParams
from .decoy import DEFAULT_EPS
from .keyrate import SCHEMES
from .montecarlo import ProtocolParams
from .pairing import UNLIMITED


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; names the offending key."""


@dataclass(frozen=True)
class DecoySettings:
    eps: float = DEFAULT_EPS
    k_max: int | None = None
    mode: str = "asymptotic"

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.mode not in ("asymptotic", "finite"):
            raise ValueError("mode must be 'asymptotic' or 'finite'")
        if self.k_max is not None and self.k_max < 2:
            raise ValueError("k_max must be at least 2")


@dataclass(frozen=True)
class SweepSettings:
    distances: tuple = tuple(float(d) for d in range(0, 501, 25))
    l_values: tuple = (1.0, 1e3, 1e6, UNLIMITED)
    schemes: tuple = SCHEMES
    optimize: bool = True
    mu: float = 0.5
    include_plob: bool = True

    def __post_init__(self):
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown scheme {bad[0]!r}")
        if not self.distances:
            raise ValueError("distances must not be empty")


@dataclass(frozen=True)
class DriftSettings:
    slope: float = 2 * math.pi * 1e6 / 1.6e-3
    omega0: float = 2 * math.pi * 30e6
    slow_noise_std: float = 0.0
    rep_rate: float = 625e6
    duration: float = 1.6e-3
    intensity: float = 0.3
    dark_count_prob: float = 0.0
    misestimate_hz: float = 0.0
    slice_divisions: int = 32
    l_max: int = 10_000
    bins: int = 10
    estimate: bool = True


@dataclass(frozen=True)
class OutputSettings:
    rates: str = ""
    tally: str = ""
    log: str = ""
    report: str = ""
    drift: str = ""


@dataclass
class RunConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    decoy: DecoySettings = field(default_factory=DecoySettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    drift: DriftSettings = field(default_factory=DriftSettings)
    output: OutputSettings = field(default_factory=OutputSettings)


SECTIONS = {
    "channel": ("channel", ChannelParams),
    "protocol": ("protocol", ProtocolParams),
    "decoy": ("decoy", DecoySettings),
    "sweep": ("sweep", SweepSettings),
    "phasedrift": ("drift", DriftSettings),
    "output": ("output", OutputSettings),
}


def parse_interval(text: str) -> float:
    """Pairing interval: a positive integer, or ``inf`` / ``unlimited``."""
    t = text.strip().lower()
    if t in ("inf", "infinity", "unlimited"):
        return UNLIMITED
    v = float(t)
    if v != int(v) or v < 1:
        raise ValueError(f"pairing interval must be a positive integer or inf, got {text!r}")
    return float(int(v))


def parse_grid(text: str) -> tuple:
    """Either ``a, b, c`` or ``start:stop:step`` (stop included when it lands on the grid)."""
    t = text.strip()
    if ":" in t:
        parts = [float(p) for p in t.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"range must be start:stop:step with a positive step, got {text!r}")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(v) for v in np.round(start + step * np.arange(count), 12))
    return tuple(float(p) for p in t.replace(" ", "").split(",") if p)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(section: str, key: str, raw: str, default):
    if section == "protocol" and key == "l":
        return parse_interval(raw)
    if section == "sweep":
        if key == "distances":
            return parse_grid(raw)
        if key == "l_values":
            return tuple(parse_interval(p) for p in raw.split(",") if p.strip())
        if key == "schemes":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    if section == "decoy" and key == "k_max":
        return None if raw.strip().lower() in ("", "auto", "none") else int(raw)
    if isinstance(default, bool):
        return _bool(raw)
    if isinstance(default, int) and not isinstance(default, bool):
        v = float(raw)
        if v != int(v):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def load_config(path: str | None = None, text: str | None = None) -> RunConfig:
    """Read and validate a configuration; missing sections keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from err
    except OSError as err:
        raise ConfigError(f"cannot read config {path!r}: {err.strerror}") from err

    cfg = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr, cls = SECTIONS[section]
        current = getattr(cfg, attr)
        defaults = {f.name: getattr(current, f.name) for f in fields(cls)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in defaults:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            try:
                updates[key] = _convert(section, key, raw, defaults[key])
            except ValueError as err:
                raise ConfigError(f"[{section}] {key}: {err}") from err
        try:
            setattr(cfg, attr, replace(current, **updates))
        except (ValueError, TypeError) as err:
            raise ConfigError(f"[{section}] {err}") from err
    return cfg


def thread_cap(requested: int | None = None) -> int:
    """Worker count, capped by ``MPQKD_THREADS`` when it is set."""
    env = os.environ.get("MPQKD_THREADS", "").strip()
    cap = None
    if env:
        try:
            cap = int(env)
        except ValueError as err:
            raise ConfigError(f"MPQKD_THREADS must be an integer, got {env!r}") from err
        if cap < 1:
            raise ConfigError("MPQKD_THREADS must be at least 1")
    n = requested if requested is not None else (cap or 1)
    return max(1, min(n, cap) if cap else n)
