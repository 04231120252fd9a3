"""INI configuration files mapping onto scenario and tuning settings.

Sections ``field``, ``kernel``, ``coverage``, ``agents``, ``sim`` and
``tune`` correspond one-to-one to the config dataclasses. Scalars are
written plainly, lists and dicts as JSON. Several files may be merged (later
ones win) and single keys overridden with ``SECTION.KEY=VALUE``.
"""

from __future__ import annotations

import configparser
import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .coverage import CoverageParams
from .kriging import KernelParams
from .sim import AgentConfig, FieldConfig, ScenarioConfig, SimConfig
from .tune import TuneSpec

__all__ = [
    "ConfigError",
    "TuneConfig",
    "Config",
    "SECTIONS",
    "load_config",
    "parse_override",
    "config_to_ini",
    "write_config",
    "params_fragment",
    "tune_spec",
    "defaults_help",
]


class ConfigError(ValueError):
    pass


@dataclass
class TuneConfig:
    """Tuning settings; ``t0``/``tT`` of -1 reuse the ``sim`` window."""

    params: list = field(default_factory=lambda: ["beta", "sigma", "tau"])
    bounds: dict = field(default_factory=dict)
    budget: int = 0
    seed: int = 0
    restarts: int = 0
    seeds: list = field(default_factory=lambda: [1])
    t0: int = -1
    tT: int = -1


@dataclass
class Config:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)


SECTIONS = {
    "field": FieldConfig,
    "kernel": KernelParams,
    "coverage": CoverageParams,
    "agents": AgentConfig,
    "sim": SimConfig,
    "tune": TuneConfig,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


def _parse(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (list, dict)):
            val = json.loads(raw)
            if not isinstance(val, type(default)):
                raise ValueError(raw)
            return val
        return raw
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict, tuple)):
        return json.dumps(value)
    return str(value)


def parse_override(text: str) -> tuple[str, str, str]:
    """Split ``SECTION.KEY=VALUE``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not SECTION.KEY=VALUE")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override {text!r} is not SECTION.KEY=VALUE")
    sec, key = lhs.strip().split(".", 1)
    return sec, key, value


def _check_key(sec: str, key: str) -> None:
    if sec not in SECTIONS:
        raise ConfigError(f"unknown section {sec!r}")
    if key not in {f.name for f in dataclasses.fields(SECTIONS[sec])}:
        raise ConfigError(f"unknown key {sec}.{key}")


def load_config(paths=(), overrides=(), validate: bool = True) -> Config:
    """Merge config files and overrides onto the defaults.

    Raises
    ------
    ConfigError
        Unreadable file, unknown section or key, unparsable value or a
        violated scenario invariant.
    """
    raw: dict = {s: {} for s in SECTIONS}
    for p in paths:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(p) as fh:
                cp.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
        except configparser.Error as e:
            raise ConfigError(f"malformed config {p}: {e}") from None
        for sec in cp.sections():
            for key, value in cp.items(sec):
                _check_key(sec, key)
                raw[sec][key] = value
    for text in overrides:
        sec, key, value = parse_override(text)
        _check_key(sec, key)
        raw[sec][key] = value

    built = {}
    for sec, cls in SECTIONS.items():
        defaults = _defaults(cls)
        kwargs = {k: _parse(v, defaults[k], f"{sec}.{k}") for k, v in raw[sec].items()}
        try:
            built[sec] = cls(**{**defaults, **kwargs})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[{sec}] {e}") from None
    tcfg = built.pop("tune")
    scenario = ScenarioConfig(**built)
    if validate:
        try:
            scenario.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return Config(scenario, tcfg)


def config_to_ini(cfg: Config) -> str:
    lines = []
    objs = {sec: getattr(cfg.scenario, sec) for sec in SECTIONS if sec != "tune"}
    objs["tune"] = cfg.tune
    for sec, obj in objs.items():
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_config(path, cfg: Config) -> None:
    Path(path).write_text(config_to_ini(cfg))


def params_fragment(params: dict) -> str:
    """Config fragment holding tuned parameter values, mergeable with ``--config``."""
    from .tune import _split

    by_sec: dict = {}
    for name, v in params.items():
        sec, key = _split(name)
        by_sec.setdefault(sec, []).append(f"{key} = {_format(v)}")
    return "\n".join(f"[{s}]\n" + "\n".join(kv) + "\n" for s, kv in by_sec.items())


def tune_spec(cfg: Config, seed: int | None = None, restarts: int | None = None) -> TuneSpec:
    t = cfg.tune
    window = None
    if t.t0 >= 0 or t.tT >= 0:
        window = (t.t0 if t.t0 >= 0 else cfg.scenario.sim.t0, t.tT if t.tT >= 0 else cfg.scenario.sim.tT)
    for name, b in t.bounds.items():
        if not (isinstance(b, list) and len(b) == 2):
            raise ConfigError(f"tune.bounds[{name!r}] must be a [lower, upper] pair")
    return TuneSpec(
        params=tuple(t.params),
        base=copy.deepcopy(cfg.scenario),
        bounds=t.bounds,
        window=window,
        seeds=tuple(t.seeds),
        budget=t.budget,
        seed=t.seed if seed is None else seed,
        restarts=t.restarts if restarts is None else restarts,
    )


def defaults_help() -> str:
    """All sections and keys with their default values, as INI text."""
    return config_to_ini(Config())
