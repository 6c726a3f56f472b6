"""Experiment configuration: INI-style section/key files with strict keys.

Every key has a default; unknown sections or keys are rejected with their
path.  Numeric fields left blank mean "derive at run time" (gains from the
reference, capacity from the reference and ensemble size).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .caseio import CaseData, builtin_case30, parse_case
from .control import ControllerKind
from .loop import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # [run]
    backend: str = "lossless"
    case: str = "case30"
    placement_bus: int = 2
    n_agents: int = 20
    horizon: int = 20_000
    repetitions: int = 1
    seed: int = 12345
    # [reference]
    reference_mode: str = "half_capacity"
    reference_value: float = 60.97
    # [agents]
    xi: float = 1.0
    x01: float = 0.0
    x02: float = 0.0
    capacity: float | None = None
    # [controller]
    controller_kind: str = "lag"
    kp: float | None = None
    ki: float | None = None
    deadband_fraction: float = 0.0
    initial_states: tuple[float | str, ...] = (0.0, "r")
    initial_pi: float = 0.0
    # [analysis]
    deadband_fractions: tuple[float, ...] = (0.0, 0.01, 0.02, 0.05)
    threshold_fraction: float = 0.01
    # [output]
    directory: str = "out"

    def load_case(self) -> CaseData | None:
        if self.backend != "ac":
            return None
        if self.case == "case30":
            return builtin_case30()
        path = Path(self.case)
        return parse_case(path.read_text(), name=path.stem)

    def to_sim_config(self) -> SimConfig:
        return SimConfig(
            n_agents=self.n_agents,
            backend=self.backend,
            case=self.load_case(),
            placement_bus=self.placement_bus,
            reference_mode=self.reference_mode,
            reference_value=self.reference_value,
            capacity=self.capacity,
            horizon=self.horizon,
            controller_kind=ControllerKind(self.controller_kind),
            kp=self.kp,
            ki=self.ki,
            deadband_fraction=self.deadband_fraction,
            initial_states=self.initial_states,
            initial_pi=self.initial_pi,
            xi=self.xi,
            x01=self.x01,
            x02=self.x02,
            seed=self.seed,
            repetitions=self.repetitions,
        )


# (section, key) -> (attribute, parser); parsers raise ValueError on bad input
def _float(text: str) -> float:
    return float(text)


def _opt_float(text: str) -> float | None:
    return None if text.strip() == "" else float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _float_list(text: str) -> tuple[float, ...]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    return tuple(float(t) for t in items)


def _state_list(text: str) -> tuple[float | str, ...]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    out: list[float | str] = []
    for item in items:
        if item == "r":
            out.append("r")
        else:
            out.append(float(item))
    return tuple(out)


def _choice(*allowed: str):
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in allowed:
            raise ValueError(f"{text!r} not one of {allowed}")
        return value
    return parse


def _str(text: str) -> str:
    return text.strip()


_SCHEMA: dict[tuple[str, str], tuple[str, object]] = {
    ("run", "backend"): ("backend", _choice("lossless", "ac")),
    ("run", "case"): ("case", _str),
    ("run", "placement_bus"): ("placement_bus", _int),
    ("run", "n_agents"): ("n_agents", _int),
    ("run", "horizon"): ("horizon", _int),
    ("run", "repetitions"): ("repetitions", _int),
    ("run", "seed"): ("seed", _int),
    ("reference", "mode"): ("reference_mode",
                            _choice("fixed", "half_capacity", "case_plus_losses")),
    ("reference", "value"): ("reference_value", _float),
    ("agents", "xi"): ("xi", _float),
    ("agents", "x01"): ("x01", _float),
    ("agents", "x02"): ("x02", _float),
    ("agents", "capacity"): ("capacity", _opt_float),
    ("controller", "kind"): ("controller_kind", _choice("pi", "lag")),
    ("controller", "kp"): ("kp", _opt_float),
    ("controller", "ki"): ("ki", _opt_float),
    ("controller", "deadband_fraction"): ("deadband_fraction", _float),
    ("controller", "initial_states"): ("initial_states", _state_list),
    ("controller", "initial_pi"): ("initial_pi", _float),
    ("analysis", "deadband_fractions"): ("deadband_fractions", _float_list),
    ("analysis", "threshold_fraction"): ("threshold_fraction", _float),
    ("output", "directory"): ("directory", _str),
}

_RANGE_CHECKS = {
    "horizon": lambda v: v >= 2,
    "repetitions": lambda v: v >= 1,
    "n_agents": lambda v: v >= 2 and v % 2 == 0,
    "deadband_fraction": lambda v: v >= 0,
    "threshold_fraction": lambda v: v > 0,
    "reference_value": lambda v: v > 0,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse configuration text; all fields defaulted, unknown keys rejected."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None

    values: dict[str, object] = {}
    for section in parser.sections():
        for key in parser[section]:
            path = f"{section}.{key}"
            try:
                attr, parse = _SCHEMA[(section, key)]
            except KeyError:
                raise ConfigError(f"unknown key {path!r}") from None
            try:
                values[attr] = parse(parser[section][key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {path!r}: {exc}") from None

    for attr, check in _RANGE_CHECKS.items():
        if attr in values and not check(values[attr]):
            raise ConfigError(f"value out of range for {attr!r}: {values[attr]!r}")

    return ExperimentConfig(**values)


def load_config(source: str) -> ExperimentConfig:
    """Load from a preset name (``case-a``, ``case-b``) or a file path."""
    if source in ("case-a", "case-b"):
        text = (resources.files("derband") / "data" / f"{source}.cfg").read_text()
    else:
        text = Path(source).read_text()
    return parse_config(text)


def effective_text(cfg: ExperimentConfig) -> str:
    """Canonical re-parseable echo of a configuration, defaults applied."""
    attr_to_path = {attr: (sec, key) for (sec, key), (attr, _) in _SCHEMA.items()}

    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, tuple):
            return ", ".join(str(v) for v in value)
        return str(value)

    sections: dict[str, list[tuple[str, str]]] = {}
    for f in fields(ExperimentConfig):
        sec, key = attr_to_path[f.name]
        sections.setdefault(sec, []).append((key, fmt(getattr(cfg, f.name))))
    buf = io.StringIO()
    for sec in ("run", "reference", "agents", "controller", "analysis", "output"):
        buf.write(f"[{sec}]\n")
        for key, value in sections[sec]:
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
