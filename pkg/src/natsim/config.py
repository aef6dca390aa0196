"""Run configuration: defaults, flat INI files, and override merging.

Config files are flat ``key = value`` lines with dotted namespaces, e.g.::

    scheme = natcp
    trace = const:12mbps
    duration_s = 60
    assist.period_us = 50000
    path.loss_prob = 0.001
    flows.start_s = 0, 15
    flows.ue = 0, 0

Precedence: command-line flags > config file > built-in defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cc import SCHEMES
from .emulink import PathConfig
from .netassist import NetAssistConfig
from .trace import (
    TraceSchedule,
    is_trace_expression,
    parse_trace,
    schedule_from_spec,
)

ASSIST_MODES = ("oob", "ib")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    ue_id: int
    start_us: int


@dataclass
class SimConfig:
    scheme: str = "natcp"
    trace: str = "const:12mbps"
    duration_s: float = 60.0
    seed: int = 1
    mtu: int = 1500
    queue_capacity_bytes: int = 150_000
    alpha: float = 2.0
    divide_pacing_by_beta: bool = False
    tg_horizon_us: int = 10_000_000
    flow_starts_s: tuple[float, ...] = (0.0,)
    flow_ues: tuple[int, ...] = (0,)
    path: PathConfig = field(default_factory=PathConfig)
    assist: NetAssistConfig = field(default_factory=NetAssistConfig)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1e6))

    def _flow_ue_list(self) -> tuple[int, ...]:
        # a single UE entry applies to every flow
        if len(self.flow_ues) == 1 and len(self.flow_starts_s) > 1:
            return self.flow_ues * len(self.flow_starts_s)
        return self.flow_ues

    def flows(self) -> list[FlowSpec]:
        return [
            FlowSpec(i, ue, int(round(start * 1e6)))
            for i, (start, ue) in enumerate(
                zip(self.flow_starts_s, self._flow_ue_list()))
        ]

    def ue_ids(self) -> list[int]:
        seen: list[int] = []
        for ue in self._flow_ue_list():
            if ue not in seen:
                seen.append(ue)
        return seen

    def copy(self) -> "SimConfig":
        dup = dataclasses.replace(self)
        dup.path = dataclasses.replace(self.path)
        dup.assist = dataclasses.replace(self.assist)
        return dup

    # -- validation ---------------------------------------------------------

    def validate(self) -> list[str]:
        errs: list[str] = []
        if self.scheme not in SCHEMES:
            errs.append(f"scheme must be one of {'/'.join(SCHEMES)}, got {self.scheme!r}")
        if self.duration_s <= 0:
            errs.append("duration_s must be positive")
        if self.mtu <= 0:
            errs.append("mtu must be positive")
        if self.queue_capacity_bytes < self.mtu:
            errs.append("queue.capacity_bytes must hold at least one MTU packet")
        if not (0.0 <= self.path.loss_prob <= 1.0):
            errs.append("path.loss_prob must be in [0, 1]")
        if self.assist.mode not in ASSIST_MODES:
            errs.append(f"assist.mode must be one of {'/'.join(ASSIST_MODES)}")
        if self.assist.period_us <= 0:
            errs.append("assist.period_us must be positive")
        if self.assist.probe_interval_us <= 0:
            errs.append("assist.probe_interval_us must be positive")
        if self.alpha <= 0:
            errs.append("cc.alpha must be positive")
        if not self.flow_starts_s:
            errs.append("at least one flow is required")
        if len(self.flow_ues) not in (1, len(self.flow_starts_s)):
            errs.append("flows.ue must list one UE or one per flows.start_s entry")
        for i, start in enumerate(self.flow_starts_s):
            if not (0 <= start < self.duration_s):
                errs.append(f"flow {i} start {start}s outside [0, duration)")
        return errs

    def require_valid(self) -> "SimConfig":
        errs = self.validate()
        if errs:
            raise ConfigError("; ".join(errs))
        return self


def _parse_bool(text: str) -> bool:
    norm = text.strip().lower()
    if norm in ("1", "true", "yes", "on"):
        return True
    if norm in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _parse_optional_int(text: str) -> int | None:
    norm = text.strip().lower()
    if norm in ("", "none", "off"):
        return None
    return int(norm)


# key -> (caster, setter). Setters mutate the SimConfig in place.
_SETTINGS = {
    "scheme": (str, lambda c, v: setattr(c, "scheme", v)),
    "trace": (str, lambda c, v: setattr(c, "trace", v)),
    "duration_s": (float, lambda c, v: setattr(c, "duration_s", v)),
    "seed": (int, lambda c, v: setattr(c, "seed", v)),
    "mtu": (int, lambda c, v: setattr(c, "mtu", v)),
    "queue.capacity_bytes": (int, lambda c, v: setattr(c, "queue_capacity_bytes", v)),
    "path.down_owd_us": (int, lambda c, v: setattr(c.path, "down_owd_us", v)),
    "path.up_owd_us": (int, lambda c, v: setattr(c.path, "up_owd_us", v)),
    "path.uplink_rate_bps": (float, lambda c, v: setattr(c.path, "uplink_rate_bps", v)),
    "path.oob_delay_us": (int, lambda c, v: setattr(c.path, "oob_delay_us", v)),
    "path.loss_prob": (float, lambda c, v: setattr(c.path, "loss_prob", v)),
    "path.probe_jitter_us": (int, lambda c, v: setattr(c.path, "probe_jitter_us", v)),
    "assist.period_us": (int, lambda c, v: setattr(c.assist, "period_us", v)),
    "assist.mode": (str, lambda c, v: setattr(c.assist, "mode", v)),
    "assist.probe_interval_us": (int, lambda c, v: setattr(c.assist, "probe_interval_us", v)),
    "assist.feedback_size_bytes": (int, lambda c, v: setattr(c.assist, "feedback_size", v)),
    "assist.part2_ceiling_us": (int, lambda c, v: setattr(c.assist, "part2_ceiling_us", v)),
    "assist.suppress_after_us": (
        _parse_optional_int,
        lambda c, v: setattr(c.assist, "suppress_after_us", v),
    ),
    "cc.alpha": (float, lambda c, v: setattr(c, "alpha", v)),
    "cc.divide_pacing_by_beta": (
        _parse_bool,
        lambda c, v: setattr(c, "divide_pacing_by_beta", v),
    ),
    "cc.tg_horizon_us": (int, lambda c, v: setattr(c, "tg_horizon_us", v)),
    "flows.start_s": (_parse_float_list, lambda c, v: setattr(c, "flow_starts_s", v)),
    "flows.ue": (_parse_int_list, lambda c, v: setattr(c, "flow_ues", v)),
}

KNOWN_KEYS = tuple(sorted(_SETTINGS))


def parse_config_text(text: str) -> dict[str, str]:
    """Read flat ``key = value`` lines into a string map."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keep dotted keys as written
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return dict(parser.items("run"))


def apply_settings(cfg: SimConfig, settings: dict[str, str]) -> SimConfig:
    """Apply string-typed settings onto a config, with type checking."""
    for key, raw in settings.items():
        entry = _SETTINGS.get(key)
        if entry is None:
            raise ConfigError(f"unknown config key {key!r}")
        caster, setter = entry
        try:
            setter(cfg, caster(raw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    return cfg


def build_config(
    file_path: str | None = None,
    overrides: dict[str, str] | None = None,
) -> SimConfig:
    """Defaults, then the config file, then explicit overrides."""
    cfg = SimConfig()
    if file_path is not None:
        text = Path(file_path).read_text()
        apply_settings(cfg, parse_config_text(text))
    if overrides:
        apply_settings(cfg, overrides)
    return cfg


def resolve_schedule(cfg: SimConfig) -> TraceSchedule:
    """Turn the config's trace field into a delivery schedule.

    The field is either a generator expression (``const:``/``step:``/
    ``walk:``) or a path to a trace file of millisecond timestamps.
    Missing files raise FileNotFoundError so callers can distinguish
    absent inputs from malformed ones.
    """
    duration_ms = int(round(cfg.duration_s * 1000))
    if is_trace_expression(cfg.trace):
        return schedule_from_spec(cfg.trace, duration_ms, cfg.mtu, cfg.seed)
    text = Path(cfg.trace).read_text()
    return parse_trace(text, mtu=cfg.mtu)
