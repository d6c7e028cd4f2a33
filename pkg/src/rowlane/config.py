"""Flat ``key=value`` configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys and unparsable
numbers are errors, so a typo never silently falls back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from rowlane.envelope import KinematicParams
from rowlane.sim import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run, with the desk-simulation defaults."""

    l_v: float = 5.0
    a_max_accel: float = 2.0
    a_min_brake: float = 2.0
    a_max_brake: float = 6.0
    rho: float = 0.1
    rho_human: float = 1.0
    v_max: float = 30.0
    v_ego: float = 20.0
    v_l2: float = 20.0
    sigma: float = 0.8
    t_lc: float = 3.0
    dt: float = 0.1
    seed: int = 0
    trials: int = 10_000
    jobs: int = 1

    def params(self) -> KinematicParams:
        return KinematicParams(
            a_max_accel=self.a_max_accel,
            a_min_brake=self.a_min_brake,
            a_max_brake=self.a_max_brake,
            rho=self.rho,
            rho_human=self.rho_human,
            v_max=self.v_max,
            l_v=self.l_v,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(params=self.params(), v_ego=self.v_ego, t_lc=self.t_lc, dt=self.dt)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = int(value) if _TYPES[key] in (int, "int") else float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    cfg = replace(base or RunConfig(), **values)
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(RunConfig))
