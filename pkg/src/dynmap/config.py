"""Simulation configuration and the flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


STRATEGIES = ("PB", "ETB")
CONGESTION = ("none", "CSCC", "NACC")


@dataclass(frozen=True)
class SimConfig:
    # timing and radio
    T_t: float = 0.1
    T_d: float = 0.1
    r: float = 140.0
    n_sc: int = 8
    n_sc_tot: int = 52
    T_sim: float = 100.0
    N_sim: int = 20
    Delta_track: float = 10.0

    # broadcasting
    strategy: str = "PB"
    congestion: str = "none"
    T_period: float = 1.0
    E_thr: float = 5.0
    T_max: float = 10.0

    # filter noise; R entries follow the table numbering:
    # R11/R22 position, R33 speed, R44 acceleration, R55 heading, R66 turn rate
    q: float = 1.0
    R11: float = 1.18535
    R22: float = 1.18535
    R33: float = 0.5
    R44: float = 0.39
    R55: float = 0.09211
    R66: float = 0.01587
    ukf_alpha: float = 1.0
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    remote_fusion: bool = False

    # error weighting
    A_lambda: float = 1.0
    B_lambda: float = 0.05
    C_lambda: float = 1.0
    D_lambda: float = 1.0
    E_lambda: float = 0.0
    nu_lambda: float = 0.2
    d_0: float = 42.0

    # congestion control
    alpha: float = 0.1
    beta: float = math.nan  # nan -> (2 - alpha) / K
    K: float = math.nan  # nan -> n_vehicles / n_sc
    CBR_target: float = 0.68
    delta_min: float = -1.0
    delta_max: float = 1.0
    rho_min: float = 0.0006
    rho_max: float = 1.0
    P_thr: float = 0.3
    N_cbr_avg: int = 100
    N_cbr_update: int = 10
    rho_grid_points: int = 512

    # scenario
    n_vehicles: int = 62
    v_max: float = 13.89
    area_km2: float = 0.5168
    trace: str = ""
    calibration_map: str = ""
    warmup: float = 2.0

    # calibration run
    H_max: int = 100
    E_max: float = 100.0
    calib_reset_every: int = 10

    seed: int = 0

    # ----- derived quantities -----
    @property
    def K_eff(self) -> float:
        return self.K if not math.isnan(self.K) else self.n_vehicles / self.n_sc

    @property
    def beta_eff(self) -> float:
        return self.beta if not math.isnan(self.beta) else (2.0 - self.alpha) / self.K_eff

    @property
    def delay_slots(self) -> int:
        return int(round(self.T_d / self.T_t))

    @property
    def n_slots(self) -> int:
        return int(round(self.T_sim / self.T_t))

    @property
    def track_timeout_slots(self) -> float:
        return self.Delta_track / self.T_t

    @property
    def R_diag(self) -> np.ndarray:
        """Measurement variances in state order (x, y, h, u, a, omega)."""
        return np.array([self.R11, self.R22, self.R55, self.R33, self.R44, self.R66])

    @property
    def density(self) -> float:
        return self.n_vehicles / self.area_km2

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "SimConfig":
        if not self.T_t > 0:
            raise ConfigError("T_t must be positive")
        if self.T_d < 0 or abs(self.T_d / self.T_t - round(self.T_d / self.T_t)) > 1e-9:
            raise ConfigError("T_d must be a non-negative multiple of T_t")
        if not 0 < self.n_sc <= self.n_sc_tot:
            raise ConfigError("need 0 < n_sc <= n_sc_tot")
        if not 0 < self.rho_min < self.rho_max <= 1:
            raise ConfigError("need 0 < rho_min < rho_max <= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.congestion not in CONGESTION:
            raise ConfigError(f"congestion must be one of {CONGESTION}, got {self.congestion!r}")
        if self.q <= 0 or min(self.R_diag) < 0:
            raise ConfigError("q must be positive and R entries non-negative")
        if self.nu_lambda <= 0:
            raise ConfigError("nu_lambda must be positive")
        if not 0 < self.P_thr < 1:
            raise ConfigError("P_thr must lie in (0, 1)")
        if self.N_cbr_avg < 1 or self.N_cbr_update < 1:
            raise ConfigError("CBR window sizes must be >= 1")
        if self.T_sim <= 0 or self.N_sim < 1:
            raise ConfigError("T_sim and N_sim must be positive")
        return self

    # ----- text format -----
    def to_text(self) -> str:
        lines = ["# dynmap configuration (key = value)"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {f.name: type(f.default) for f in fields(SimConfig)}
_DEFAULTS = {f.name: f.default for f in fields(SimConfig)}


def coerce_value(key: str, raw: str):
    """Parse ``raw`` into the type of config field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str, source: str = "<string>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = coerce_value(key, raw)
    return values


def build_config(values: dict | None = None, base: SimConfig | None = None) -> tuple[SimConfig, set]:
    """Apply ``values`` over ``base`` and resolve conflicting settings.

    Returns the validated config and the set of keys that were set explicitly.
    Precedence: a fixed-strategy parameter that the selected strategy does not
    use (E_thr/T_max under PB, T_period under ETB) is ignored with a warning.
    Values equal to the default (as in a dumped config file) do not warn.
    """
    values = dict(values or {})
    for key in values:
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(values[key], str) and _FIELD_TYPES[key] is not str:
            values[key] = coerce_value(key, values[key])
    cfg = dataclasses.replace(base or SimConfig(), **values).validate()
    explicit = set(values)
    changed = {k for k in explicit if values[k] != _DEFAULTS[k]}
    if cfg.strategy == "PB":
        ignored = changed & {"E_thr", "T_max"}
    else:
        ignored = changed & {"T_period"}
    for key in sorted(ignored):
        warnings.warn(f"{key} is not used by strategy {cfg.strategy}; ignored", stacklevel=3)
    return cfg, explicit


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> tuple[SimConfig, set]:
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        values.update(parse_config_text(text, str(p)))
    values.update(overrides or {})
    return build_config(values)
