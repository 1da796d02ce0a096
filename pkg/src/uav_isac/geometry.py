"""Scenario configuration and UAV-to-ground link geometry.

A UAV with a vertical M-element half-wavelength ULA flies at constant
altitude D over three single-antenna ground nodes: the communication user,
the sensing target, and the eavesdropper. Everything below reduces to the
slant distance and the elevation angle of departure:

    d_o(rho)     = sqrt(||rho - s_o||^2 + D^2)
    cos theta_o  = D / d_o(rho)
    Phi_o[m]     = exp(j*pi*m*cos theta_o),  m = 0..M-1
    g_o(rho)     = sqrt(beta0) / d_o(rho) * Phi_o(rho)

with beta0 the LoS channel gain at 1 m. Positions are horizontal Cartesian
meters; the shared altitude enters only through d_o.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

NODES = ("u", "e", "t")


class ConfigError(ValueError):
    """Scenario configuration violates an invariant."""


class TrajectoryError(ValueError):
    """Trajectory violates a flight constraint."""


def _as_point(x, name):
    p = np.asarray(x, dtype=float)
    if p.shape != (2,):
        raise ConfigError(f"{name} must be a 2D point, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class ScenarioConfig:
    """All physical constants of one scenario.

    gamma_e may be math.inf, which disables the sensing-security ceiling
    (used by the no-security benchmark).
    """

    rho_init: np.ndarray = field(default_factory=lambda: np.array([300.0, 400.0]))
    rho_final: np.ndarray = field(default_factory=lambda: np.array([300.0, 600.0]))
    s_user: np.ndarray = field(default_factory=lambda: np.array([250.0, 520.0]))
    s_target: np.ndarray = field(default_factory=lambda: np.array([250.0, 480.0]))
    s_eve: np.ndarray = field(default_factory=lambda: np.array([350.0, 500.0]))
    altitude_D: float = 200.0
    T_total: float = 12.0
    slot_len_ts: float = 0.5
    N_slots: int = 24
    v_max: float = 25.0
    M_antennas: int = 4
    gamma_t: float = 1e-6
    gamma_e: float = 1e-6
    P_max: float = 1.0
    beta0: float = 1e-3
    sigma2: float = 1e-12
    antenna_spacing_ratio: float = 0.5

    def __post_init__(self):
        for name in ("rho_init", "rho_final", "s_user", "s_target", "s_eve"):
            object.__setattr__(self, name, _as_point(getattr(self, name), name))
        if self.slot_len_ts <= 0 or self.T_total <= 0:
            raise ConfigError("T_total and slot_len_ts must be positive")
        n = self.T_total / self.slot_len_ts
        if self.N_slots != round(n) or abs(n - round(n)) > 1e-9:
            raise ConfigError(
                f"N_slots must equal T_total/slot_len_ts = {n}, got {self.N_slots}"
            )
        if self.N_slots < 2:
            raise ConfigError("need at least 2 time slots")
        if self.altitude_D <= 0:
            raise ConfigError("altitude_D must be positive")
        for name in ("v_max", "P_max", "sigma2", "beta0"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.gamma_t < 0 or self.gamma_e < 0:
            raise ConfigError("beampattern thresholds must be nonnegative")
        if self.M_antennas < 1:
            raise ConfigError("M_antennas must be >= 1")
        if self.antenna_spacing_ratio != 0.5:
            raise ConfigError("antenna spacing is fixed at half a wavelength")
        span = float(np.linalg.norm(self.rho_init - self.rho_final))
        reach = (self.N_slots - 1) * self.v_max * self.slot_len_ts
        if span > reach + 1e-9:
            raise ConfigError(
                f"endpoints {span:.3f} m apart but only {reach:.3f} m reachable"
            )

    @property
    def V_max(self) -> float:
        """Maximum per-slot displacement v_max * t_s (m)."""
        return self.v_max * self.slot_len_ts

    @property
    def noise_over_gain(self) -> float:
        """sigma2 / beta0, the distance-normalized noise floor."""
        return self.sigma2 / self.beta0

    @property
    def security_enabled(self) -> bool:
        return math.isfinite(self.gamma_e)

    def node(self, which: str) -> np.ndarray:
        """Ground position of node 'u', 'e' or 't'."""
        try:
            return {"u": self.s_user, "e": self.s_eve, "t": self.s_target}[which]
        except KeyError:
            raise ValueError(f"unknown node {which!r}") from None

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(map(float, v)) if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    def with_changes(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Trajectory:
    """Per-slot horizontal UAV positions, shape (N, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
            raise TrajectoryError(f"positions must be (N>=2, 2), got {p.shape}")
        object.__setattr__(self, "positions", p)

    @property
    def n_slots(self) -> int:
        return self.positions.shape[0]

    def steps(self) -> np.ndarray:
        """Per-slot displacement magnitudes, length N-1."""
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)

    def validate(self, cfg: ScenarioConfig, tol: float = 1e-9):
        if self.n_slots != cfg.N_slots:
            raise TrajectoryError(
                f"trajectory has {self.n_slots} slots, scenario {cfg.N_slots}"
            )
        if np.linalg.norm(self.positions[0] - cfg.rho_init) > tol:
            raise TrajectoryError("trajectory does not start at rho_init")
        if np.linalg.norm(self.positions[-1] - cfg.rho_final) > tol:
            raise TrajectoryError("trajectory does not end at rho_final")
        worst = float(self.steps().max()) - cfg.V_max
        if worst > tol * max(1.0, cfg.V_max):
            raise TrajectoryError(f"slot displacement exceeds V_max by {worst:.3e} m")

    @classmethod
    def straight_line(cls, cfg: ScenarioConfig) -> "Trajectory":
        """Uniform-speed straight flight from rho_init to rho_final."""
        frac = np.linspace(0.0, 1.0, cfg.N_slots)[:, None]
        return cls(cfg.rho_init[None, :] * (1 - frac) + cfg.rho_final[None, :] * frac)

    def min_distance_to(self, point) -> float:
        """Smallest horizontal distance from any slot position to a point."""
        return float(np.linalg.norm(self.positions - np.asarray(point), axis=1).min())


def distance(rho, s, D: float) -> float:
    """Slant distance sqrt(||rho - s||^2 + D^2); requires D > 0."""
    if D <= 0:
        raise ValueError("altitude D must be positive")
    diff = np.asarray(rho, dtype=float) - np.asarray(s, dtype=float)
    return math.sqrt(float(diff @ diff) + D * D)


def aod_cosine(rho, s, D: float) -> float:
    """Cosine of the departure angle toward s: D / d(rho, s)."""
    return D / distance(rho, s, D)


def steering_vector(rho, s, D: float, M: int) -> np.ndarray:
    """ULA steering vector, entries exp(j*pi*m*cos theta) for m = 0..M-1."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return np.exp(1j * math.pi * np.arange(M) * aod_cosine(rho, s, D))


def channel_vector(rho, s, D: float, M: int, beta0: float) -> np.ndarray:
    """LoS channel sqrt(beta0)/d * steering_vector; norm sqrt(M*beta0)/d."""
    if beta0 <= 0:
        raise ValueError("beta0 must be positive")
    return (math.sqrt(beta0) / distance(rho, s, D)) * steering_vector(rho, s, D, M)


def node_steering(cfg: ScenarioConfig, rho, which: str) -> np.ndarray:
    return steering_vector(rho, cfg.node(which), cfg.altitude_D, cfg.M_antennas)


def node_channel(cfg: ScenarioConfig, rho, which: str) -> np.ndarray:
    return channel_vector(
        rho, cfg.node(which), cfg.altitude_D, cfg.M_antennas, cfg.beta0
    )


def node_distance(cfg: ScenarioConfig, rho, which: str) -> float:
    return distance(rho, cfg.node(which), cfg.altitude_D)
