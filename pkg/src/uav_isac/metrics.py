"""Link-level performance metrics and their closed-form array expansions.

The per-slot transmit state is an information covariance B (rank-one b*b^H
once recovered) plus a sensing/AN covariance A_s. For a node with channel
g = sqrt(beta0)/d * Phi:

    sinr      = |g^H b|^2 / (g^H A_s g + sigma2)
    rate      = log2(1 + sinr)
    secrecy   = [rate_user - rate_eve]^+
    gain      = Phi^H (B + A_s) Phi        (beampattern toward the node)

Because g^H X g = (beta0/d^2) * Phi^H X Phi, every rate term factors through
the distance-normalized expansion

    total_power_expansion(X) = Phi^H X Phi + (sigma2/beta0) d^2,

a cosine series in the matrix's polar entries that the trajectory subproblem
differentiates in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ScenarioConfig,
    Trajectory,
    distance,
    node_channel,
    node_distance,
)

LOG2E = math.log2(math.e)


class HermitianError(ValueError):
    """Input matrix is too far from Hermitian to symmetrize silently."""


def hermitize(X: np.ndarray, rel_tol: float = 1e-8, abs_tol: float = 1e-13) -> np.ndarray:
    """Return (X + X^H)/2; reject asymmetry above rel_tol (Frobenius).
    abs_tol keeps float noise on near-zero matrices from tripping the
    relative check."""
    X = np.asarray(X, dtype=complex)
    scale = np.linalg.norm(X)
    asym = np.linalg.norm(X - X.conj().T)
    if asym > max(rel_tol * scale, abs_tol):
        raise HermitianError(f"matrix asymmetry {asym:.2e} exceeds {rel_tol:.0e} rel")
    return 0.5 * (X + X.conj().T)


def quad_form(vec: np.ndarray, X: np.ndarray) -> float:
    """Real value of vec^H X vec for Hermitian X."""
    return float(np.real(vec.conj() @ X @ vec))


def psd_clip(X: np.ndarray) -> np.ndarray:
    """Nearest-PSD projection: symmetrize and zero out negative eigenvalues.
    Used on solver outputs, whose spectra dip below zero by the gap
    tolerance while the rate expressions assume exact PSD."""
    w, V = np.linalg.eigh(hermitize(X))
    if w[0] >= 0.0:
        return hermitize(X)
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


@dataclass(frozen=True)
class BeamSlot:
    """One slot of a beam plan: covariances plus optional info vector."""

    info_outer: np.ndarray  # (M, M) Hermitian PSD
    sense_cov: np.ndarray  # (M, M) Hermitian PSD
    info_vector: np.ndarray | None = None  # (M,) with b b^H = info_outer

    @property
    def total_cov(self) -> np.ndarray:
        return self.info_outer + self.sense_cov


@dataclass
class BeamPlan:
    """Per-slot transmit design: info covariance, sensing covariance.

    info_vector holds the rank-one beamformers once recovered; it is None
    for relaxed (PSD-only) plans.
    """

    info_outer: np.ndarray  # (N, M, M)
    sense_cov: np.ndarray  # (N, M, M)
    info_vector: np.ndarray | None = None  # (N, M)

    def __post_init__(self):
        self.info_outer = np.asarray(self.info_outer, dtype=complex)
        self.sense_cov = np.asarray(self.sense_cov, dtype=complex)
        if self.info_outer.shape != self.sense_cov.shape or self.info_outer.ndim != 3:
            raise ValueError("info_outer and sense_cov must both be (N, M, M)")
        if self.info_vector is not None:
            self.info_vector = np.asarray(self.info_vector, dtype=complex)
            if self.info_vector.shape != self.info_outer.shape[:2]:
                raise ValueError("info_vector must be (N, M)")

    @property
    def n_slots(self) -> int:
        return self.info_outer.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.info_outer.shape[1]

    def slot(self, n: int) -> BeamSlot:
        b = None if self.info_vector is None else self.info_vector[n]
        return BeamSlot(self.info_outer[n], self.sense_cov[n], b)

    def powers(self) -> tuple[np.ndarray, np.ndarray]:
        """(tr B[n], tr A_s[n]) per slot, real."""
        return (
            np.real(np.trace(self.info_outer, axis1=1, axis2=2)),
            np.real(np.trace(self.sense_cov, axis1=1, axis2=2)),
        )

    def validate(self, cfg: ScenarioConfig):
        if self.n_slots != cfg.N_slots or self.n_antennas != cfg.M_antennas:
            raise ValueError("plan shape does not match the scenario")
        pb, ps = self.powers()
        for n in range(self.n_slots):
            for name, X in (("info_outer", self.info_outer[n]),
                            ("sense_cov", self.sense_cov[n])):
                H = hermitize(X)
                tr = max(float(np.real(np.trace(H))), 0.0)
                lam_min = float(np.linalg.eigvalsh(H)[0])
                if lam_min < -1e-9 * max(tr, 1e-30):
                    raise ValueError(f"slot {n}: {name} not PSD (min eig {lam_min:.2e})")
            if pb[n] + ps[n] > cfg.P_max + 1e-9:
                raise ValueError(f"slot {n}: power {pb[n] + ps[n]:.12f} exceeds budget")
            if self.info_vector is not None:
                b = self.info_vector[n]
                err = np.linalg.norm(np.outer(b, b.conj()) - self.info_outer[n])
                if err > 1e-6 * max(pb[n], 1e-30):
                    raise ValueError(f"slot {n}: info_vector outer product mismatch")

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "BeamPlan":
        shape = (cfg.N_slots, cfg.M_antennas, cfg.M_antennas)
        return cls(np.zeros(shape, complex), np.zeros(shape, complex))


@dataclass(frozen=True)
class MatrixPolar:
    """Polar form of a Hermitian matrix: real diagonal plus magnitude/phase
    of the strict upper triangle (lower triangle implied by symmetry)."""

    diag: np.ndarray  # (M,) real
    mag: np.ndarray  # (M, M) real, strict upper triangle
    phase: np.ndarray  # (M, M) real, strict upper triangle

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "MatrixPolar":
        H = hermitize(X)
        upper = np.triu(H, k=1)
        return cls(np.real(np.diag(H)), np.abs(upper), np.angle(upper))

    def to_matrix(self) -> np.ndarray:
        upper = self.mag * np.exp(1j * self.phase)
        upper = np.triu(upper, k=1)
        return np.diag(self.diag).astype(complex) + upper + upper.conj().T


def sinr(rho, slot: BeamSlot, node: str, cfg: ScenarioConfig) -> float:
    """Received SINR at the user ('u') or eavesdropper ('e')."""
    if node not in ("u", "e"):
        raise ValueError("sinr is defined for nodes 'u' and 'e'")
    g = node_channel(cfg, rho, node)
    As = hermitize(slot.sense_cov)
    denom = quad_form(g, As) + cfg.sigma2
    if slot.info_vector is not None:
        num = abs(np.vdot(g, slot.info_vector)) ** 2
    else:
        num = quad_form(g, hermitize(slot.info_outer))
    return max(num, 0.0) / denom


def rate(rho, slot: BeamSlot, node: str, cfg: ScenarioConfig) -> float:
    return math.log2(1.0 + sinr(rho, slot, node, cfg))


def secrecy_rate(rho, slot: BeamSlot, cfg: ScenarioConfig, clamp: bool = True) -> float:
    """User rate minus eavesdropper rate; clamped at zero unless clamp=False."""
    val = rate(rho, slot, "u", cfg) - rate(rho, slot, "e", cfg)
    return max(val, 0.0) if clamp else val


def beampattern_gain(rho, slot: BeamSlot, s_node, cfg: ScenarioConfig) -> float:
    """Transmit array gain Phi^H (B + A_s) Phi toward a ground point."""
    return array_gain(slot.total_cov, rho, s_node, cfg)


def array_gain(E: np.ndarray, rho, s_node, cfg: ScenarioConfig) -> float:
    """Phi^H E Phi for an explicit total covariance E."""
    from .geometry import steering_vector

    phi = steering_vector(rho, s_node, cfg.altitude_D, cfg.M_antennas)
    return quad_form(phi, hermitize(E))


def _cosine_expansion(polar: MatrixPolar, rho, s_node, cfg: ScenarioConfig) -> float:
    """sum_p X_pp + 2 sum_{i<j} |X_ij| cos(phase_ij + pi (j-i) D / d)
    + (sigma2/beta0) d^2 — the quadratic form Phi^H X Phi rewritten through
    the polar entries, plus the distance-scaled noise floor."""
    d = distance(rho, s_node, cfg.altitude_D)
    M = polar.diag.size
    val = float(polar.diag.sum())
    ratio = math.pi * cfg.altitude_D / d
    for i in range(M):
        for j in range(i + 1, M):
            m = polar.mag[i, j]
            if m != 0.0:
                val += 2.0 * m * math.cos(polar.phase[i, j] + (j - i) * ratio)
    return val + cfg.noise_over_gain * d * d


def total_power_expansion(E_polar: MatrixPolar, rho, s_node, cfg) -> float:
    """Distance-normalized total received power (signal + AN + noise):
    equals Phi^H E Phi + (sigma2/beta0) d^2 with E = B + A_s."""
    return _cosine_expansion(E_polar, rho, s_node, cfg)


def interference_power_expansion(As_polar: MatrixPolar, rho, s_node, cfg) -> float:
    """Distance-normalized interference-plus-noise power (AN only)."""
    return _cosine_expansion(As_polar, rho, s_node, cfg)


def expansion_array_gain(polar: MatrixPolar, rho, s_node, cfg) -> float:
    """Pure beampattern gain recovered from the expansion: the cosine series
    without the noise-floor term."""
    d = distance(rho, s_node, cfg.altitude_D)
    return _cosine_expansion(polar, rho, s_node, cfg) - cfg.noise_over_gain * d * d


def secrecy_rate_expansion(
    E_polar: MatrixPolar, As_polar: MatrixPolar, rho, cfg: ScenarioConfig
) -> float:
    """Unclamped secrecy rate through the expansion identity:
    log2 tot_u - log2 int_u - (log2 tot_e - log2 int_e)."""
    tot_u = total_power_expansion(E_polar, rho, cfg.s_user, cfg)
    int_u = interference_power_expansion(As_polar, rho, cfg.s_user, cfg)
    tot_e = total_power_expansion(E_polar, rho, cfg.s_eve, cfg)
    int_e = interference_power_expansion(As_polar, rho, cfg.s_eve, cfg)
    return math.log2(tot_u) - math.log2(int_u) - math.log2(tot_e) + math.log2(int_e)


@dataclass
class FeasibilityReport:
    """Worst normalized residuals and per-slot pass flags for the problem
    constraints: endpoints, per-slot displacement, sensing floor, security
    ceiling, power budget. Residual <= tol means satisfied."""

    tol: float
    endpoint_residual: float
    displacement_residual: float
    sensing_residual: float
    security_residual: float
    power_residual: float
    sensing_ok: np.ndarray  # (N,) bool
    security_ok: np.ndarray
    power_ok: np.ndarray
    displacement_ok: np.ndarray  # (N-1,) bool

    @property
    def ok(self) -> bool:
        return (
            max(
                self.endpoint_residual,
                self.displacement_residual,
                self.sensing_residual,
                self.security_residual,
                self.power_residual,
            )
            <= self.tol
        )

    def failing_slots(self) -> list[int]:
        bad = ~(self.sensing_ok & self.security_ok & self.power_ok)
        return [int(i) for i in np.nonzero(bad)[0]]

    def summary(self) -> dict:
        return {
            "ok": bool(self.ok),
            "tol": self.tol,
            "endpoint_residual": self.endpoint_residual,
            "displacement_residual": self.displacement_residual,
            "sensing_residual": self.sensing_residual,
            "security_residual": self.security_residual,
            "power_residual": self.power_residual,
            "failing_slots": self.failing_slots(),
        }


def check_feasibility(
    traj: Trajectory, plan: BeamPlan, cfg: ScenarioConfig, tol: float = 1e-6
) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem on a (trajectory, plan)
    pair. Residuals are normalized by the constraint's own scale so a single
    tolerance applies across constraints of very different magnitudes."""
    if traj.n_slots != plan.n_slots:
        raise ValueError("trajectory and plan slot counts differ")
    N = traj.n_slots
    pos = traj.positions

    end_res = max(
        float(np.linalg.norm(pos[0] - cfg.rho_init)),
        float(np.linalg.norm(pos[-1] - cfg.rho_final)),
    ) / max(1.0, cfg.V_max)
    step_res = (traj.steps() - cfg.V_max) / cfg.V_max

    sens = np.zeros(N)
    sec = np.zeros(N)
    pb, ps = plan.powers()
    pw = (pb + ps - cfg.P_max) / cfg.P_max
    for n in range(N):
        slot = plan.slot(n)
        d_t = node_distance(cfg, pos[n], "t")
        d_e = node_distance(cfg, pos[n], "e")
        gain_t = beampattern_gain(pos[n], slot, cfg.s_target, cfg)
        floor = cfg.gamma_t * d_t * d_t
        sens[n] = (floor - gain_t) / max(floor, 1e-30)
        if cfg.security_enabled:
            gain_e = beampattern_gain(pos[n], slot, cfg.s_eve, cfg)
            ceil = cfg.gamma_e * d_e * d_e
            sec[n] = (gain_e - ceil) / max(ceil, 1e-30)
        else:
            sec[n] = -math.inf

    return FeasibilityReport(
        tol=tol,
        endpoint_residual=end_res,
        displacement_residual=float(step_res.max()),
        sensing_residual=float(sens.max()),
        security_residual=float(sec.max()),
        power_residual=float(pw.max()),
        sensing_ok=sens <= tol,
        security_ok=sec <= tol,
        power_ok=pw <= tol,
        displacement_ok=step_res <= tol,
    )


def average_secrecy_rate(
    traj: Trajectory, plan: BeamPlan, cfg: ScenarioConfig, clamp: bool = True
) -> float:
    """Mean secrecy rate over slots (the problem objective)."""
    vals = [
        secrecy_rate(traj.positions[n], plan.slot(n), cfg, clamp=clamp)
        for n in range(traj.n_slots)
    ]
    return float(np.mean(vals))


def per_slot_secrecy(traj, plan, cfg, clamp: bool = True) -> np.ndarray:
    return np.array(
        [
            secrecy_rate(traj.positions[n], plan.slot(n), cfg, clamp=clamp)
            for n in range(traj.n_slots)
        ]
    )
