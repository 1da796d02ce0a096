"""Per-slot transmit design for a fixed trajectory.

The relaxed per-slot problem keeps the two concave rate logs and replaces
the two subtracted (convex in disguise) logs by their tangent planes at the
current iterate, which makes each pass a small PSD program with two
exponential-cone hypographs:

    max  log2(p_u(B, As) + s2) + log2(q_e(As) + s2)
         - [floor_u + tr(tan_u (As - As_l))]
         - [floor_e + tr(tan_e (B - B_l)) + tr(tan_e (As - As_l))]
    s.t. gain toward target  >= gamma_t d_t^2
         gain toward eve     <= gamma_e d_e^2
         tr(B) + tr(As)      <= P_max,   B, As psd

with p_u = g_u^H (B + As) g_u, q_e = g_e^H As g_e. The tangent surrogate
touches the true unclamped secrecy rate at the expansion point and lower
bounds it everywhere, so iterating is monotone. A converged relaxed pair is
reduced to a rank-one beamformer in closed form without moving any
constraint or the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .geometry import ScenarioConfig, Trajectory, node_channel, node_distance, node_steering
from .metrics import LOG2E, BeamPlan, BeamSlot, hermitize, psd_clip, quad_form, secrecy_rate


class SlotInfeasibleError(RuntimeError):
    """A per-slot transmit design has no feasible point at this position."""

    def __init__(self, msg, slots=None):
        super().__init__(msg)
        self.slots = list(slots) if slots is not None else []


@dataclass
class BeamStop:
    eps_obj: float = 1e-4  # bits, per-slot objective change
    max_iter: int = 30
    solver_tol: float = 1e-8


@dataclass(frozen=True)
class SurrogateCoeffs:
    """Tangent-plane data for the two linearized log terms, taken at the
    expansion point (ref_info, ref_sense)."""

    floor_user: float  # log2 of user's AN+noise power at the ref point
    tangent_user: np.ndarray  # (M, M) Hermitian PSD
    floor_eve: float  # log2 of eve's total received power at the ref point
    tangent_eve: np.ndarray
    ref_info: np.ndarray
    ref_sense: np.ndarray


@dataclass
class ScaState:
    """Bookkeeping for one fixed-trajectory beamforming pass."""

    iterations: np.ndarray  # (N,) per-slot iteration counts
    histories: list  # per-slot true-objective traces
    objective: float = 0.0  # average unclamped secrecy rate of the result


def _coeffs_from_channels(g_u, g_e, B_l, As_l, sigma2) -> SurrogateCoeffs:
    B_l = hermitize(B_l)
    As_l = hermitize(As_l)
    den_u = quad_form(g_u, As_l) + sigma2
    den_e = quad_form(g_e, B_l) + quad_form(g_e, As_l) + sigma2
    return SurrogateCoeffs(
        floor_user=math.log2(den_u),
        tangent_user=(LOG2E / den_u) * np.outer(g_u, g_u.conj()),
        floor_eve=math.log2(den_e),
        tangent_eve=(LOG2E / den_e) * np.outer(g_e, g_e.conj()),
        ref_info=B_l,
        ref_sense=As_l,
    )


def surrogate_coeffs(rho, B_l, As_l, cfg: ScenarioConfig) -> SurrogateCoeffs:
    """Tangent constants/planes of the two subtracted logs at (B_l, As_l)."""
    return _coeffs_from_channels(
        node_channel(cfg, rho, "u"), node_channel(cfg, rho, "e"), B_l, As_l, cfg.sigma2
    )


def surrogate_objective(B, As, coeffs: SurrogateCoeffs, rho, cfg: ScenarioConfig) -> float:
    """Tangent lower bound of the unclamped per-slot secrecy rate (bits)."""
    g_u = node_channel(cfg, rho, "u")
    g_e = node_channel(cfg, rho, "e")
    B = hermitize(B)
    As = hermitize(As)
    kept = math.log2(quad_form(g_u, B) + quad_form(g_u, As) + cfg.sigma2)
    kept += math.log2(quad_form(g_e, As) + cfg.sigma2)
    lin_u = coeffs.floor_user + np.trace(coeffs.tangent_user @ (As - coeffs.ref_sense)).real
    lin_e = coeffs.floor_eve + np.trace(coeffs.tangent_eve @ (B - coeffs.ref_info)).real
    lin_e += np.trace(coeffs.tangent_eve @ (As - coeffs.ref_sense)).real
    return kept - lin_u - lin_e


def eve_null_basis(rho, cfg: ScenarioConfig):
    """A zero gain ceiling forces (B + As) Phi_e = 0 exactly, which has no
    strictly feasible point as an inequality; instead the design is solved
    on the orthogonal complement of Phi_e. Returns the M x (M-1) orthonormal
    basis of that complement, or None when the ceiling is positive/absent."""
    if not cfg.security_enabled:
        return None
    d_e = node_distance(cfg, rho, "e")
    if cfg.gamma_e * d_e * d_e > 0.0:
        return None
    phi_e = node_steering(cfg, rho, "e")
    q, _ = np.linalg.qr(
        np.column_stack([phi_e, np.eye(cfg.M_antennas, dtype=complex)]), mode="reduced"
    )
    return q[:, 1:cfg.M_antennas]


def slot_constraints(prog: conic.ConicProgram, rho, cfg: ScenarioConfig, basis=None):
    """Attach the shared per-slot constraint set (gain floor toward the
    target, gain ceiling toward the eavesdropper, total power) to a program
    with psd blocks 'B' and 'As'. With a null-space basis the ceiling holds
    identically and is omitted."""
    dim = cfg.M_antennas if basis is None else basis.shape[1]
    phi_t = node_steering(cfg, rho, "t")
    if basis is not None:
        phi_t = basis.conj().T @ phi_t
    proj_t = np.outer(phi_t, phi_t.conj())
    d_t = node_distance(cfg, rho, "t")
    prog.add_ge(conic.expr({"B": proj_t, "As": proj_t}, offset=-cfg.gamma_t * d_t * d_t))
    if cfg.security_enabled and basis is None:
        phi_e = node_steering(cfg, rho, "e")
        proj_e = np.outer(phi_e, phi_e.conj())
        d_e = node_distance(cfg, rho, "e")
        prog.add_le(conic.expr({"B": proj_e, "As": proj_e}, offset=-cfg.gamma_e * d_e * d_e))
    prog.add_le(conic.expr({"B": np.eye(dim), "As": np.eye(dim)}, offset=-cfg.P_max))


def solve_slot(rho, prev, cfg: ScenarioConfig, tol: float = 1e-8):
    """One tangent-surrogate maximization from the feasible pair prev.

    Returns Hermitian (B*, As*). Raises SlotInfeasibleError when the array
    cannot reach the sensing floor at this position or the solver certifies
    infeasibility.
    """
    B_l, As_l = prev
    M = cfg.M_antennas
    d_t = node_distance(cfg, rho, "t")
    if cfg.gamma_t * d_t * d_t > M * cfg.P_max * (1 + 1e-12):
        raise SlotInfeasibleError(
            f"sensing floor {cfg.gamma_t * d_t * d_t:.3e} exceeds the array ceiling "
            f"{M * cfg.P_max:.3e}"
        )
    basis = eve_null_basis(rho, cfg)
    g_u = node_channel(cfg, rho, "u")
    g_e = node_channel(cfg, rho, "e")
    if basis is not None:
        if basis.shape[1] == 0:
            zero = np.zeros((M, M), dtype=complex)
            return zero, zero
        g_u = basis.conj().T @ g_u
        g_e = basis.conj().T @ g_e  # ~0 by construction
        B_l = basis.conj().T @ B_l @ basis
        As_l = basis.conj().T @ As_l @ basis
    coeffs = _coeffs_from_channels(g_u, g_e, B_l, As_l, cfg.sigma2)

    # normalize each log argument by its expansion-point value so the cone
    # sees O(1) data across the ~1e9 dynamic range between noise power and
    # peak received power; the shift is a constant in the objective
    ref_u = quad_form(g_u, B_l) + quad_form(g_u, As_l) + cfg.sigma2
    ref_e = quad_form(g_e, As_l) + cfg.sigma2
    H_u = np.outer(g_u, g_u.conj()) / ref_u
    H_e = np.outer(g_e, g_e.conj()) / ref_e

    dim = g_u.size
    prog = conic.ConicProgram()
    prog.add_psd_block("B", dim)
    prog.add_psd_block("As", dim)
    lin = conic.expr(
        {"B": -coeffs.tangent_eve, "As": -(coeffs.tangent_user + coeffs.tangent_eve)}
    )
    prog.maximize(
        lin,
        log_terms=[
            (1 / math.log(2), conic.expr({"B": H_u, "As": H_u}, offset=cfg.sigma2 / ref_u)),
            (1 / math.log(2), conic.expr({"As": H_e}, offset=cfg.sigma2 / ref_e)),
        ],
    )
    slot_constraints(prog, rho, cfg, basis)
    sol = conic.solve(prog, tol=tol)
    if sol.status == "infeasible":
        raise SlotInfeasibleError("per-slot program certified infeasible")
    if sol.status not in ("optimal", "max_iter"):
        raise RuntimeError(f"unexpected solver status {sol.status}")
    B_out, As_out = psd_clip(sol.blocks["B"]), psd_clip(sol.blocks["As"])
    if basis is not None:
        B_out = basis @ B_out @ basis.conj().T
        As_out = basis @ As_out @ basis.conj().T
    return B_out, As_out


def rank_one_reconstruct(B_star, As_star, rho, cfg: ScenarioConfig):
    """Closed-form rank-one recovery from a relaxed pair.

    b = B* g_u / sqrt(g_u^H B* g_u) reproduces B*'s quadratic forms at both
    the user and the eavesdropper; moving the remainder B* - b b^H into the
    AN covariance keeps B + As, hence every constraint value and the
    objective, exactly. The remainder is PSD by Cauchy-Schwarz.
    """
    B_star = hermitize(B_star)
    As_star = hermitize(As_star)
    g_u = node_channel(cfg, rho, "u")
    power_u = quad_form(g_u, B_star)
    tr = max(np.trace(B_star).real, 0.0)
    if power_u <= 1e-15 * max(tr, 1e-300):
        # no user-directed power to extract: keep everything as AN
        b = np.zeros(cfg.M_antennas, dtype=complex)
        return b, np.outer(b, b.conj()), hermitize(B_star + As_star)
    b = (B_star @ g_u) / math.sqrt(power_u)
    B_bar = np.outer(b, b.conj())
    As_bar = psd_clip(B_star + As_star - B_bar)
    return b, B_bar, As_bar


def sca_converge_slot(rho, cfg: ScenarioConfig, prev=None, stop: BeamStop | None = None):
    """Run the per-slot tangent iteration to convergence.

    Returns (B*, As*, history) with history the true unclamped objective
    after each solve. prev defaults to the margin-maximizing feasible start.
    """
    stop = stop or BeamStop()
    if prev is None:
        B_l, As_l = feasible_slot_start(rho, cfg)
    else:
        B_l, As_l = hermitize(prev[0]), hermitize(prev[1])
    obj = secrecy_rate(rho, BeamSlot(B_l, As_l), cfg, clamp=False)
    history = [obj]
    for _ in range(stop.max_iter):
        B_new, As_new = solve_slot(rho, (B_l, As_l), cfg, tol=stop.solver_tol)
        new_obj = secrecy_rate(rho, BeamSlot(B_new, As_new), cfg, clamp=False)
        if new_obj < obj - 1e-6:
            # tangent model guarantees ascent; a drop beyond tolerance means
            # the solver stalled, so keep the previous iterate
            break
        B_l, As_l, delta, obj = B_new, As_new, new_obj - obj, new_obj
        history.append(obj)
        if abs(delta) < stop.eps_obj:
            break
    return B_l, As_l, history


def feasible_slot_start(rho, cfg: ScenarioConfig):
    """Deterministic feasible start: maximize the sensing margin with AN
    only, then shift half the AN power into a user-directed beam when that
    keeps all constraints satisfied."""
    M = cfg.M_antennas
    d_t = node_distance(cfg, rho, "t")
    floor = cfg.gamma_t * d_t * d_t
    zero = np.zeros((M, M), dtype=complex)
    basis = eve_null_basis(rho, cfg)
    if basis is not None and basis.shape[1] == 0:
        if floor > 0.0:
            raise SlotInfeasibleError("zero ceiling leaves no transmit subspace")
        return zero, zero
    phi_t = node_steering(cfg, rho, "t")
    if basis is not None:
        phi_t = basis.conj().T @ phi_t
    proj_t = np.outer(phi_t, phi_t.conj())
    dim = phi_t.size

    prog = conic.ConicProgram()
    prog.add_psd_block("As", dim)
    prog.maximize(conic.expr({"As": proj_t}))
    if cfg.security_enabled and basis is None:
        phi_e = node_steering(cfg, rho, "e")
        d_e = node_distance(cfg, rho, "e")
        prog.add_le(
            conic.expr(
                {"As": np.outer(phi_e, phi_e.conj())},
                offset=-cfg.gamma_e * d_e * d_e,
            )
        )
    prog.add_le(conic.expr({"As": np.eye(dim)}, offset=-cfg.P_max))
    sol = conic.solve(prog)
    if sol.status not in ("optimal", "max_iter"):
        raise SlotInfeasibleError(f"margin program status {sol.status}")
    if sol.objective < floor * (1 - 1e-9) - 1e-12:
        raise SlotInfeasibleError(
            f"best sensing gain {sol.objective:.3e} below floor {floor:.3e}"
        )
    As = psd_clip(sol.blocks["As"])
    if basis is not None:
        As = basis @ As @ basis.conj().T

    g_u = node_channel(cfg, rho, "u")
    u_hat = g_u / np.linalg.norm(g_u)
    if basis is not None:
        u_hat = basis @ (basis.conj().T @ u_hat)
        norm = np.linalg.norm(u_hat)
        u_hat = u_hat / norm if norm >= 1e-12 else None
    candidates = []
    if u_hat is not None:
        candidates.append(
            (0.5 * np.trace(As).real * np.outer(u_hat, u_hat.conj()), 0.5 * As)
        )
        nulled = _eve_nulled_candidate(rho, cfg, basis)
        if nulled is not None:
            candidates.append(nulled)
    # the AN-only margin design is the guaranteed fallback
    best = (secrecy_rate(rho, BeamSlot(zero, As), cfg, clamp=False), zero, As)
    for B_c, As_c in candidates:
        if not _slot_feasible(B_c, As_c, rho, cfg):
            continue
        val = secrecy_rate(rho, BeamSlot(B_c, As_c), cfg, clamp=False)
        if val > best[0]:
            best = (val, B_c, As_c)
    return best[1], best[2]


def _eve_nulled_candidate(rho, cfg: ScenarioConfig, basis=None):
    """Full-power beam along the user channel projected out of the
    eavesdropper direction, plus the smallest target-pointed AN that meets
    the sensing floor. Near-collinear user/eve channels make this 'needle'
    design the dominant strategy, and the tangent iteration climbs toward
    it too slowly to be left to find it alone."""
    M = cfg.M_antennas
    g_u = node_channel(cfg, rho, "u")
    phi_e = node_steering(cfg, rho, "e")
    e_hat = phi_e / np.linalg.norm(phi_e)
    b_dir = g_u - np.vdot(e_hat, g_u) * e_hat
    if basis is not None:
        b_dir = basis @ (basis.conj().T @ b_dir)
    norm = np.linalg.norm(b_dir)
    if norm < 1e-9 * np.linalg.norm(g_u):
        return None
    b_dir = b_dir / norm

    phi_t = node_steering(cfg, rho, "t")
    if basis is not None:
        phi_t_eff = basis @ (basis.conj().T @ phi_t)
    else:
        phi_t_eff = phi_t
    # AN along phi_t_eff/||phi_t_eff|| delivers ||phi_t_eff||^2 of target
    # gain per unit power
    tnorm = float(np.linalg.norm(phi_t_eff) ** 2)
    d_t = node_distance(cfg, rho, "t")
    floor = cfg.gamma_t * d_t * d_t
    for power_frac in (1.0, 0.75, 0.5):
        p = power_frac * cfg.P_max
        gain_b = p * abs(np.vdot(phi_t, b_dir)) ** 2
        need = max(floor * 1.02 - gain_b, 0.0)
        if need > 0.0 and tnorm < 1e-12:
            continue
        q = need / tnorm if need > 0.0 else 0.0
        if p + q > cfg.P_max:
            continue
        a_dir = phi_t_eff / max(np.linalg.norm(phi_t_eff), 1e-300)
        B_c = p * np.outer(b_dir, b_dir.conj())
        As_c = q * np.outer(a_dir, a_dir.conj())
        if _slot_feasible(B_c, As_c, rho, cfg):
            return B_c, As_c
    return None


def _slot_feasible(B, As, rho, cfg: ScenarioConfig, tol: float = 1e-9) -> bool:
    phi_t = node_steering(cfg, rho, "t")
    d_t = node_distance(cfg, rho, "t")
    E = B + As
    if quad_form(phi_t, E) < cfg.gamma_t * d_t * d_t * (1 - tol) - 1e-15:
        return False
    if cfg.security_enabled:
        phi_e = node_steering(cfg, rho, "e")
        d_e = node_distance(cfg, rho, "e")
        ceil = cfg.gamma_e * d_e * d_e
        if quad_form(phi_e, E) > ceil * (1 + tol) + 1e-15:
            return False
    power = np.trace(E).real
    return power <= cfg.P_max * (1 + tol)


def initial_plan(traj: Trajectory, cfg: ScenarioConfig):
    """Feasible starting plan on a trajectory. Returns (plan, bad_slots)
    where bad_slots lists slot indices with no feasible transmit design."""
    N, M = traj.n_slots, cfg.M_antennas
    info = np.zeros((N, M, M), dtype=complex)
    sense = np.zeros((N, M, M), dtype=complex)
    bad = []
    for n in range(N):
        try:
            info[n], sense[n] = feasible_slot_start(traj.positions[n], cfg)
        except SlotInfeasibleError:
            bad.append(n)
    return BeamPlan(info, sense), bad


def run_beamforming(
    traj: Trajectory,
    init_plan: BeamPlan,
    cfg: ScenarioConfig,
    stop: BeamStop | None = None,
):
    """Optimize every slot's transmit design on a fixed trajectory.

    Slots decouple, so each runs its own tangent iteration from the given
    feasible plan; the converged relaxed pairs are reduced to rank-one
    beamformers before returning. Raises SlotInfeasibleError listing the
    offending slots when any slot has no feasible design.
    """
    stop = stop or BeamStop()
    N, M = traj.n_slots, cfg.M_antennas
    info = np.zeros((N, M, M), dtype=complex)
    sense = np.zeros((N, M, M), dtype=complex)
    vecs = np.zeros((N, M), dtype=complex)
    iters = np.zeros(N, dtype=int)
    histories = []
    bad = []
    for n in range(N):
        rho = traj.positions[n]
        try:
            B, As, hist = sca_converge_slot(
                rho, cfg, prev=(init_plan.info_outer[n], init_plan.sense_cov[n]), stop=stop
            )
        except SlotInfeasibleError:
            bad.append(n)
            histories.append([])
            continue
        b, B_bar, As_bar = rank_one_reconstruct(B, As, rho, cfg)
        info[n], sense[n], vecs[n] = B_bar, As_bar, b
        iters[n] = len(hist) - 1
        histories.append(hist)
    if bad:
        raise SlotInfeasibleError(f"no feasible design for slots {bad}", slots=bad)
    plan = BeamPlan(info, sense, vecs)
    state = ScaState(iterations=iters, histories=histories)
    state.objective = float(
        np.mean([secrecy_rate(traj.positions[n], plan.slot(n), cfg, clamp=False) for n in range(N)])
    )
    return plan, state
