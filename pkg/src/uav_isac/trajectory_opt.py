"""Trajectory optimization for a fixed transmit plan.

With the per-slot covariances frozen, every rate and gain term depends on
the positions only through the slant distances, via the cosine expansions
in metrics. Differentiating those expansions in closed form gives, per slot
and ground node o (offset r = rho - s_o, distance d):

    grad total_power_expansion   = slope_total * r
    grad interference_expansion  = slope_interf * r
    grad array gain              = (slope_total - 2 sigma2/beta0) * r
    grad (log2 tot - log2 int)   = log2(e) (slope_total/tot
                                            - slope_interf/int) * r

where slope_total = 2 sigma2/beta0
    + sum_{i<j} 2 pi |E_ij| sin(ph_ij + pi (j-i) D / d) (j-i) D / d^3.

Every analytic gradient is gated against central finite differences of its
parent field on each call; a mismatch is a formula bug, not data, so it
raises. The per-step subproblem maximizes the tangent model of the mean
secrecy rate subject to endpoint/displacement constraints, linearized
sensing floor / security ceiling rows (with penalized slacks), and a trust
region; a step is accepted only if the true objective improves and the true
constraints hold at the candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .geometry import ScenarioConfig, Trajectory, node_distance
from .metrics import (
    LOG2E,
    BeamPlan,
    FeasibilityReport,
    MatrixPolar,
    check_feasibility,
    expansion_array_gain,
    interference_power_expansion,
    per_slot_secrecy,
    total_power_expansion,
)

NODE_LIST = ("u", "e", "t")


class GradientCheckError(RuntimeError):
    """Analytic gradient disagrees with finite differences."""


@dataclass
class TrustRegion:
    radius: float = 20.0  # m
    shrink: float = 0.5
    min_radius: float = 1e-2


@dataclass
class TrajStop:
    trust: TrustRegion = field(default_factory=TrustRegion)
    eps_obj: float = 1e-4  # bits, smallest improvement worth accepting
    max_steps: int = 100
    feas_tol: float = 1e-6
    slack_penalty: float = 1e4
    solver_tol: float = 1e-8


@dataclass
class TrajectoryGradients:
    """Per-slot closed-form derivative data at one linearization center."""

    center: np.ndarray  # (N, 2) positions the gradients were taken at
    slope_total: dict  # node -> (N,) radial slope of the total-power expansion
    slope_interf: dict  # node -> (N,) radial slope of the interference expansion
    gain_grad: dict  # node -> (N, 2) gradient of the pure array gain
    rate_grad_user: np.ndarray  # (N, 2) gradient of the user log-rate pair
    rate_grad_eve: np.ndarray  # (N, 2)


@dataclass
class LinearizedConstraint:
    """Affine model of gain/d^2 >= bound (sense '>=') or <= bound ('<=')."""

    slot: int
    node: str
    sense: str
    bound: float
    center: np.ndarray
    value: float  # gain ratio at the center
    grad: np.ndarray  # (2,)

    def evaluate(self, rho) -> float:
        return self.value + float(self.grad @ (np.asarray(rho) - self.center))


@dataclass
class TrajTrace:
    accepted_objectives: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    n_accepted: int = 0
    n_rejected: int = 0
    n_recentered: int = 0
    status: str = ""
    feasibility: FeasibilityReport | None = None
    infeasible_slots: list = field(default_factory=list)


def _slot_polars(plan: BeamPlan, n: int):
    E = plan.info_outer[n] + plan.sense_cov[n]
    return MatrixPolar.from_matrix(E), MatrixPolar.from_matrix(plan.sense_cov[n])


def _radial_slope(polar: MatrixPolar, d: float, cfg: ScenarioConfig) -> float:
    """d/d(rho) of the cosine expansion along the offset direction, divided
    by the offset: 2 s2/b0 + sum 2 pi |X_ij| sin(ph + pi(j-i)D/d) (j-i)D/d^3."""
    M = polar.diag.size
    D = cfg.altitude_D
    acc = 2.0 * cfg.noise_over_gain
    ratio = math.pi * D / d
    for i in range(M):
        for j in range(i + 1, M):
            m = polar.mag[i, j]
            if m != 0.0:
                acc += (
                    2.0
                    * math.pi
                    * m
                    * math.sin(polar.phase[i, j] + (j - i) * ratio)
                    * (j - i)
                    * D
                    / d**3
                )
    return acc


def _fd_pair(fun, rho, h):
    """Central-difference gradient of a scalar field of the 2D position."""
    rho = np.asarray(rho, dtype=float)
    grad = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        grad[k] = (fun(rho + e) - fun(rho - e)) / (2 * h)
    return grad


def _rel_vec_err(a, b, floor=1e-4):
    # the floor treats gradients below ~1e-4 (per meter) as numerically
    # stationary: the cosine expansions cancel to ~1e-12 relative, which
    # caps what central differences can certify for near-zero gradients
    return float(np.linalg.norm(a - b)) / max(np.linalg.norm(a), np.linalg.norm(b), floor)


def trajectory_gradients(
    traj: Trajectory,
    plan: BeamPlan,
    cfg: ScenarioConfig,
    fd_check: bool = True,
    fd_step: float = 1e-3,
    fd_tol: float = 1e-3,
) -> TrajectoryGradients:
    """Closed-form position gradients of all rate/gain fields, verified
    against central finite differences (raises GradientCheckError on any
    mismatch beyond fd_tol relative)."""
    N = traj.n_slots
    slope_total = {o: np.zeros(N) for o in NODE_LIST}
    slope_interf = {o: np.zeros(N) for o in NODE_LIST}
    gain_grad = {o: np.zeros((N, 2)) for o in NODE_LIST}
    rg_user = np.zeros((N, 2))
    rg_eve = np.zeros((N, 2))

    for n in range(N):
        rho = traj.positions[n]
        pol_E, pol_As = _slot_polars(plan, n)
        for o in NODE_LIST:
            s_o = cfg.node(o)
            offset = rho - s_o
            d = node_distance(cfg, rho, o)
            it = _radial_slope(pol_E, d, cfg)
            vs = _radial_slope(pol_As, d, cfg)
            slope_total[o][n] = it
            slope_interf[o][n] = vs
            gain_grad[o][n] = (it - 2.0 * cfg.noise_over_gain) * offset
            if o != "t":
                tot = total_power_expansion(pol_E, rho, s_o, cfg)
                intf = interference_power_expansion(pol_As, rho, s_o, cfg)
                grad = LOG2E * (it / tot - vs / intf) * offset
                if o == "u":
                    rg_user[n] = grad
                else:
                    rg_eve[n] = grad
            if fd_check:
                _check_slot_node(
                    pol_E, pol_As, rho, s_o, cfg, it, vs,
                    gain_grad[o][n],
                    rg_user[n] if o == "u" else (rg_eve[n] if o == "e" else None),
                    fd_step, fd_tol,
                )

    return TrajectoryGradients(
        center=traj.positions.copy(),
        slope_total=slope_total,
        slope_interf=slope_interf,
        gain_grad=gain_grad,
        rate_grad_user=rg_user,
        rate_grad_eve=rg_eve,
    )


def _gate(label, analytic, fun, rho, h, tol, noise=1e-6):
    # a transcription bug is O(1) wrong at every step size, while central
    # difference truncation shrinks ~h^2; retry finer before raising (the
    # near-nulled interference log is sharply curved at optimizer iterates).
    # An absolute allowance covers the cancellation noise floor of the
    # expansions, which dominates when the true gradient is ~0.
    for step in (h, h / 10.0, h / 100.0):
        fd = _fd_pair(fun, rho, step)
        if _rel_vec_err(analytic, fd) <= tol:
            return
        if float(np.linalg.norm(analytic - fd)) <= noise:
            return
    raise GradientCheckError(f"{label} fails the finite-difference gate")


def _check_slot_node(pol_E, pol_As, rho, s_o, cfg, it, vs, tau, rate_grad, h, tol):
    offset = np.asarray(rho, dtype=float) - np.asarray(s_o, dtype=float)

    _gate("total-power slope", it * offset,
          lambda r: total_power_expansion(pol_E, r, s_o, cfg), rho, h, tol)
    _gate("interference slope", vs * offset,
          lambda r: interference_power_expansion(pol_As, r, s_o, cfg), rho, h, tol)
    _gate("array-gain gradient", tau,
          lambda r: expansion_array_gain(pol_E, r, s_o, cfg), rho, h, tol)
    if rate_grad is not None:
        _gate(
            "log-rate gradient",
            rate_grad,
            lambda r: math.log2(total_power_expansion(pol_E, r, s_o, cfg))
            - math.log2(interference_power_expansion(pol_As, r, s_o, cfg)),
            rho,
            h,
            tol,
        )


def surrogate_secrecy(
    traj: Trajectory,
    traj_l: Trajectory,
    plan: BeamPlan,
    grads: TrajectoryGradients,
    cfg: ScenarioConfig,
) -> float:
    """Tangent model of the mean unclamped secrecy rate around traj_l:
    exact value there plus the per-slot linear correction."""
    N = traj.n_slots
    total = 0.0
    base = per_slot_secrecy(traj_l, plan, cfg, clamp=False)
    for n in range(N):
        delta = traj.positions[n] - traj_l.positions[n]
        total += base[n] + float((grads.rate_grad_user[n] - grads.rate_grad_eve[n]) @ delta)
    return total / N


def linearized_sensing_constraints(
    traj_l: Trajectory,
    plan: BeamPlan,
    grads: TrajectoryGradients,
    cfg: ScenarioConfig,
) -> list:
    """Affine rows for the gain-ratio constraints at every slot: the sensing
    floor toward the target and (when enabled) the ceiling at the
    eavesdropper. Gradient of gain/d^2 is (tau d^2 - 2 gain r) / d^4."""
    cons = []
    # a zero floor is vacuous (gain is nonnegative), and its linear model
    # could still dip below zero, so emit no row for it
    nodes = [("t", ">=", cfg.gamma_t)] if cfg.gamma_t > 0 else []
    if cfg.security_enabled:
        nodes.append(("e", "<=", cfg.gamma_e))
    for n in range(traj_l.n_slots):
        rho = traj_l.positions[n]
        pol_E, _ = _slot_polars(plan, n)
        for node, sense, bound in nodes:
            s_o = cfg.node(node)
            d = node_distance(cfg, rho, node)
            gain = expansion_array_gain(pol_E, rho, s_o, cfg)
            tau = grads.gain_grad[node][n]
            grad = (tau * d * d - 2.0 * gain * (rho - s_o)) / d**4
            cons.append(
                LinearizedConstraint(
                    slot=n,
                    node=node,
                    sense=sense,
                    bound=bound,
                    center=rho.copy(),
                    value=gain / (d * d),
                    grad=grad,
                )
            )
    return cons


def solve_trajectory_step(
    traj_l: Trajectory,
    plan: BeamPlan,
    trust_radius: float,
    cfg: ScenarioConfig,
    grads: TrajectoryGradients | None = None,
    slack_penalty: float = 1e4,
    solver_tol: float = 1e-8,
):
    """Solve the per-step convex model jointly over all slots.

    Returns (candidate Trajectory, info dict with max_slack and status).
    Slack variables keep the subproblem feasible when the linearized rows
    conflict with the trust region; a positive slack disqualifies the
    candidate from acceptance.
    """
    if grads is None:
        grads = trajectory_gradients(traj_l, plan, cfg)
    cons = linearized_sensing_constraints(traj_l, plan, grads, cfg)
    N = traj_l.n_slots

    prog = conic.ConicProgram()
    prog.add_vec_block("path", 2 * N)
    if cons:
        prog.add_vec_block("slack", len(cons))

    obj = np.zeros(2 * N)
    for n in range(N):
        obj[2 * n : 2 * n + 2] = (grads.rate_grad_user[n] - grads.rate_grad_eve[n]) / N
    terms = {"path": obj}
    if cons:
        terms["slack"] = -slack_penalty * np.ones(len(cons))
    prog.maximize(conic.expr(terms))

    def unit(idx):
        v = np.zeros(2 * N)
        v[idx] = 1.0
        return v

    # endpoints pinned
    for k in range(2):
        prog.add_eq(conic.expr({"path": unit(k)}, offset=-cfg.rho_init[k]))
        prog.add_eq(conic.expr({"path": unit(2 * (N - 1) + k)}, offset=-cfg.rho_final[k]))
    # per-slot displacement cones
    for n in range(N - 1):
        prog.add_soc(
            conic.expr({}, offset=cfg.V_max),
            [
                conic.expr({"path": unit(2 * (n + 1)) - unit(2 * n)}),
                conic.expr({"path": unit(2 * (n + 1) + 1) - unit(2 * n + 1)}),
            ],
        )
    # trust region around the center
    for n in range(N):
        prog.add_soc(
            conic.expr({}, offset=trust_radius),
            [
                conic.expr({"path": unit(2 * n)}, offset=-traj_l.positions[n, 0]),
                conic.expr({"path": unit(2 * n + 1)}, offset=-traj_l.positions[n, 1]),
            ],
        )
    # linearized gain rows, one slack each, normalized by the bound so the
    # slack price is scale-free (the raw thresholds sit near 1e-6)
    for k, c in enumerate(cons):
        denom = c.bound if c.bound > 0 else 1.0
        row = np.zeros(2 * N)
        row[2 * c.slot : 2 * c.slot + 2] = c.grad / denom
        off = (c.value - float(c.grad @ c.center) - c.bound) / denom
        svec = np.zeros(len(cons))
        svec[k] = 1.0
        if c.sense == ">=":
            prog.add_ge(conic.expr({"path": row, "slack": svec}, offset=off))
        else:
            prog.add_le(conic.expr({"path": row, "slack": -svec}, offset=off))
    if cons:
        for k in range(len(cons)):
            e = np.zeros(len(cons))
            e[k] = 1.0
            prog.add_ge(conic.expr({"slack": e}))

    sol = conic.solve(prog, tol=solver_tol)
    info = {"status": sol.status, "max_slack": 0.0}
    if sol.status not in ("optimal", "max_iter"):
        return traj_l, info
    if cons:
        info["max_slack"] = float(np.max(sol.blocks["slack"]))
    positions = sol.blocks["path"].reshape(N, 2)
    # clean roundoff on the pinned endpoints
    positions[0] = cfg.rho_init
    positions[-1] = cfg.rho_final
    return Trajectory(positions), info


def _violation(report: FeasibilityReport) -> float:
    return max(report.sensing_residual, report.security_residual, 0.0)


def run_trajectory(
    plan: BeamPlan,
    traj_init: Trajectory,
    cfg: ScenarioConfig,
    stop: TrajStop | None = None,
):
    """Trust-region ascent on the true mean secrecy rate for a fixed plan.

    A candidate is accepted only when its slacks are zero, the true
    constraints hold within stop.feas_tol, the unclamped objective improves
    by at least stop.eps_obj, and the clamped objective does not regress.
    Rejections shrink the radius, so the loop exits once no radius yields a
    worthwhile step (min_radius). With an infeasible start, slack solutions
    that reduce the worst true violation re-center the linearization so
    feasibility can be restored. Worst case returns traj_init.
    """
    stop = stop or TrajStop()
    # accepted iterates carry solver-level (~1e-8) slack on the flight
    # cones, so validate at the shared feasibility tolerance
    traj_init.validate(cfg, tol=stop.feas_tol)
    trace = TrajTrace()

    def true_state(t):
        unc = float(np.mean(per_slot_secrecy(t, plan, cfg, clamp=False)))
        cl = float(np.mean(per_slot_secrecy(t, plan, cfg, clamp=True)))
        rep = check_feasibility(t, plan, cfg, tol=stop.feas_tol)
        return unc, cl, rep

    traj_l = traj_init
    unc_l, cl_l, rep_l = true_state(traj_l)
    feasible = rep_l.ok
    if feasible:
        trace.accepted_objectives.append(unc_l)
    radius = stop.trust.radius
    trace.radii.append(radius)
    grads = None
    trace.status = "max_steps"

    for _ in range(stop.max_steps):
        if radius < stop.trust.min_radius:
            trace.status = "min_radius"
            break
        if grads is None:
            grads = trajectory_gradients(traj_l, plan, cfg)
        cand, info = solve_trajectory_step(
            traj_l, plan, radius, cfg, grads=grads,
            slack_penalty=stop.slack_penalty, solver_tol=stop.solver_tol,
        )
        if info["status"] not in ("optimal", "max_iter"):
            radius *= stop.trust.shrink
            trace.radii.append(radius)
            trace.n_rejected += 1
            continue
        unc_c, cl_c, rep_c = true_state(cand)
        clean = info["max_slack"] <= 1e-7
        if feasible:
            if (
                clean
                and rep_c.ok
                and unc_c > unc_l + stop.eps_obj
                and cl_c >= cl_l - 1e-9
            ):
                traj_l, unc_l, cl_l = cand, unc_c, cl_c
                grads = None
                trace.n_accepted += 1
                trace.accepted_objectives.append(unc_l)
                # restart the radius schedule after progress: every
                # inter-accept window then sweeps the full nonincreasing
                # cascade, which also makes a converged run restart-stable
                radius = stop.trust.radius
                trace.radii.append(radius)
            else:
                radius *= stop.trust.shrink
                trace.radii.append(radius)
                trace.n_rejected += 1
        else:
            if rep_c.ok:
                # feasibility restored: restart the monotone phase here
                traj_l, unc_l, cl_l, feasible = cand, unc_c, cl_c, True
                grads = None
                trace.n_accepted += 1
                trace.accepted_objectives.append(unc_l)
            elif _violation(rep_c) < _violation(rep_l) - 1e-12:
                traj_l, unc_l, cl_l, rep_l = cand, unc_c, cl_c, rep_c
                grads = None
                trace.n_recentered += 1
                radius *= stop.trust.shrink
                trace.radii.append(radius)
            else:
                radius *= stop.trust.shrink
                trace.radii.append(radius)
                trace.n_rejected += 1

    if not feasible:
        trace.status = "infeasible_constraints"
        traj_l = traj_init
    final_rep = check_feasibility(traj_l, plan, cfg, tol=stop.feas_tol)
    trace.feasibility = final_rep
    trace.infeasible_slots = final_rep.failing_slots()
    return traj_l, trace
