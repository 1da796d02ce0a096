import math

import numpy as np
import pytest

from uav_isac.conic import ConicProgram, ProgramError, dump, expr, hermitian_embed, hermitian_extract, solve

RNG = np.random.default_rng(42)


def random_hermitian(M, rng=RNG):
    X = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    return 0.5 * (X + X.conj().T)


def test_embed_identity():
    T = hermitian_embed(np.eye(2, dtype=complex))
    assert np.allclose(T, np.eye(4))
    assert np.trace(T) == 4.0


def test_embed_known_eigs():
    H = np.array([[1.0, 1j], [-1j, 1.0]])
    assert np.allclose(np.linalg.eigvalsh(H), [0.0, 2.0], atol=1e-12)
    T = hermitian_embed(H)
    assert np.allclose(np.linalg.eigvalsh(T), [0.0, 0.0, 2.0, 2.0], atol=1e-12)


def test_embed_random_properties():
    for _ in range(100):
        M = int(RNG.integers(1, 9))
        H = random_hermitian(M)
        T = hermitian_embed(H)
        assert np.allclose(T, T.T, atol=1e-14)
        assert np.trace(T) == pytest.approx(2 * np.trace(H).real, rel=1e-12)
        assert np.linalg.eigvalsh(T)[0] == pytest.approx(
            np.linalg.eigvalsh(H)[0], rel=1e-10, abs=1e-10
        )
        back = hermitian_extract(T)
        assert np.abs(back - H).max() < 1e-12
        # inner products double under the embedding
        A = random_hermitian(M)
        assert np.trace(hermitian_embed(A) @ T).real == pytest.approx(
            2 * np.trace(A @ H).real, rel=1e-10, abs=1e-12
        )


def test_embed_rejects_non_hermitian():
    with pytest.raises(ProgramError):
        hermitian_embed(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_solve_trace_max():
    p = ConicProgram()
    p.add_psd_block("B", 2)
    p.maximize(expr({"B": np.eye(2)}))
    p.add_le(expr({"B": np.eye(2)}, offset=-1.0))
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-7)
    assert p.has_power_cover()


def test_solve_projection():
    c = np.array([3.0, 4.0])
    r = 2.0
    p = ConicProgram()
    p.add_vec_block("x", 2)
    p.add_vec_block("t", 1)
    p.minimize(expr({"t": [1.0]}))
    p.add_soc(
        expr({"t": [1.0]}),
        [expr({"x": [1.0, 0.0]}, offset=-c[0]), expr({"x": [0.0, 1.0]}, offset=-c[1])],
    )
    p.add_soc(expr({}, offset=r), [expr({"x": [1.0, 0.0]}), expr({"x": [0.0, 1.0]})])
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(np.linalg.norm(c) - r, abs=1e-6)
    assert np.allclose(sol.blocks["x"], c / np.linalg.norm(c) * r, atol=1e-5)


def test_solve_log_hypograph():
    # max log2(x+1) - tr(B) with x = tr(B): optimum tr(B) = 1/ln2 - 1
    p = ConicProgram()
    p.add_psd_block("B", 2)
    p.maximize(
        expr({"B": -np.eye(2)}),
        log_terms=[(1 / math.log(2), expr({"B": np.eye(2)}, offset=1.0))],
    )
    p.add_le(expr({"B": np.eye(2)}, offset=-5.0))
    sol = solve(p)
    best = 1 / math.log(2) - 1
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(math.log2(1 + best) - best, abs=1e-8)


def test_solve_reports_infeasible_and_unbounded():
    p = ConicProgram()
    p.add_psd_block("B", 2)
    p.maximize(expr({"B": np.eye(2)}))
    p.add_le(expr({"B": np.eye(2)}, offset=1.0))  # tr(B) <= -1: impossible
    assert solve(p).status == "infeasible"

    p = ConicProgram()
    p.add_psd_block("B", 2)
    p.maximize(expr({"B": np.eye(2)}))  # no power budget
    assert solve(p).status == "unbounded"
    assert not p.has_power_cover()


def test_solution_self_consistency():
    # re-evaluating the objective from returned blocks matches the report,
    # and complementary slackness is tiny
    for _ in range(20):
        M = 3
        C = random_hermitian(M)
        p = ConicProgram()
        p.add_psd_block("X", M)
        p.maximize(expr({"X": C}))
        p.add_le(expr({"X": np.eye(M)}, offset=-2.0))
        sol = solve(p, tol=1e-8)
        assert sol.status == "optimal"
        again = np.trace(C @ sol.blocks["X"]).real
        assert again == pytest.approx(sol.objective, rel=1e-9, abs=1e-9)
        assert sol.comp_slackness <= 10 * 1e-8
        assert sol.kkt_gap <= 1e-8
        # analytic optimum: 2 * max eigenvalue (put all trace on the top eigvec)
        lam = np.linalg.eigvalsh(C)[-1]
        assert sol.objective == pytest.approx(2 * max(lam, 0.0), rel=1e-6, abs=1e-7)


def test_psd_block_solution_is_psd_hermitian():
    C = random_hermitian(4)
    p = ConicProgram()
    p.add_psd_block("X", 4)
    p.maximize(expr({"X": C}))
    p.add_le(expr({"X": np.eye(4)}, offset=-1.0))
    sol = solve(p)
    X = sol.blocks["X"]
    assert np.allclose(X, X.conj().T)
    assert np.linalg.eigvalsh(X)[0] >= -1e-8


def test_secrecy_slot_against_grid_search():
    """A relaxed single-slot secrecy program with an exact eavesdropper null
    (security threshold zero) must match the best rank-one strategy found by
    brute force over the nulled subspace, M = 2."""
    from uav_isac.geometry import ScenarioConfig, node_channel, node_steering
    from uav_isac.beamforming import sca_converge_slot

    cfg = ScenarioConfig(M_antennas=2, gamma_t=0.0, gamma_e=0.0)
    rho = np.array([290.0, 470.0])
    g_u = node_channel(cfg, rho, "u")
    phi_e = node_steering(cfg, rho, "e")

    B, As, _ = sca_converge_slot(rho, cfg)

    # oracle: the zero ceiling forces (B + As) Phi_e = 0, so all power lives
    # on the unit vector orthogonal to Phi_e; AN only hurts the user there.
    v = np.array([phi_e[1].conj(), -phi_e[0].conj()])
    v /= np.linalg.norm(v)
    gains = abs(np.vdot(v, g_u)) ** 2
    best = 0.0
    for alpha in np.linspace(0.0, 1.0, 2001):
        num = alpha * cfg.P_max * gains
        den = (1 - alpha) * cfg.P_max * gains + cfg.sigma2
        best = max(best, math.log2(1 + num / den))

    from uav_isac.metrics import BeamSlot, array_gain, secrecy_rate

    achieved = secrecy_rate(rho, BeamSlot(B, As), cfg, clamp=False)
    assert achieved == pytest.approx(best, abs=2e-3)
    # the zero security ceiling is honored
    assert array_gain(B + As, rho, cfg.s_eve, cfg) <= 1e-7


def test_dump_is_deterministic():
    p = ConicProgram()
    p.add_psd_block("B", 2)
    p.add_vec_block("x", 2)
    p.maximize(expr({"B": np.eye(2), "x": [1.0, 2.0]}, offset=0.5))
    p.add_le(expr({"B": np.eye(2)}, offset=-1.0))
    p.add_soc(expr({}, offset=1.0), [expr({"x": [1.0, 0.0]})])
    assert dump(p) == dump(p)
    assert "psd B 2" in dump(p)


def test_program_validation_errors():
    p = ConicProgram()
    p.add_psd_block("B", 2)
    with pytest.raises(ProgramError, match="duplicate"):
        p.add_vec_block("B", 3)
    p.maximize(expr({"C": np.eye(2)}))
    with pytest.raises(ProgramError, match="unknown block"):
        solve(p)
    p2 = ConicProgram()
    p2.add_psd_block("B", 2)
    p2.maximize(expr({"B": np.array([[0.0, 1.0], [0.0, 0.0]])}))
    with pytest.raises(ProgramError, match="not Hermitian"):
        solve(p2)
