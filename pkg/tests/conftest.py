import numpy as np
import pytest

from uav_isac.geometry import ScenarioConfig


@pytest.fixture(scope="session")
def tiny_cfg():
    """Short 8-slot, 2-antenna scenario for fast end-to-end tests."""
    return ScenarioConfig(
        rho_init=[300.0, 460.0],
        rho_final=[300.0, 540.0],
        T_total=4.0,
        slot_len_ts=0.5,
        N_slots=8,
        M_antennas=2,
    )


def random_psd(rng, M, scale=1.0):
    X = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    A = X @ X.conj().T
    return scale * A / max(np.trace(A).real, 1e-12)
