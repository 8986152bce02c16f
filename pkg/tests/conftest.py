import numpy as np
import pytest

from maglev_dfc.config import preset
from maglev_dfc.design import PRINTED_K1, solve_dfc_are
from maglev_dfc.linmodel import CostWeights
from maglev_dfc.plant import printed_model
from maglev_dfc.sim import Measurement, simulate_dfc_closed_loop


@pytest.fixture(scope="session")
def model():
    return printed_model()


@pytest.fixture(scope="session")
def weights():
    return CostWeights.nominal()


@pytest.fixture(scope="session")
def are(model, weights):
    return solve_dfc_are(model, weights)


@pytest.fixture(scope="session")
def sim_cfg():
    return preset("sim-ivb")


def training_run(cfg, bias=None, K=PRINTED_K1):
    """Excited closed-loop data on the printed model with the configured window."""
    meas = Measurement(bias=None if bias is None else np.asarray(bias, dtype=float))
    return simulate_dfc_closed_loop(printed_model(), K, np.array(cfg.x0_train), cfg.T_s,
                                    cfg.pi.window, cfg.excitation_for(0), meas, cfg.substeps)


@pytest.fixture(scope="session")
def ideal_traj(sim_cfg):
    return training_run(sim_cfg)


def random_stable(rng, n, m, shift=0.5):
    """Random (A, B) with A Hurwitz (eigenvalues shifted left of -shift)."""
    A = rng.standard_normal((n, n))
    A -= (np.linalg.eigvals(A).real.max() + shift + rng.uniform()) * np.eye(n)
    return A, rng.standard_normal((n, m))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    results = getattr(test_acceptance, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
