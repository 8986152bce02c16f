import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg as sla

from maglev_dfc.design import (PRINTED_K1, PRINTED_K_ARE, DesignError, DfcSolution, NotStabilizingError,
                               dfc_are_residual, evaluate_policy_cost, gain_from_value, is_detectable,
                               is_stabilizable, lyapunov_residual, lyapunov_solve, model_based_pi,
                               seed_gain, solve_dfc_are, solve_state_feedback_are)
from maglev_dfc.formats import load_json, save_json
from maglev_dfc.linmodel import CostWeights, StateSpaceModel, closed_loop_matrix, is_hurwitz
from maglev_dfc.sim import Trajectory, simulate_dfc_closed_loop

from conftest import random_stable

X0 = np.array([0.005, 0.0, -0.005, 0.0])


def care_oracle(model, weights):
    """The derivative-feedback ARE posed as a standard CARE in (A^-1, A^-1 B), solved by scipy."""
    Ai = np.linalg.inv(model.A)
    return sla.solve_continuous_are(Ai, Ai @ model.B, weights.Q, weights.R)


def test_lyapunov_examples():
    assert np.allclose(lyapunov_solve(-0.5 * np.eye(3), np.eye(3)), np.eye(3))
    assert np.allclose(lyapunov_solve(np.diag([-1.0, -2.0]), np.eye(2)), np.diag([0.5, 0.25]))
    with pytest.raises(NotStabilizingError):
        lyapunov_solve(np.eye(2), np.eye(2))


def test_lyapunov_random_against_scipy():
    rng = np.random.default_rng(7)
    M, _ = random_stable(rng, 4, 1)
    S = rng.standard_normal((4, 4))
    S = S @ S.T
    P = lyapunov_solve(M, S)
    assert lyapunov_residual(P, M, S) < 1e-9 * (np.linalg.norm(S) + 1)
    assert np.allclose(P, sla.solve_continuous_lyapunov(M.T, -S), rtol=1e-9, atol=1e-12)


def test_lyapunov_large_uses_schur_path():
    rng = np.random.default_rng(1)
    M, _ = random_stable(rng, 10, 1)
    P = lyapunov_solve(M, np.eye(10))
    assert lyapunov_residual(P, M, np.eye(10)) < 1e-8


def test_are_reproduces_published_gain(model, weights, are):
    assert np.abs(are.K - PRINTED_K_ARE).max() < 1e-2
    assert are.residual < 1e-8 * np.linalg.norm(weights.Q)
    assert is_hurwitz(closed_loop_matrix(model, are.K))


def test_are_against_scipy_oracle(model, weights, are):
    P = care_oracle(model, weights)
    assert np.allclose(are.P, P, rtol=1e-8, atol=1e-10)


def test_solution_invariants(model, weights, are):
    assert np.linalg.norm(are.P - are.P.T) < 1e-10 * np.linalg.norm(are.P)
    assert np.linalg.eigvalsh(are.P).min() > 0
    K = -np.linalg.solve(weights.R, model.B.T @ np.linalg.inv(model.A).T @ are.P)
    assert np.linalg.norm(are.K - K) < 1e-10 * np.linalg.norm(K)


def test_scalar_closed_form():
    a, b, q, r = 2.0, 0.5, 3.0, 0.7
    m = StateSpaceModel([[a]], [[b]])
    sol = solve_dfc_are(m, CostWeights([[q]], [[r]]))
    ab, bb = 1 / a, b / a
    P = r * (ab + np.sqrt(ab**2 + bb**2 * q / r)) / bb**2
    assert sol.P[0, 0] == pytest.approx(P, rel=1e-10)


def test_zero_state_weight_on_stable_plant():
    m = StateSpaceModel(np.array([[-1.0, 0.3], [0.0, -2.0]]), np.array([[1.0], [1.0]]))
    sol = solve_dfc_are(m, CostWeights(np.zeros((2, 2)), np.eye(1)))
    assert np.array_equal(sol.K, np.zeros((1, 2)))
    assert np.abs(sol.P).max() == 0.0


def test_zero_state_weight_on_unstable_plant_rejected(model):
    with pytest.raises(DesignError):
        solve_dfc_are(model, CostWeights(np.zeros((4, 4)), np.diag([1.0, 2.0])))


def test_unstabilizable_rejected():
    m = StateSpaceModel(np.diag([1.0, -1.0]), np.array([[0.0], [1.0]]))
    assert not is_stabilizable(m)
    with pytest.raises(DesignError):
        solve_dfc_are(m, CostWeights(np.eye(2), np.eye(1)))


def test_detectability(model):
    assert is_detectable(model, np.eye(4))
    assert not is_detectable(model, np.diag([0.0, 0.0, 1.0, 1.0]))


def test_pi_fixed_point(model, weights, are):
    tr = model_based_pi(model, weights, are.K, eta=1e-9)
    assert np.allclose(tr.steps[0].P, are.P, rtol=1e-9)
    assert np.allclose(tr.steps[0].K_next, are.K, atol=1e-9)
    assert tr.converged and len(tr) <= 2


def test_pi_from_published_initial_gain(model, weights, are):
    tr = model_based_pi(model, weights, PRINTED_K1)
    assert tr.converged and len(tr) <= 10
    assert np.linalg.norm(tr.K - are.K) < 1e-6


def test_pi_rejects_destabilizing_gain(model, weights):
    with pytest.raises(NotStabilizingError):
        model_based_pi(model, weights, np.zeros((2, 4)))


def test_seed_gain_places_poles(model):
    K = seed_gain(model)
    eig = np.sort(np.linalg.eigvals(closed_loop_matrix(model, K)).real)
    assert np.allclose(eig, [-8, -7, -6, -5], atol=1e-6)


def test_solution_roundtrip(are, tmp_path):
    save_json(tmp_path / "sol.json", are.to_dict())
    back = DfcSolution.from_dict(load_json(tmp_path / "sol.json"))
    assert np.array_equal(back.P, are.P) and np.array_equal(back.K, are.K)


def test_state_feedback_baseline(model, weights):
    sol = solve_state_feedback_are(model, weights)
    assert sol.residual < 1e-8
    assert is_hurwitz(model.A - model.B @ sol.K)


def test_policy_cost_at_rest(weights):
    t = np.linspace(0, 1, 11)
    z = np.zeros((11, 4))
    tr = Trajectory(t, z, z, z, np.zeros((11, 2)), z)
    assert evaluate_policy_cost(tr, weights, PRINTED_K1).value == 0.0


def test_policy_cost_matches_value_matrix(model, weights, are):
    tr = simulate_dfc_closed_loop(model, are.K, X0, 1e-3, 10.0, substeps=4)
    pc = evaluate_policy_cost(tr, weights, are.K, are.P)
    assert pc.value == pytest.approx(pc.predicted, rel=0.01)
    assert not pc.truncated


def test_initial_gain_costs_more(model, weights, are):
    v1 = evaluate_policy_cost(simulate_dfc_closed_loop(model, PRINTED_K1, X0, 1e-3, 10.0), weights, PRINTED_K1)
    vs = evaluate_policy_cost(simulate_dfc_closed_loop(model, are.K, X0, 1e-3, 10.0), weights, are.K)
    assert v1.value > vs.value


def test_short_horizon_flagged(model, weights):
    tr = simulate_dfc_closed_loop(model, PRINTED_K1, X0, 1e-3, 0.05)
    with pytest.warns(RuntimeWarning):
        assert evaluate_policy_cost(tr, weights, PRINTED_K1).truncated


def random_problem(seed):
    """Random nonsingular (A, B) with a stabilizing seed gain and random weights."""
    rng = np.random.default_rng(seed)
    n, m = 3, int(rng.integers(1, 3))
    A = rng.standard_normal((n, n)) + rng.uniform(-1, 1) * np.eye(n)
    model = StateSpaceModel(A, rng.standard_normal((n, m)))
    L = rng.standard_normal((n, n))
    Rh = rng.standard_normal((m, m))
    weights = CostWeights(L @ L.T + 0.1 * np.eye(n), Rh @ Rh.T + 0.1 * np.eye(m))
    return model, weights


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_pi_invariants(seed):
    model, weights = random_problem(seed)
    try:
        K1 = seed_gain(model, poles=(-1.0, -2.0, -3.0))
    except ValueError:
        return
    if not is_hurwitz(closed_loop_matrix(model, K1)):
        return
    tr = model_based_pi(model, weights, K1, eta=1e-12, rtol=1e-12, max_iters=100)
    assert tr.converged
    for prev, nxt in zip(tr.steps, tr.steps[1:]):
        gap = np.linalg.eigvalsh(prev.P - nxt.P).min()
        assert gap >= -1e-8 * np.linalg.norm(prev.P, 2)
    for s in tr.steps:
        assert is_hurwitz(closed_loop_matrix(model, s.K))
        assert np.linalg.eigvalsh(s.P).min() > 0
    P_oracle = care_oracle(model, weights)
    assert np.linalg.norm(tr.P - P_oracle) < 1e-8 * max(1.0, np.linalg.norm(P_oracle))
    # substituting the result back into one more step reproduces it
    K = gain_from_value(model, weights, tr.P)
    again = model_based_pi(model, weights, K, max_iters=1)
    assert np.linalg.norm(again.P - tr.P) < 1e-8 * np.linalg.norm(tr.P)
    assert dfc_are_residual(model, weights, tr.P) < 1e-7 * max(1.0, np.linalg.norm(P_oracle))
