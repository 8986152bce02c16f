"""Model-based optimal derivative-feedback design.

The derivative-feedback Riccati equation

    P A^-1 + A^-T P - P A^-1 B R^-1 B^T A^-T P + Q = 0,   K = -R^-1 B^T A^-T P

is a standard continuous ARE in ``(A^-1, A^-1 B)``.  It is solved here by policy
iteration: each step solves a Lyapunov equation in ``A^-1 (I + B K_i)``, the
inverse of the closed-loop matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.integrate import trapezoid
from scipy.signal import place_poles

from .formats import matrix_from_doc
from .linmodel import CostWeights, StateSpaceModel, check_gain, closed_loop_matrix, is_hurwitz, symmetrize

KRON_MAX_N = 8

# poles of (I + B K)^-1 A for the default seed gain
DEFAULT_SEED_POLES = (-5.0, -6.0, -7.0, -8.0)

# initial gain from pole placement on the nominal model, as published
PRINTED_K1 = np.array([
    [-9.7596, -0.6122, -2.8462, -0.0197],
    [0.5168, 0.0038, -1.6957, -0.1015],
])
# optimal gain for Q = I, R = diag(1, 2), as published
PRINTED_K_ARE = np.array([
    [-13.1301, -1.1229, 0.0004, 0.0000],
    [-0.0001, -0.0000, -4.2980, -0.7191],
])


class NotStabilizingError(ValueError):
    pass


class DesignError(ArithmeticError):
    pass


def lyapunov_solve(M, S) -> np.ndarray:
    """Solve ``P M + M^T P + S = 0`` for Hurwitz ``M``."""
    M = np.asarray(M, dtype=float)
    S = symmetrize(np.asarray(S, dtype=float))
    if not is_hurwitz(M):
        raise NotStabilizingError("Lyapunov equation needs a Hurwitz matrix")
    n = M.shape[0]
    if n <= KRON_MAX_N:
        eye = np.eye(n)
        L = np.kron(M.T, eye) + np.kron(eye, M.T)
        vecP = np.linalg.solve(L, -S.reshape(-1, order="F"))
        P = vecP.reshape(n, n, order="F")
    else:
        P = sla.solve_continuous_lyapunov(M.T, -S)
    return symmetrize(P)


def lyapunov_residual(P, M, S) -> float:
    return float(np.linalg.norm(P @ M + M.T @ P + S))


def dfc_are_residual(model: StateSpaceModel, weights: CostWeights, P) -> float:
    Ai = model.A_inv
    G = Ai @ model.B
    res = P @ Ai + Ai.T @ P - P @ G @ np.linalg.solve(weights.R, G.T @ P) + weights.Q
    return float(np.linalg.norm(res))


def gain_from_value(model: StateSpaceModel, weights: CostWeights, P) -> np.ndarray:
    """``K = -R^-1 B^T A^-T P``."""
    return -np.linalg.solve(weights.R, model.B.T @ model.A_inv.T @ P)


@dataclass(frozen=True)
class DfcSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"P": self.P, "K": self.K, "residual": self.residual, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, doc) -> "DfcSolution":
        return cls(matrix_from_doc(doc["P"]), matrix_from_doc(doc["K"]),
                   float(doc["residual"]), int(doc.get("iterations", 0)))


@dataclass(frozen=True)
class PiStep:
    P: np.ndarray
    K: np.ndarray           # gain that was evaluated (K_i)
    K_next: np.ndarray      # improved gain (K_{i+1})
    lyap_residual: float
    dP: float               # ||P_i - P_{i-1}||_F (inf for the first step)


@dataclass
class PiTrace:
    steps: list[PiStep] = field(default_factory=list)
    converged: bool = False

    @property
    def P(self) -> np.ndarray:
        return self.steps[-1].P

    @property
    def K(self) -> np.ndarray:
        return self.steps[-1].K_next

    def __len__(self):
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "steps": [{"i": i + 1, "P": s.P, "K": s.K, "K_next": s.K_next,
                       "lyap_residual": s.lyap_residual, "dP": s.dP}
                      for i, s in enumerate(self.steps)],
        }


def model_based_pi(model: StateSpaceModel, weights: CostWeights, K1, eta: float = 1e-6,
                   max_iters: int = 50, rtol: float = 0.0,
                   raise_on_nonconvergence: bool = False) -> PiTrace:
    """Policy iteration from a stabilizing derivative-feedback gain ``K1``.

    Stops once ``||P_i - P_{i-1}||_F < max(eta, rtol ||P_i||_F)``.
    """
    K = check_gain(model, K1)
    if not is_hurwitz(closed_loop_matrix(model, K)):
        raise NotStabilizingError("initial gain does not stabilize (I + B K1)^-1 A")
    Ai = model.A_inv
    Q, R = weights.Q, weights.R
    trace = PiTrace()
    P_prev = None
    for _ in range(max_iters):
        M = Ai @ (np.eye(model.n) + model.B @ K)
        S = Q + K.T @ R @ K
        try:
            P = lyapunov_solve(M, S)
        except NotStabilizingError as exc:
            raise DesignError(f"closed loop lost stability at step {len(trace) + 1}") from exc
        K_next = gain_from_value(model, weights, P)
        dP = np.inf if P_prev is None else float(np.linalg.norm(P - P_prev))
        trace.steps.append(PiStep(P, K, K_next, lyapunov_residual(P, M, S), dP))
        if dP < max(eta, rtol * float(np.linalg.norm(P))):
            trace.converged = True
            break
        P_prev, K = P, K_next
    if raise_on_nonconvergence and not trace.converged:
        raise DesignError(f"policy iteration did not converge in {max_iters} steps")
    return trace


def _pbh_rank_ok(A, C, right: bool) -> bool:
    """PBH test over the closed right half-plane eigenvalues (stabilizability / detectability)."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        if right:
            Mx = np.hstack([A - lam * np.eye(n), C])
        else:
            Mx = np.vstack([A - lam * np.eye(n), C])
        s = np.linalg.svd(Mx, compute_uv=False)
        if s[n - 1] <= 1e-10 * max(s[0], 1.0):
            return False
    return True


def is_stabilizable(model: StateSpaceModel) -> bool:
    return _pbh_rank_ok(model.A, model.B, right=True)


def is_detectable(model: StateSpaceModel, Q) -> bool:
    w, V = np.linalg.eigh(symmetrize(np.asarray(Q, dtype=float)))
    Qh = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
    return _pbh_rank_ok(model.A, Qh, right=False)


def seed_gain(model: StateSpaceModel, poles=DEFAULT_SEED_POLES) -> np.ndarray:
    """A stabilizing derivative-feedback gain.

    Zero if the plant is already stable; otherwise pole placement of
    ``A^-1 + A^-1 B K`` at the reciprocals of ``poles`` so that
    ``(I + B K)^-1 A`` ends up with eigenvalues ``poles``.
    """
    if is_hurwitz(model.A):
        return np.zeros((model.m, model.n))
    poles = np.asarray(poles, dtype=float)
    if poles.size != model.n:
        poles = -np.arange(5.0, 5.0 + model.n)
    Ai = model.A_inv
    res = place_poles(Ai, Ai @ model.B, 1.0 / poles)
    return -res.gain_matrix


def solve_dfc_are(model: StateSpaceModel, weights: CostWeights, K1=None,
                  tol: float = 1e-11, max_iters: int = 100) -> DfcSolution:
    if weights.Q.shape != (model.n, model.n) or weights.R.shape != (model.m, model.m):
        raise ValueError("weight dimensions do not match the model")
    if not is_stabilizable(model):
        raise DesignError("(A, B) is not stabilizable")
    if not is_detectable(model, weights.Q):
        raise DesignError("(Q^1/2, A) is not detectable")
    K1 = seed_gain(model) if K1 is None else K1
    scale = max(1.0, float(np.linalg.norm(weights.Q)))
    trace = model_based_pi(model, weights, K1, eta=tol, rtol=tol, max_iters=max_iters)
    if not trace.converged:
        raise DesignError(f"Riccati iteration did not converge in {max_iters} steps")
    P = trace.P
    K = gain_from_value(model, weights, P)
    res = dfc_are_residual(model, weights, P)
    if res > 1e-8 * scale:
        raise DesignError(f"Riccati residual {res:.3e} too large")
    return DfcSolution(P, K, res, len(trace))


def solve_state_feedback_are(model: StateSpaceModel, weights: CostWeights) -> DfcSolution:
    """Standard LQR ``u = -K x`` on the same weights (baseline controller)."""
    P = sla.solve_continuous_are(model.A, model.B, weights.Q, weights.R)
    K = np.linalg.solve(weights.R, model.B.T @ P)
    res = model.A.T @ P + P @ model.A - P @ model.B @ K + weights.Q
    return DfcSolution(P, K, float(np.linalg.norm(res)))


@dataclass(frozen=True)
class PolicyCost:
    value: float
    predicted: float | None = None
    truncated: bool = False


def evaluate_policy_cost(traj, weights: CostWeights, K, P=None, tail_tol: float = 1e-6) -> PolicyCost:
    """Trapezoidal ``int xdot' (Q + K' R K) xdot dt`` over the recorded horizon.

    ``truncated`` flags a horizon whose final integrand is still above
    ``tail_tol`` times its peak.  With ``P`` given, also returns ``x0' P x0``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    W = weights.Q + K.T @ weights.R @ K
    xd = traj.xdot_meas
    integrand = np.einsum("ki,ij,kj->k", xd, W, xd)
    value = float(trapezoid(integrand, traj.t))
    peak = float(integrand.max()) if integrand.size else 0.0
    truncated = bool(peak > 0 and integrand[-1] > tail_tol * peak)
    if truncated:
        warnings.warn("cost horizon too short: integrand has not decayed", RuntimeWarning)
    predicted = None
    if P is not None:
        x0 = traj.x[0]
        predicted = float(x0 @ np.asarray(P) @ x0)
    return PolicyCost(value, predicted, truncated)
