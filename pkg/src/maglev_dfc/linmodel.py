"""Linear state-space types and derivative-feedback closed-loop algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative threshold on the smallest singular value, scaled by the 2-norm
SINGULAR_RTOL = 1e-12
PSD_TOL = 1e-10


class SingularLoopError(np.linalg.LinAlgError):
    """Raised when the derivative-feedback algebraic loop (I + BK) cannot be solved."""


def _frozen(a, ndim=2) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


def is_singular(M: np.ndarray, rtol: float = SINGULAR_RTOL) -> bool:
    """Scale-invariant singularity test on the smallest singular value."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return True
    return bool(s[-1] <= rtol * s[0])


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time LTI model ``xdot = A x + B u`` with nonsingular ``A``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A)
        B = _frozen(self.B)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("model matrices must be finite")
        if is_singular(A):
            raise np.linalg.LinAlgError("A is singular; derivative feedback design needs A^-1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)


@dataclass(frozen=True)
class CostWeights:
    """Quadratic weights of the derivative cost ``int xdot'Q xdot + u'R u``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = symmetrize(np.atleast_2d(np.asarray(self.Q, dtype=float)))
        R = symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise ValueError("Q and R must be square")
        if np.linalg.eigvalsh(Q).min() < -PSD_TOL:
            raise ValueError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "R", _frozen(R))

    @classmethod
    def nominal(cls) -> "CostWeights":
        return cls(np.eye(4), np.diag([1.0, 2.0]))


def check_gain(model: StateSpaceModel, K) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (model.m, model.n):
        raise ValueError(f"gain must be {model.m}x{model.n}, got {K.shape}")
    return K


def closed_loop_matrix(model: StateSpaceModel, K) -> np.ndarray:
    """Return ``(I + B K)^-1 A``, the dynamics under ``u = -K xdot``."""
    K = check_gain(model, K)
    M = np.eye(model.n) + model.B @ K
    if is_singular(M):
        raise SingularLoopError("algebraic loop unsolvable: I + B K is singular")
    return np.linalg.solve(M, model.A)


def state_feedback_matrix(model: StateSpaceModel, K) -> np.ndarray:
    """Return ``A - B K``, the dynamics under ``u = -K x``."""
    K = check_gain(model, K)
    return model.A - model.B @ K


def is_hurwitz(M, margin: float = 0.0) -> bool:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("is_hurwitz needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return bool(np.all(np.linalg.eigvals(M).real < -margin))


def hurwitz_margin(M) -> float:
    """Distance of the rightmost eigenvalue from the imaginary axis (positive if stable)."""
    return float(-np.linalg.eigvals(np.asarray(M, dtype=float)).real.max())
