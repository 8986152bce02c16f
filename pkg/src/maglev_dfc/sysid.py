"""Indirect route: identify ``(A, B)`` from data, refine, and inspect the fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import matrix_from_doc, write_columns_csv
from .linmodel import StateSpaceModel, is_singular
from .plant import POSITION_OUTPUTS
from .sim import Trajectory

DEGENERATE_FLOOR = 1e-12
RANK_RTOL = 1e-12


class DegenerateData(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class DmdcConfig:
    e_min: float = 0.99
    q_override: int | None = None

    def __post_init__(self):
        if not 0 < self.e_min <= 1:
            raise ValueError("e_min must lie in (0, 1]")
        if self.q_override is not None and self.q_override < 1:
            raise ValueError("q_override must be positive")


@dataclass(frozen=True)
class IdentifiedModel:
    """Fitted ``[A_hat, B_hat]``; ``model`` raises if ``A_hat`` is singular."""

    A: np.ndarray
    B: np.ndarray
    fit_residual: float
    singular_values: np.ndarray
    q_used: int

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def model(self) -> StateSpaceModel:
        return StateSpaceModel(self.A, self.B)

    @property
    def is_designable(self) -> bool:
        return not is_singular(self.A)

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "fit_residual": self.fit_residual,
                "singular_values": self.singular_values, "q_used": self.q_used}

    @classmethod
    def from_dict(cls, doc) -> "IdentifiedModel":
        return cls(matrix_from_doc(doc["A"]), matrix_from_doc(doc["B"]), float(doc["fit_residual"]),
                   matrix_from_doc(doc["singular_values"]), int(doc["q_used"]))


def _data(traj: Trajectory):
    Phi = np.hstack([traj.x_meas, traj.u]).T       # (n + m) x N
    Xdot = traj.xdot_meas.T                         # n x N
    return Phi, Xdot


def energy_order(s: np.ndarray, e_min: float) -> int:
    """Smallest q whose leading squared singular values hold ``e_min`` of the total."""
    e = np.cumsum(s**2)
    return int(np.searchsorted(e, e_min * e[-1] * (1 - 1e-12)) + 1)


def dmdc_fit(traj: Trajectory, config: DmdcConfig | None = None) -> IdentifiedModel:
    config = config or DmdcConfig()
    Phi, Xdot = _data(traj)
    n = Xdot.shape[0]
    p, N = Phi.shape
    if N < p:
        raise ValueError(f"need at least {p} samples, got {N}")
    U, s, Vt = np.linalg.svd(Phi, full_matrices=False)
    if s[0] <= DEGENERATE_FLOOR:
        raise DegenerateData("all singular values of the data matrix vanish")
    if config.q_override is not None:
        if config.q_override > min(p, N):
            raise ValueError(f"q_override exceeds min(n + m, N) = {min(p, N)}")
        q = config.q_override
    else:
        q = energy_order(s, config.e_min)
    # never invert numerically zero directions
    q = min(q, int(np.sum(s > RANK_RTOL * s[0])))
    G = Xdot @ Vt[:q].T @ np.diag(1.0 / s[:q]) @ U[:, :q].T
    res = float(np.linalg.norm(G @ Phi - Xdot))
    return IdentifiedModel(G[:, :n].copy(), G[:, n:].copy(), res, s, q)


@dataclass(frozen=True)
class PemResult:
    A: np.ndarray
    B: np.ndarray
    j_initial: float
    j_final: float
    iterations: int
    grad_norm: float

    @property
    def model(self) -> StateSpaceModel:
        return StateSpaceModel(self.A, self.B)

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "j_initial": self.j_initial, "j_final": self.j_final,
                "iterations": self.iterations, "grad_norm": self.grad_norm}


def prediction_cost(G, Phi, Xdot) -> float:
    E = Xdot - G @ Phi
    return float(np.sum(E * E))


def _gauss_newton(G, Phi, Xdot, mask):
    """One Gauss-Newton step; exact minimizer because the cost is quadratic."""
    if mask is None:
        return np.linalg.lstsq(Phi.T, Xdot.T, rcond=None)[0].T
    G_new = np.zeros_like(G)
    for i in range(G.shape[0]):
        free = mask[i]
        if free.any():
            G_new[i, free] = np.linalg.lstsq(Phi[free].T, Xdot[i], rcond=None)[0]
    return G_new


def pem_refine(traj: Trajectory, init: IdentifiedModel, max_iters: int = 10,
               grad_tol: float = 1e-10, mask=None) -> PemResult:
    """Minimize ``J = sum_t |xdot_meas - A x_meas - B u|^2`` from ``init``.

    ``mask`` (same shape as ``[A B]``) marks free entries; the rest are
    structural zeros, and ``init`` is projected onto that structure before
    ``j_initial`` is taken.  Steps that would raise ``J`` are rejected, so
    ``j_final <= j_initial`` always.
    """
    Phi, Xdot = _data(traj)
    G = np.hstack([init.A, init.B])
    if G.shape != (Xdot.shape[0], Phi.shape[0]):
        raise ValueError("initial model does not match the trajectory dimensions")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != G.shape:
            raise ValueError("mask must match the shape of [A B]")
        G = G * mask
    j0 = prediction_cost(G, Phi, Xdot)
    if not np.isfinite(j0):
        raise FloatingPointError("prediction-error cost is not finite")
    scale = max(1.0, 2.0 * float(np.linalg.norm(Xdot @ Phi.T)))
    j, it = j0, 0

    def grad(G):
        g = -2.0 * (Xdot - G @ Phi) @ Phi.T
        return g if mask is None else g * mask

    gn = float(np.linalg.norm(grad(G)))
    while it < max_iters and gn > grad_tol * scale:
        G_new = _gauss_newton(G, Phi, Xdot, mask)
        j_new = prediction_cost(G_new, Phi, Xdot)
        if not np.isfinite(j_new):
            raise FloatingPointError("prediction-error cost is not finite")
        it += 1
        if j_new >= j:
            break
        G, j = G_new, j_new
        gn = float(np.linalg.norm(grad(G)))
    n = init.n
    return PemResult(G[:, :n].copy(), G[:, n:].copy(), j0, j, it, gn)


def maglev_mask() -> np.ndarray:
    """Sparsity of the two-disk plant: kinematic rows and coupled force rows."""
    mask = np.zeros((4, 6), dtype=bool)
    mask[0, 1] = mask[2, 3] = True
    mask[1, [0, 1, 2, 3, 4, 5]] = True
    mask[3, [0, 1, 2, 3, 4, 5]] = True
    return mask


def frequency_response(model: StateSpaceModel, out_index: int, in_index: int, omega,
                       C=None) -> np.ndarray:
    """``|C (j w I - A)^-1 B|`` for one channel; ``inf`` where ``j w`` is a pole."""
    A, B = model.A, model.B
    if C is None:
        C = POSITION_OUTPUTS if model.n == 4 else np.eye(model.n)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    eye = np.eye(model.n)
    out = np.empty(omega.size)
    for k, w in enumerate(omega):
        Mw = 1j * w * eye - A
        if is_singular(Mw, 1e-14):
            out[k] = np.inf
            continue
        out[k] = abs((C[out_index] @ np.linalg.solve(Mw, B[:, in_index])))
    return out


def save_frequency_response(path, omega, magnitude):
    return write_columns_csv(path, ["omega", "magnitude"], [omega, magnitude])
