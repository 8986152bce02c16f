"""Model-free derivative-feedback policy iteration from trajectory data.

Along any trajectory of ``xdot = A x + B u`` and for the value matrix ``P_i`` of
gain ``K_i``,

    d/dt (x' P_i x) = -xdot' (Q + K_i' R K_i) xdot + 2 (u + K_i xdot)' R K_{i+1} xdot,

so integrating over intervals of length ``T`` gives rows of a linear regression
in ``(svec P_i, eps, vec K_{i+1})``.  A constant measurement bias ``x_b`` is
absorbed by ``eps = -2 P_i x_b``, paired with the endpoint differences of the
measured state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import newton_cotes

from .design import evaluate_policy_cost
from .formats import save_json, write_columns_csv
from .linmodel import CostWeights, StateSpaceModel, closed_loop_matrix, hurwitz_margin
from .sim import (ExcitationSpec, Measurement, SimulationDiverged, Trajectory, prefilter,
                  simulate_dfc_closed_loop)

QUADRATURE_RULES = ("trapezoid", "simpson", "newton_cotes")
# closed Newton-Cotes weights turn strongly oscillatory beyond this many steps
NEWTON_COTES_MAX_STEPS = 14


class InsufficientExcitation(np.linalg.LinAlgError):
    """The regression matrix is rank deficient; ``singular_values`` holds its (scaled) spectrum."""

    def __init__(self, singular_values, rtol: float):
        s = np.asarray(singular_values)
        ratio = s[-1] / s[0] if s.size and s[0] > 0 else 0.0
        super().__init__(f"insufficient excitation: sigma_min/sigma_max = {ratio:.3e} <= {rtol:.1e}")
        self.singular_values = s


class PiNotConverged(ArithmeticError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


class EpochAborted(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


def n_unknowns(n: int, m: int) -> int:
    return n * (n + 1) // 2 + n + m * n


@dataclass(frozen=True)
class PiConfig:
    T: float = 0.01             # interval length, s
    N: int = 200                # number of intervals
    eta_bar: float = 1e-6       # inner tolerance on ||P_i - P_{i-1}||_F
    zeta_bar: float = 1e-8      # epoch tolerance on |V_k - V_{k-1}|
    max_inner_iters: int = 20
    max_epochs: int = 5
    min_epochs: int = 1
    ridge: float = 0.0
    quadrature: str = "newton_cotes"
    rank_rtol: float = 1e-8

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.eta_bar <= 0 or self.zeta_bar <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 1 <= self.min_epochs <= self.max_epochs:
            raise ValueError("min_epochs must lie in [1, max_epochs]")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.quadrature not in QUADRATURE_RULES:
            raise ValueError(f"quadrature must be one of {QUADRATURE_RULES}")

    def check_dims(self, n: int, m: int) -> None:
        L = n_unknowns(n, m)
        if self.N < L:
            raise ValueError(f"N = {self.N} intervals cannot determine L = {L} unknowns")

    @property
    def window(self) -> float:
        return self.N * self.T

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class KronIntegrals:
    I_xx: np.ndarray
    I_xu: np.ndarray
    Delta_xk: np.ndarray
    Delta_x: np.ndarray

    def __iter__(self):
        return iter((self.I_xx, self.I_xu, self.Delta_xk, self.Delta_x))

    @property
    def n(self) -> int:
        return self.Delta_x.shape[1]

    @property
    def m(self) -> int:
        return self.I_xu.shape[1] // self.n


def quadrature_weights(p: int, T_s: float, rule: str) -> np.ndarray:
    """Weights of a ``p``-step rule on one interval of the sample grid."""
    if rule == "trapezoid":
        w = np.full(p + 1, T_s)
        w[0] = w[-1] = T_s / 2
        return w
    if rule == "simpson":
        if p % 2:
            raise ValueError("Simpson's rule needs an even number of steps per interval")
        w = np.ones(p + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (T_s / 3)
    if rule == "newton_cotes":
        if p > NEWTON_COTES_MAX_STEPS:
            raise ValueError(f"Newton-Cotes rule limited to {NEWTON_COTES_MAX_STEPS} steps per interval")
        return newton_cotes(p, 1)[0] * T_s
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _interval_integrals(f, p: int, N: int, T_s: float, rule: str) -> np.ndarray:
    """Integrate sampled ``f`` (rows = samples) over N consecutive blocks of p steps."""
    w = quadrature_weights(p, T_s, rule)
    idx = np.arange(N)[:, None] * p + np.arange(p + 1)
    return np.einsum("k,jkc->jc", w, f[idx])


def kron_integrals(traj: Trajectory, T: float, N: int | None = None,
                   rule: str = "newton_cotes") -> KronIntegrals:
    """Row ``j`` covers ``[j T, (j+1) T]``; integrals by quadrature on the sample grid."""
    T_s = traj.T_s
    p = int(round(T / T_s))
    if p < 1 or abs(p * T_s - T) > 1e-9 * T:
        raise ValueError(f"interval T = {T} is not an integer multiple of T_s = {T_s}")
    avail = (len(traj) - 1) // p
    N = avail if N is None else N
    if N < 1 or N > avail:
        raise ValueError(f"trajectory has {len(traj)} samples; {N} intervals of {p} steps need {N * p + 1}")
    xd = traj.xdot_meas
    xm = traj.x_meas
    u = traj.u
    n, m = xd.shape[1], u.shape[1]
    fxx = (xd[:, :, None] * xd[:, None, :]).reshape(-1, n * n)
    fxu = (xd[:, :, None] * u[:, None, :]).reshape(-1, n * m)
    I_xx = _interval_integrals(fxx, p, N, T_s, rule)
    I_xu = _interval_integrals(fxu, p, N, T_s, rule)
    ends = np.arange(N + 1) * p
    xe = xm[ends]
    xk = (xe[:, :, None] * xe[:, None, :]).reshape(-1, n * n)
    return KronIntegrals(I_xx, I_xu, np.diff(xk, axis=0), np.diff(xe, axis=0))


def svec_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def svec_compress(D: np.ndarray, n: int) -> np.ndarray:
    """Map columns of ``kron(x, x)`` data to the upper-triangle parametrization of ``P``."""
    cols = []
    for i, j in svec_pairs(n):
        c = D[:, i * n + j]
        cols.append(c if i == j else c + D[:, j * n + i])
    return np.stack(cols, axis=1)


def smat(p: np.ndarray, n: int) -> np.ndarray:
    P = np.zeros((n, n))
    for v, (i, j) in zip(p, svec_pairs(n)):
        P[i, j] = P[j, i] = v
    return P


@dataclass(frozen=True)
class RegressionSystem:
    X: np.ndarray
    Y: np.ndarray
    n: int
    m: int

    @property
    def layout(self) -> dict[str, slice]:
        a = self.n * (self.n + 1) // 2
        b = a + self.n
        return {"svec_P": slice(0, a), "eps": slice(a, b), "vec_K": slice(b, b + self.n * self.m)}

    @property
    def L(self) -> int:
        return self.X.shape[1]


def build_regression(integrals: KronIntegrals, K, weights: CostWeights) -> RegressionSystem:
    I_xx, I_xu, D_xk, D_x = integrals
    n, m = integrals.n, integrals.m
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (m, n) or weights.Q.shape != (n, n) or weights.R.shape != (m, m):
        raise ValueError("gain or weight dimensions do not match the data")
    R = weights.R
    eye = np.eye(n)
    third = -2.0 * I_xx @ np.kron(eye, K.T @ R) - 2.0 * I_xu @ np.kron(eye, R)
    X = np.hstack([svec_compress(D_xk, n), D_x, third])
    S = weights.Q + K.T @ R @ K
    Y = -I_xx @ S.reshape(-1, order="F")
    return RegressionSystem(X, Y, n, m)


@dataclass(frozen=True)
class PiIterate:
    P_hat: np.ndarray
    eps_hat: np.ndarray
    K_next: np.ndarray
    ls_residual: float
    condition_number: float
    K: np.ndarray | None = None     # gain whose value P_hat is
    dP: float = np.inf

    @property
    def P(self) -> np.ndarray:
        return self.P_hat

    def to_dict(self) -> dict:
        return {"P_hat": self.P_hat, "eps_hat": self.eps_hat, "K": self.K, "K_next": self.K_next,
                "ls_residual": self.ls_residual, "condition_number": self.condition_number,
                "dP": self.dP}


def pi_solve(system: RegressionSystem, ridge: float = 0.0, rank_rtol: float = 1e-8) -> PiIterate:
    """Least squares by SVD on the column-equilibrated regression matrix."""
    X, Y = system.X, system.Y
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise np.linalg.LinAlgError("regression data are not finite")
    norms = np.linalg.norm(X, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    Xs = X / scale
    U, s, Vt = np.linalg.svd(Xs, full_matrices=False)
    if s.size < X.shape[1] or s[0] == 0.0 or s[-1] <= rank_rtol * s[0]:
        raise InsufficientExcitation(s, rank_rtol)
    beta = U.T @ Y
    if ridge > 0:
        # ridge on the unscaled parameters: minimize |X th - Y|^2 + ridge |th|^2
        Xa = np.vstack([X, np.sqrt(ridge) * np.eye(X.shape[1])])
        Ya = np.concatenate([Y, np.zeros(X.shape[1])])
        theta = np.linalg.lstsq(Xa, Ya, rcond=None)[0]
    else:
        theta = (Vt.T @ (beta / s)) / scale
    lay = system.layout
    n, m = system.n, system.m
    P = smat(theta[lay["svec_P"]], n)
    eps = theta[lay["eps"]].copy()
    K_next = theta[lay["vec_K"]].reshape(n, m).T.copy()
    res = float(np.linalg.norm(X @ theta - Y))
    return PiIterate(P, eps, K_next, res, float(s[0] / s[-1]))


@dataclass
class InnerTrace:
    iterates: list[PiIterate] = field(default_factory=list)
    converged: bool = False
    elapsed: float = 0.0

    def __len__(self):
        return len(self.iterates)

    @property
    def P(self) -> np.ndarray:
        return self.iterates[-1].P_hat

    @property
    def K(self) -> np.ndarray:
        return self.iterates[-1].K_next

    @property
    def eps(self) -> np.ndarray:
        return self.iterates[-1].eps_hat

    def to_dict(self) -> dict:
        return {"converged": self.converged, "elapsed": self.elapsed,
                "iterates": [it.to_dict() for it in self.iterates]}


def inner_pi(traj: Trajectory, K1, weights: CostWeights, config: PiConfig,
             integrals: KronIntegrals | None = None) -> InnerTrace:
    """Run policy iteration on one data set, rebuilding only the gain-dependent blocks."""
    t0 = time.perf_counter()
    if integrals is None:
        integrals = kron_integrals(traj, config.T, config.N, config.quadrature)
    config.check_dims(integrals.n, integrals.m)
    K = np.atleast_2d(np.asarray(K1, dtype=float))
    trace = InnerTrace()
    P_prev = None
    for _ in range(config.max_inner_iters):
        it = pi_solve(build_regression(integrals, K, weights), config.ridge, config.rank_rtol)
        dP = np.inf if P_prev is None else float(np.linalg.norm(it.P_hat - P_prev))
        it = replace(it, K=K, dP=dP)
        trace.iterates.append(it)
        if np.linalg.eigvalsh(it.P_hat).min() <= 0:
            trace.elapsed = time.perf_counter() - t0
            raise PiNotConverged(f"value estimate lost positive definiteness at iteration {len(trace)}",
                                 trace)
        if dP < config.eta_bar:
            trace.converged = True
            break
        P_prev, K = it.P_hat, it.K_next
    trace.elapsed = time.perf_counter() - t0
    if not trace.converged:
        raise PiNotConverged(f"inner policy iteration did not converge in {config.max_inner_iters} steps",
                             trace)
    return trace


@dataclass(frozen=True)
class TrainingSetup:
    """How each epoch collects data and evaluates the learned gain.

    Training runs last ``settle + N T``; with a derivative filter the recorded
    state and input are passed through the same filter and the first ``settle``
    seconds are dropped.  Test runs are excitation-free from ``x0_test`` and are
    scored on the true state derivative.
    """

    T_s: float = 1e-3
    measurement: Measurement = field(default_factory=Measurement)
    x0_train: np.ndarray = field(default_factory=lambda: np.zeros(4))
    x0_test: np.ndarray = field(default_factory=lambda: np.array([0.005, 0.0, -0.005, 0.0]))
    test_duration: float = 10.0
    settle: float = 0.0
    substeps: int = 1
    reference_model: StateSpaceModel | None = None


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    K_data: np.ndarray      # gain applied while collecting data
    K: np.ndarray           # learned gain
    cost: float
    dV: float
    inner: InnerTrace
    train_id: str
    margin: float | None
    truncated: bool
    elapsed: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "K_data": self.K_data, "K": self.K, "cost": self.cost,
                "dV": self.dV, "train_id": self.train_id, "hurwitz_margin": self.margin,
                "cost_truncated": self.truncated, "elapsed": self.elapsed,
                "inner": self.inner.to_dict()}


@dataclass
class EpochTrace:
    K1: np.ndarray
    V0: float
    records: list[EpochRecord] = field(default_factory=list)
    converged: bool = False
    simulations: int = 0
    trajectories: dict[str, Trajectory] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def K(self) -> np.ndarray:
        return self.records[-1].K if self.records else self.K1

    def to_dict(self) -> dict:
        return {"K1": self.K1, "V0": self.V0, "converged": self.converged,
                "simulations": self.simulations,
                "epochs": [r.to_dict() for r in self.records]}


def _simulate(plant, K, x0, setup: TrainingSetup, duration, excitation, measurement,
              trace: EpochTrace):
    trace.simulations += 1
    return simulate_dfc_closed_loop(plant, K, x0, setup.T_s, duration, excitation, measurement,
                                    setup.substeps)


def multi_epoch_train(plant, K1, weights: CostWeights, config: PiConfig,
                      excitation: ExcitationSpec, setup: TrainingSetup | None = None,
                      on_epoch: Callable[[EpochRecord], None] | None = None) -> EpochTrace:
    """Alternate data collection, inner policy iteration and cost evaluation.

    Each epoch collects data under the latest learned gain with a fresh
    excitation seed (``excitation.seed + epoch - 1``).  ``V0`` is the cost of
    ``K1``; the first epoch has ``dV = inf``.
    """
    setup = setup or TrainingSetup()
    K = np.atleast_2d(np.asarray(K1, dtype=float))
    if isinstance(plant, StateSpaceModel) and setup.reference_model is None:
        setup = replace(setup, reference_model=plant)
    trace = EpochTrace(K1=K.copy(), V0=np.nan)
    test = _simulate(plant, K, setup.x0_test, setup, setup.test_duration, None, None, trace)
    trace.trajectories["epoch-00-test"] = test
    trace.V0 = evaluate_policy_cost(test, weights, K).value
    V_prev = trace.V0
    meas = setup.measurement
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        exc = replace(excitation, seed=excitation.seed + epoch - 1)
        m_ep = replace(meas, seed=meas.seed + epoch - 1)
        duration = setup.settle + config.window
        try:
            train = _simulate(plant, K, setup.x0_train, setup, duration, exc, m_ep, trace)
        except SimulationDiverged as exc_:
            raise EpochAborted(f"training run diverged in epoch {epoch}", trace) from exc_
        if meas.filter is not None:
            train = prefilter(train, meas.filter, setup.settle)
        elif setup.settle > 0:
            k0 = int(round(setup.settle / setup.T_s))
            train = Trajectory(train.t[k0:] - train.t[k0], train.x[k0:], train.x_meas[k0:],
                               train.xdot_meas[k0:], train.u[k0:], train.xdot[k0:])
        train_id = f"epoch-{epoch:02d}-train"
        trace.trajectories[train_id] = train
        try:
            inner = inner_pi(train, K, weights, config)
        except (PiNotConverged, InsufficientExcitation) as exc_:
            exc_.epoch_trace = trace
            raise
        K_new = inner.K
        margin = None
        if setup.reference_model is not None:
            margin = hurwitz_margin(closed_loop_matrix(setup.reference_model, K_new))
            if margin <= 0:
                raise EpochAborted(f"epoch {epoch} gain does not stabilize the reference model", trace)
        try:
            test = _simulate(plant, K_new, setup.x0_test, setup, setup.test_duration,
                             None, None, trace)
        except SimulationDiverged as exc_:
            raise EpochAborted(f"test run diverged in epoch {epoch}", trace) from exc_
        trace.trajectories[f"epoch-{epoch:02d}-test"] = test
        pc = evaluate_policy_cost(test, weights, K_new)
        if not np.isfinite(pc.value):
            raise EpochAborted(f"non-finite cost in epoch {epoch}", trace)
        dV = np.inf if epoch == 1 else abs(pc.value - V_prev)
        rec = EpochRecord(epoch, K.copy(), K_new, pc.value, dV, inner, train_id, margin,
                          pc.truncated, time.perf_counter() - t0)
        trace.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        V_prev, K = pc.value, K_new
        if dV < config.zeta_bar and epoch >= config.min_epochs:
            trace.converged = True
            break
    return trace


def write_plot_data(trace: EpochTrace, out_dir) -> list:
    """Epoch-vs-cost and iteration-vs-change tables as CSV."""
    out = Path(out_dir)
    epochs = [0] + [r.epoch for r in trace.records]
    costs = [trace.V0] + [r.cost for r in trace.records]
    dv = [np.nan] + [r.dV for r in trace.records]
    paths = [write_columns_csv(out / "cost_by_epoch.csv", ["epoch", "cost", "dV"],
                               [np.array(epochs), np.array(costs), np.array(dv)])]
    rows = []
    for r in trace.records:
        K_prev = r.K_data
        for i, it in enumerate(r.inner.iterates, start=1):
            rows.append((r.epoch, i, it.dP, float(np.linalg.norm(it.K_next - K_prev))))
            K_prev = it.K_next
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    paths.append(write_columns_csv(out / "inner_convergence.csv", ["epoch", "iteration", "dP", "dK"],
                                   list(arr.T)))
    return paths


def save_trace(trace: EpochTrace, out_dir, trajectories: bool = True) -> list:
    out = Path(out_dir)
    paths = [save_json(out / "epoch_trace.json", trace.to_dict())]
    if trajectories:
        for name, tr in trace.trajectories.items():
            paths.append(tr.to_csv(out / "trajectories" / f"{name}.csv"))
    return paths + write_plot_data(trace, out)

