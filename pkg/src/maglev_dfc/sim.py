"""Fixed-step simulation, exploration signals, measurement models and derivative filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy import signal

from .formats import read_columns_csv, write_columns_csv
from .linmodel import SingularLoopError, StateSpaceModel, is_singular


class SimulationDiverged(FloatingPointError):
    def __init__(self, index: int, t: float):
        super().__init__(f"state became non-finite at sample {index} (t = {t:.6g} s)")
        self.index = index
        self.t = t


class Plant(Protocol):
    """Input-affine plant in local coordinates: ``xdot = drift(x) + input_matrix(x) @ u``."""

    n: int
    m: int

    def drift(self, x: np.ndarray) -> np.ndarray: ...

    def input_matrix(self, x: np.ndarray) -> np.ndarray: ...


class LinearPlant:
    def __init__(self, model: StateSpaceModel, u_bias=None, u_limit: float | None = None):
        self.model = model
        self.n, self.m = model.n, model.m
        self.u_bias = np.zeros(self.m) if u_bias is None else np.asarray(u_bias, dtype=float)
        self.u_limit = u_limit

    def drift(self, x):
        return self.model.A @ x

    def input_matrix(self, x):
        return self.model.B

    def equilibrium(self):
        return np.zeros(self.n)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled record. Rows are samples; ``xdot`` holds the true derivative."""

    t: np.ndarray
    x: np.ndarray
    x_meas: np.ndarray
    xdot_meas: np.ndarray
    u: np.ndarray
    xdot: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("trajectory needs at least two samples")
        dt = np.diff(t)
        if dt[0] <= 0 or np.max(np.abs(dt - dt[0])) > 1e-9 * max(dt[0], abs(t[-1])):
            raise ValueError("time grid must be uniform with positive step")
        for name in ("x", "x_meas", "xdot_meas", "u", "xdot"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            if arr.shape[0] != t.size:
                raise ValueError(f"{name} has {arr.shape[0]} samples, grid has {t.size}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @property
    def T_s(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def __len__(self):
        return self.t.size

    def csv_header(self) -> list[str]:
        n, m = self.n, self.m
        return (["t"] + [f"x{i+1}" for i in range(n)] + [f"xm{i+1}" for i in range(n)]
                + [f"xd{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)])

    def to_csv(self, path):
        cols = [self.t, *self.x.T, *self.x_meas.T, *self.xdot_meas.T, *self.u.T]
        return write_columns_csv(path, self.csv_header(), cols)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        header, data = read_columns_csv(path)
        n = sum(1 for h in header if h.startswith("xm"))
        m = sum(1 for h in header if h.startswith("u"))
        if header != (["t"] + [f"x{i+1}" for i in range(n)] + [f"xm{i+1}" for i in range(n)]
                      + [f"xd{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]):
            raise ValueError(f"unexpected trajectory header {header}")
        c = 1
        x = data[:, c:c + n]; c += n
        xm = data[:, c:c + n]; c += n
        xd = data[:, c:c + n]; c += n
        u = data[:, c:c + m]
        return cls(data[:, 0], x, xm, xd, u)

    def equals(self, other: "Trajectory") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("t", "x", "x_meas", "xdot_meas", "u"))


@dataclass(frozen=True)
class ExcitationSpec:
    amplitude: float = 0.1
    freq_low: float = -100.0     # rad/s
    freq_high: float = 100.0     # rad/s
    num_tones: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.freq_low > self.freq_high:
            raise ValueError("freq_low must not exceed freq_high")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.num_tones < 1:
            raise ValueError("num_tones must be >= 1")


class Multisine:
    """Per-channel sum of sinusoids, scaled so each channel peaks at ``amplitude`` on ``[0, window]``."""

    def __init__(self, spec: ExcitationSpec, n_inputs: int = 1, window: float = 2.0,
                 resolution: float = 1e-4):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        shape = (n_inputs, spec.num_tones)
        self.freqs = rng.uniform(spec.freq_low, spec.freq_high, shape)
        self.phases = rng.uniform(0.0, 2 * np.pi, shape)
        if spec.amplitude == 0.0:
            self.scale = np.zeros(n_inputs)
        else:
            grid = np.linspace(0.0, window, int(round(window / resolution)) + 1)
            peak = np.abs(self._raw(grid)).max(axis=0)
            self.scale = spec.amplitude / np.where(peak > 0, peak, 1.0)

    def _raw(self, t):
        t = np.asarray(t, dtype=float)
        ph = t[..., None, None] * self.freqs + self.phases
        return np.sin(ph).sum(axis=-1)

    def __call__(self, t):
        return self._raw(t) * self.scale


def excitation_signal(spec: ExcitationSpec, t, n_inputs: int = 1, window: float = 2.0):
    return Multisine(spec, n_inputs, window)(t)


@dataclass(frozen=True)
class FilterSpec:
    """Critically damped second-order low-pass, ``wc^2 / (s + wc)^2`` with ``wc = 2 pi cutoff_hz``."""

    cutoff_hz: float = 2.0
    order: int = 2

    def check(self, T_s: float) -> None:
        if self.order != 2:
            raise ValueError("only second-order sections are supported")
        if not 0 < self.cutoff_hz < 0.5 / T_s:
            raise ValueError("cutoff must lie below the Nyquist frequency")

    def coefficients(self, T_s: float):
        self.check(T_s)
        wc = 2 * np.pi * self.cutoff_hz
        return signal.bilinear([wc * wc], [1.0, 2 * wc, wc * wc], fs=1.0 / T_s)


def lowpass(series, T_s: float, filt: FilterSpec) -> np.ndarray:
    """Causal filtering along axis 0, started in steady state at the first sample."""
    b, a = filt.coefficients(T_s)
    series = np.asarray(series, dtype=float)
    zi = signal.lfilter_zi(b, a)
    zi = zi[:, None] * series[:1] if series.ndim == 2 else zi * series[0]
    out, _ = signal.lfilter(b, a, series, axis=0, zi=zi)
    return out


def filtered_derivative(x_meas, T_s: float, filt: FilterSpec) -> np.ndarray:
    x_meas = np.asarray(x_meas, dtype=float)
    if x_meas.shape[0] < 3:
        raise ValueError("need at least three samples")
    return lowpass(np.gradient(x_meas, T_s, axis=0), T_s, filt)


@dataclass(frozen=True)
class Measurement:
    """How the recorded channels relate to the true state.

    ``filter=None`` records the exact derivative; otherwise the derivative is the
    low-passed finite difference of the measured state.
    """

    bias: np.ndarray | None = None
    noise_std: float = 0.0
    filter: FilterSpec | None = None
    seed: int = 0


def _measure(x, xdot, T_s, meas: Measurement):
    x_meas = x.copy()
    if meas.bias is not None:
        x_meas = x_meas + np.asarray(meas.bias, dtype=float)
    if meas.noise_std > 0:
        rng = np.random.default_rng(meas.seed)
        x_meas = x_meas + meas.noise_std * rng.standard_normal(x.shape)
    xdot_meas = xdot if meas.filter is None else filtered_derivative(x_meas, T_s, meas.filter)
    return x_meas, xdot_meas


def _n_steps(T_s: float, duration: float) -> int:
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    if duration < T_s * (1 - 1e-12):
        raise ValueError("duration must be at least one step")
    return int(round(duration / T_s))


def _rk4(rhs, x0, T_s: float, steps: int, substeps: int = 1):
    """Classic RK4 with ``substeps`` internal steps per sample.

    ``rhs(t, x) -> (xdot, u)``; xdot and u are recorded at every sample.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    t = np.arange(steps + 1) * T_s
    X = np.empty((steps + 1, x0.size))
    Xd = np.empty_like(X)
    U = None
    x = x0.copy()
    h = T_s / substeps
    for k in range(steps + 1):
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(k, t[k])
        k1, u = rhs(t[k], x)
        if U is None:
            U = np.empty((steps + 1, np.size(u)))
        X[k], Xd[k], U[k] = x, k1, u
        if k == steps:
            break
        for j in range(substeps):
            tj = t[k] + j * h
            if j:
                k1, _ = rhs(tj, x)
            k2, _ = rhs(tj + h / 2, x + h / 2 * k1)
            k3, _ = rhs(tj + h / 2, x + h / 2 * k2)
            k4, _ = rhs(tj + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not (np.all(np.isfinite(Xd)) and np.all(np.isfinite(U))):
        bad = int(np.argmax(~np.all(np.isfinite(Xd), axis=1)))
        raise SimulationDiverged(bad, t[bad])
    return t, X, Xd, U


def integrate(dynamics: Callable, x0, u_source: Callable, T_s: float, duration: float,
              measurement: Measurement | None = None, substeps: int = 1) -> Trajectory:
    """Integrate ``xdot = dynamics(x, u)`` under ``u = u_source(t, x)``."""
    def rhs(t, x):
        u = np.atleast_1d(np.asarray(u_source(t, x), dtype=float))
        return np.asarray(dynamics(x, u), dtype=float), u

    t, X, Xd, U = _rk4(rhs, x0, T_s, _n_steps(T_s, duration), substeps)
    x_meas, xdot_meas = _measure(X, Xd, T_s, measurement or Measurement())
    return Trajectory(t, X, x_meas, xdot_meas, U, Xd)


def _saturate(plant, u):
    lim = getattr(plant, "u_limit", None)
    if lim is None:
        return u, np.zeros(u.shape, dtype=bool)
    bias = getattr(plant, "u_bias", np.zeros_like(u))
    total = u + bias
    hit = np.abs(total) > lim
    return np.clip(total, -lim, lim) - bias, hit


def dfc_rhs(plant, K, excitation: Callable | None = None):
    """Closed loop under ``u = -K xdot + e(t)``, solved through the input-affine structure."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = plant.n
    eye = np.eye(n)
    linear = isinstance(plant, LinearPlant) and getattr(plant, "u_limit", None) is None
    if linear:
        L = eye + plant.model.B @ K
        if is_singular(L):
            raise SingularLoopError("algebraic loop unsolvable: I + B K is singular")
        L_inv = np.linalg.inv(L)

    limited = getattr(plant, "u_limit", None) is not None
    zero = np.zeros(K.shape[0])

    def rhs(t, x):
        e = zero if excitation is None else np.asarray(excitation(t), dtype=float)
        f0 = plant.drift(x)
        G = plant.input_matrix(x)
        if linear:
            xdot = L_inv @ (f0 + G @ e)
            return xdot, e - K @ xdot
        if not limited:
            try:
                xdot = np.linalg.solve(eye + G @ K, f0 + G @ e)
            except np.linalg.LinAlgError as exc:
                raise SingularLoopError(f"algebraic loop unsolvable at t = {t:.6g} s") from exc
            return xdot, e - K @ xdot
        free = np.ones(K.shape[0], dtype=bool)
        fixed = np.zeros(K.shape[0])
        for _ in range(K.shape[0] + 1):
            Gf, Kf = G[:, free], K[free]
            Lm = eye + Gf @ Kf
            if is_singular(Lm):
                raise SingularLoopError(f"algebraic loop unsolvable at t = {t:.6g} s")
            xdot = np.linalg.solve(Lm, f0 + Gf @ e[free] + G[:, ~free] @ fixed[~free])
            u = np.where(free, e - K @ xdot, fixed)
            us, hit = _saturate(plant, u)
            if not np.any(hit & free):
                return xdot, us
            fixed = np.where(hit, us, fixed)
            free = free & ~hit
        return xdot, u
    return rhs


def state_feedback_rhs(plant, K, bias=None, excitation: Callable | None = None):
    """Closed loop under ``u = -K (x + bias) + e(t)``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    xb = np.zeros(plant.n) if bias is None else np.asarray(bias, dtype=float)

    def rhs(t, x):
        e = 0.0 if excitation is None else np.asarray(excitation(t), dtype=float)
        u, _ = _saturate(plant, e - K @ (x + xb))
        return plant.drift(x) + plant.input_matrix(x) @ u, u
    return rhs


def simulate_dfc_closed_loop(plant, K, x0, T_s: float, duration: float,
                             excitation: ExcitationSpec | Callable | None = None,
                             measurement: Measurement | None = None,
                             substeps: int = 1) -> Trajectory:
    if isinstance(plant, StateSpaceModel):
        plant = LinearPlant(plant)
    if isinstance(excitation, ExcitationSpec):
        excitation = Multisine(excitation, plant.m, duration)
    rhs = dfc_rhs(plant, K, excitation)
    t, X, Xd, U = _rk4(rhs, x0, T_s, _n_steps(T_s, duration), substeps)
    x_meas, xdot_meas = _measure(X, Xd, T_s, measurement or Measurement())
    return Trajectory(t, X, x_meas, xdot_meas, U, Xd)


def simulate_state_feedback(plant, K, x0, T_s: float, duration: float,
                            excitation: ExcitationSpec | Callable | None = None,
                            measurement: Measurement | None = None,
                            substeps: int = 1) -> Trajectory:
    if isinstance(plant, StateSpaceModel):
        plant = LinearPlant(plant)
    meas = measurement or Measurement()
    if isinstance(excitation, ExcitationSpec):
        excitation = Multisine(excitation, plant.m, duration)
    rhs = state_feedback_rhs(plant, K, meas.bias, excitation)
    t, X, Xd, U = _rk4(rhs, x0, T_s, _n_steps(T_s, duration), substeps)
    x_meas, xdot_meas = _measure(X, Xd, T_s, meas)
    return Trajectory(t, X, x_meas, xdot_meas, U, Xd)


def prefilter(traj: Trajectory, filt: FilterSpec, settle: float = 0.0) -> Trajectory:
    """Pass measured state and input through the same low-pass used for the derivative.

    Filtering commutes with an LTI plant, so the filtered channels satisfy the
    plant equations again; ``settle`` drops the start-up transient.
    """
    T_s = traj.T_s
    xf = lowpass(traj.x_meas, T_s, filt)
    uf = lowpass(traj.u, T_s, filt)
    xdf = filtered_derivative(traj.x_meas, T_s, filt)
    k0 = int(round(settle / T_s))
    sl = slice(k0, None)
    return Trajectory(traj.t[sl] - traj.t[k0], traj.x[sl], xf[sl], xdf[sl], uf[sl],
                      None if traj.xdot is None else traj.xdot[sl])
