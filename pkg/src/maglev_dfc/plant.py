"""Two-disk magnetic levitation plant: force model, magnetic equilibrium, linearization.

Geometry convention
-------------------
The force laws are written in gap coordinates ``y1, y2`` (the quantities the
operating point ``y10 = 0.01 m, y20 = -0.02 m`` is expressed in).  The equations of
motion are integrated in the levitation coordinate ``h_i = -y_i``: magnetic
attraction closes the gap and gravity opens it.  Local states are

    x = [h1 - h10, dh1/dt, h2 - h20, dh2/dt],   u = [U1 - u10, U2 - u20]

With this assignment the Jacobian at the operating point has exactly the
structure and coefficients ``a21 = (k1 + k12)/M`` etc. used for the nominal model
(open-loop unstable, positive input gains).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.optimize import fsolve

from .linmodel import StateSpaceModel

COLLISION_TOL = 1e-9

# nominal model as printed (rounded, magnet-magnet coupling shown as zero)
PRINTED_A = np.array([
    [0.0, 1.0, 0.0, 0.0],
    [567.8, -7.6, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 1003.7, -7.6],
])
PRINTED_B = np.array([
    [0.0, 0.0],
    [8.6077, 0.0],
    [0.0, 0.0],
    [0.0, 83.9636],
])
POSITION_OUTPUTS = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


class MagnetCollisionError(ArithmeticError):
    """A force-law denominator reached zero: disks touched a coil or each other."""


@dataclass(frozen=True)
class MaglevParams:
    M: float = 0.126          # kg
    g: float = 9.81           # m/s^2
    c1: float = 0.96          # kg/s
    c2: float = 0.96          # kg/s
    a: float = 4.0442e4       # A/(N m^4)
    b: float = 0.0591         # m
    c: float = 4.4408e-8      # N m^4
    d: float = 0.042          # m
    y_c: float = 0.133        # m

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"parameter {f.name} must be strictly positive, got {v}")

    def scaled(self, **factors: float) -> "MaglevParams":
        """Copy with selected parameters multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class OperatingPoint:
    y10: float = 0.01
    y20: float = -0.02
    u10: float = 0.0
    u20: float = 0.0

    def check(self, params: MaglevParams) -> None:
        if self.y10 + params.b <= 0 or -self.y20 + params.b <= 0 or self.y20 + params.b <= 0:
            raise ValueError("operating point puts a disk inside a coil")
        if self.u10 < 0 or self.u20 < 0:
            raise ValueError("bias currents must be non-negative")

    def separation(self, params: MaglevParams) -> float:
        return params.y_c + self.y20 - self.y10

    @classmethod
    def at_equilibrium(cls, params: MaglevParams, y10: float = 0.01, y20: float = -0.02,
                       as_printed: bool = False) -> "OperatingPoint":
        u10, u20 = equilibrium_currents(params, y10, y20, as_printed=as_printed)
        return cls(y10, y20, u10, u20)

    def to_dict(self) -> dict:
        return {"y10": self.y10, "y20": self.y20, "u10": self.u10, "u20": self.u20}


@dataclass(frozen=True)
class MaglevState:
    """Absolute plant state in levitation coordinates (h_i = -y_i)."""

    h1: float
    h1dot: float
    h2: float
    h2dot: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.h1, self.h1dot, self.h2, self.h2dot])):
            raise ValueError("state must be finite")

    @classmethod
    def from_gaps(cls, y1: float, y2: float, y1dot: float = 0.0, y2dot: float = 0.0) -> "MaglevState":
        return cls(-y1, -y1dot, -y2, -y2dot)

    def as_array(self) -> np.ndarray:
        return np.array([self.h1, self.h1dot, self.h2, self.h2dot])


def _gaps(p: MaglevParams, y1: float, y2: float):
    g11 = y1 + p.b
    g22 = y2 + p.b
    g12 = p.y_c + y2 + p.b
    g21 = p.y_c - y1 + p.b
    gm = p.y_c + y2 - y1 + p.d
    for name, gap in (("coil1-disk1", g11), ("coil2-disk2", g22), ("coil1-disk2", g12),
                      ("coil2-disk1", g21), ("disk1-disk2", gm)):
        if gap <= COLLISION_TOL:
            raise MagnetCollisionError(f"magnet collision: {name} gap {gap:.3e} m")
    return g11, g22, g12, g21, gm


def forces(p: MaglevParams, y1: float, y2: float, U1: float, U2: float) -> dict:
    """Five-force model. ``F_ujk`` is the force of coil ``j`` on disk ``k``."""
    g11, g22, g12, g21, gm = _gaps(p, y1, y2)
    return {
        "Fu11": U1 / (p.a * g11**4),
        "Fu12": U1 / (p.a * g12**4),
        "Fu21": U2 / (p.a * g21**4),
        "Fu22": U2 / (p.a * g22**4),
        "Fm12": p.c / gm**4,
    }


def dynamics(params: MaglevParams, state: MaglevState, U1: float, U2: float,
             cross_forces: bool = True) -> np.ndarray:
    """Return ``[h1dot, h1ddot, h2dot, h2ddot]`` for absolute coil currents ``U1, U2``.

    ``cross_forces=False`` drops the coil-to-far-disk forces, which is the
    simplification the linear model is derived under.
    """
    p = params
    F = forces(p, -state.h1, -state.h2, U1, U2)
    f21 = F["Fu21"] if cross_forces else 0.0
    f12 = F["Fu12"] if cross_forces else 0.0
    acc1 = (F["Fu11"] - f21 - F["Fm12"] - p.c1 * state.h1dot - p.M * p.g) / p.M
    acc2 = (F["Fu22"] - f12 + F["Fm12"] - p.c2 * state.h2dot - p.M * p.g) / p.M
    return np.array([state.h1dot, acc1, state.h2dot, acc2])


def equilibrium_currents(params: MaglevParams, y10: float, y20: float,
                         as_printed: bool = False) -> tuple[float, float]:
    """Bias currents that levitate both disks at gaps ``y10, y20``.

    The magnet-magnet force pulls disk 1 down and pushes disk 2 up, so disk 2
    needs ``Mg - F_m12``.  ``as_printed=True`` instead adds ``F_m12`` for both
    disks, matching the closed-form expression usually quoted; the two differ
    by about 2e-5 A at the nominal point.
    """
    p = params
    OperatingPoint(y10, y20).check(p)
    fm = p.c / (p.y_c + y20 - y10 + p.d) ** 4
    u10 = p.a * (y10 + p.b) ** 4 * (fm + p.M * p.g)
    u20 = p.a * (y20 + p.b) ** 4 * ((fm if as_printed else -fm) + p.M * p.g)
    return float(u10), float(u20)


def linear_coefficients(params: MaglevParams, op: OperatingPoint) -> dict:
    p = params
    op.check(p)
    k1 = 4 * op.u10 / (p.a * (op.y10 + p.b) ** 5)
    k2 = 4 * op.u20 / (p.a * (op.y20 + p.b) ** 5)
    ku1 = 1 / (p.a * (op.y10 + p.b) ** 4)
    ku2 = 1 / (p.a * (op.y20 + p.b) ** 4)
    k12 = 4 * p.c / (op.separation(p) + p.d) ** 5
    return {"k1": k1, "k2": k2, "ku1": ku1, "ku2": ku2, "k12": k12}


def linearize(params: MaglevParams, op: OperatingPoint) -> StateSpaceModel:
    """Linear model about ``op`` with cross forces neglected."""
    p = params
    k = linear_coefficients(p, op)
    a21 = (k["k1"] + k["k12"]) / p.M
    a23 = -k["k12"] / p.M
    a41 = -k["k12"] / p.M
    a43 = (k["k2"] + k["k12"]) / p.M
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [a21, -p.c1 / p.M, a23, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [a41, 0.0, a43, -p.c2 / p.M],
    ])
    B = np.array([
        [0.0, 0.0],
        [k["ku1"] / p.M, 0.0],
        [0.0, 0.0],
        [0.0, k["ku2"] / p.M],
    ])
    return StateSpaceModel(A, B)


def printed_model() -> StateSpaceModel:
    """Nominal model with the rounded entries exactly as published."""
    return StateSpaceModel(PRINTED_A, PRINTED_B)


def nominal_operating_point(params: MaglevParams | None = None) -> OperatingPoint:
    return OperatingPoint.at_equilibrium(params or MaglevParams())


class MaglevPlant:
    """Nonlinear plant in local coordinates, input-affine: ``xdot = f0(x) + G(x) u``.

    ``params`` are the plant's true constants; ``op`` fixes the nominal gaps and
    the bias currents actually applied.  When ``params`` differs from the values
    ``op`` was computed with, the real equilibrium moves away from the origin.
    """

    n = 4
    m = 2

    def __init__(self, params: MaglevParams | None = None, op: OperatingPoint | None = None,
                 cross_forces: bool = True, u_limit: float | None = None):
        self.params = params or MaglevParams()
        self.op = op or nominal_operating_point(self.params)
        self.op.check(self.params)
        self.cross_forces = cross_forces
        self.u_limit = u_limit
        self.u_bias = np.array([self.op.u10, self.op.u20])

    def _gaps_local(self, x):
        return self.op.y10 - x[0], self.op.y20 - x[2]

    def drift(self, x) -> np.ndarray:
        p = self.params
        y1, y2 = self._gaps_local(x)
        F = forces(p, y1, y2, self.op.u10, self.op.u20)
        f21 = F["Fu21"] if self.cross_forces else 0.0
        f12 = F["Fu12"] if self.cross_forces else 0.0
        return np.array([
            x[1],
            (F["Fu11"] - f21 - F["Fm12"] - p.c1 * x[1]) / p.M - p.g,
            x[3],
            (F["Fu22"] - f12 + F["Fm12"] - p.c2 * x[3]) / p.M - p.g,
        ])

    def input_matrix(self, x) -> np.ndarray:
        p = self.params
        y1, y2 = self._gaps_local(x)
        g11, g22, g12, g21, _ = _gaps(p, y1, y2)
        s = 1.0 / (p.a * p.M)
        G = np.zeros((4, 2))
        G[1, 0] = s / g11**4
        G[3, 1] = s / g22**4
        if self.cross_forces:
            G[1, 1] = -s / g21**4
            G[3, 0] = -s / g12**4
        return G

    def rhs(self, x, u) -> np.ndarray:
        return self.drift(x) + self.input_matrix(x) @ np.asarray(u, dtype=float)

    def equilibrium(self) -> np.ndarray:
        """Rest state where the bias currents alone balance the disks (u = 0)."""
        def resid(pos):
            x = np.array([pos[0], 0.0, pos[1], 0.0])
            d = self.drift(x)
            return [d[1], d[3]]

        pos, info, ier, msg = fsolve(resid, [0.0, 0.0], full_output=True, xtol=1e-13)
        if ier != 1 and np.linalg.norm(info["fvec"]) > 1e-9:
            raise RuntimeError(f"equilibrium search failed: {msg}")
        return np.array([pos[0], 0.0, pos[1], 0.0])

    def jacobian(self, x=None, step: float = 1e-7) -> StateSpaceModel:
        """Central-difference linearization at ``x`` (default: the true equilibrium)."""
        x = self.equilibrium() if x is None else np.asarray(x, dtype=float)
        A = np.zeros((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = step
            A[:, j] = (self.drift(x + e) - self.drift(x - e)) / (2 * step)
        return StateSpaceModel(A, self.input_matrix(x))
