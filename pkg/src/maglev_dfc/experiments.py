"""End-to-end studies shared by the command line, the acceptance suite and scripts."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .config import ExperimentConfig
from .design import DfcSolution, solve_dfc_are, solve_state_feedback_are
from .formats import load_json, matrix_from_doc, save_json
from .linmodel import (StateSpaceModel, closed_loop_matrix, hurwitz_margin, state_feedback_matrix)
from .mfpi import EpochTrace, multi_epoch_train
from .sim import (Measurement, Trajectory, prefilter, simulate_dfc_closed_loop,
                  simulate_state_feedback)
from .sysid import IdentifiedModel, PemResult, dmdc_fit, frequency_response, pem_refine

GAIN_KINDS = ("dfc", "sf")
FREQ_GRID = np.logspace(-1, 3, 400)


@dataclass(frozen=True)
class Controller:
    label: str
    kind: str
    K: np.ndarray

    def __post_init__(self):
        if self.kind not in GAIN_KINDS:
            raise ValueError(f"gain kind must be one of {GAIN_KINDS}")
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))

    def to_dict(self) -> dict:
        return {"label": self.label, "kind": self.kind, "K": self.K}

    def save(self, path) -> Path:
        return save_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "Controller":
        doc = load_json(path)
        return cls(doc.get("label", Path(path).stem), doc.get("kind", "dfc"), matrix_from_doc(doc["K"]))


# design ---------------------------------------------------------------------

def design(cfg: ExperimentConfig, model: StateSpaceModel | None = None) -> tuple[DfcSolution, DfcSolution]:
    """Optimal derivative-feedback gain and the state-feedback baseline on the same weights."""
    model = model or cfg.design_model()
    return solve_dfc_are(model, cfg.weights), solve_state_feedback_are(model, cfg.weights)


# training -------------------------------------------------------------------

def train(cfg: ExperimentConfig, on_epoch=None) -> EpochTrace:
    plant = cfg.build_plant()
    return multi_epoch_train(plant, cfg.initial_gain_matrix(), cfg.weights, cfg.pi,
                             cfg.excitation_for(0), cfg.training_setup(plant), on_epoch)


# identification -------------------------------------------------------------

@dataclass
class IdentificationRun:
    seed: int
    traj: Trajectory
    dmdc: IdentifiedModel
    pem: PemResult
    controller: Controller | None
    error: str | None = None

    def recovery(self, reference: StateSpaceModel) -> dict:
        rel = lambda X, Y: float(np.linalg.norm(X - Y) / np.linalg.norm(Y))
        return {"dmdc_A": rel(self.dmdc.A, reference.A), "dmdc_B": rel(self.dmdc.B, reference.B),
                "pem_A": rel(self.pem.A, reference.A), "pem_B": rel(self.pem.B, reference.B)}


def identification_data(cfg: ExperimentConfig, seed: int, plant=None) -> Trajectory:
    """Excited closed-loop run under the initial gain (the open-loop plant is unstable)."""
    plant = plant or cfg.build_plant()
    meas = Measurement(bias=cfg.measurement().bias, noise_std=cfg.noise_std, filter=cfg.filter,
                       seed=seed + 1000)
    traj = simulate_dfc_closed_loop(plant, cfg.initial_gain_matrix(), np.array(cfg.x0_train),
                                    cfg.T_s, cfg.settle + cfg.identify_duration,
                                    cfg.excitation_for(seed - cfg.seed), meas, cfg.substeps)
    if cfg.filter is not None:
        return prefilter(traj, cfg.filter, cfg.settle)
    if cfg.settle > 0:
        k0 = int(round(cfg.settle / cfg.T_s))
        traj = Trajectory(traj.t[k0:] - traj.t[k0], traj.x[k0:], traj.x_meas[k0:],
                          traj.xdot_meas[k0:], traj.u[k0:], traj.xdot[k0:])
    return traj


def identify(cfg: ExperimentConfig, seeds=None) -> list[IdentificationRun]:
    plant = cfg.build_plant()
    runs = []
    for s in (cfg.identify_seeds if seeds is None else seeds):
        traj = identification_data(cfg, int(s), plant)
        fit = dmdc_fit(traj, cfg.dmdc)
        pem = pem_refine(traj, fit, max_iters=cfg.pem_iters)
        ctrl, err = None, None
        try:
            sol = solve_dfc_are(pem.model, cfg.weights)
            ctrl = Controller(f"K_id_seed{s}", "dfc", sol.K)
        except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
            err = str(exc)
        runs.append(IdentificationRun(int(s), traj, fit, pem, ctrl, err))
    return runs


def frequency_overlay(models: dict[str, StateSpaceModel], out_index=0, in_index=0, omega=FREQ_GRID):
    return {k: frequency_response(m, out_index, in_index, omega) for k, m in models.items()}


# comparison -----------------------------------------------------------------

@dataclass(frozen=True)
class ControllerRecord:
    label: str
    kind: str
    K: np.ndarray
    cost: float
    final_offset: float       # |x(t_end) - x_eq| on the true state
    final_norm: float         # |x(t_end)| in local coordinates
    terminal_u: float         # max_j |u_j(t_end)|
    peak_u: float
    final_xdot: float
    hurwitz_margin: float
    stable: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComparisonReport:
    x0: np.ndarray
    horizon: float
    bias: np.ndarray
    plant: str
    equilibrium: np.ndarray
    records: list[ControllerRecord] = field(default_factory=list)
    trajectories: dict[str, Trajectory] = field(default_factory=dict, repr=False)

    def __getitem__(self, label: str) -> ControllerRecord:
        for r in self.records:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "horizon": self.horizon, "bias": self.bias, "plant": self.plant,
                "equilibrium": self.equilibrium, "controllers": [r.to_dict() for r in self.records]}


def trajectory_cost(traj: Trajectory, weights) -> float:
    """``int xdot' Q xdot + u' R u dt`` on the true derivative and applied input."""
    xd = traj.xdot if traj.xdot is not None else traj.xdot_meas
    f = (np.einsum("ki,ij,kj->k", xd, weights.Q, xd)
         + np.einsum("ki,ij,kj->k", traj.u, weights.R, traj.u))
    return float(trapezoid(f, traj.t))


def compare(cfg: ExperimentConfig, controllers: list[Controller], bias=None,
            stable_tol: float = 1e-6) -> ComparisonReport:
    """Run every controller from the same ``x0``, horizon, plant and bias."""
    plant = cfg.build_plant()
    ref = cfg.reference_model(plant)
    x_eq = plant.equilibrium()
    bias = np.array(cfg.compare_bias if bias is None else bias, dtype=float)
    meas = Measurement(bias=bias if np.any(bias) else None)
    x0 = np.array(cfg.x0, dtype=float)
    report = ComparisonReport(x0, cfg.compare_duration, bias, cfg.plant, x_eq)
    for c in controllers:
        if c.K.shape != (plant.m, plant.n):
            raise ValueError(f"gain {c.label!r} is {c.K.shape}, plant needs {(plant.m, plant.n)}")
        if c.kind == "dfc":
            traj = simulate_dfc_closed_loop(plant, c.K, x0, cfg.T_s, cfg.compare_duration,
                                            None, meas, cfg.substeps)
            margin = hurwitz_margin(closed_loop_matrix(ref, c.K))
        else:
            traj = simulate_state_feedback(plant, c.K, x0, cfg.T_s, cfg.compare_duration,
                                           None, meas, cfg.substeps)
            margin = hurwitz_margin(state_feedback_matrix(ref, c.K))
        xf = traj.x[-1]
        xdf = float(np.linalg.norm(traj.xdot[-1]))
        rec = ControllerRecord(
            c.label, c.kind, c.K, trajectory_cost(traj, cfg.weights),
            float(np.linalg.norm(xf - x_eq)), float(np.linalg.norm(xf)),
            float(np.abs(traj.u[-1]).max()), float(np.abs(traj.u).max()), xdf, margin,
            bool(margin > 0 and xdf < stable_tol))
        report.records.append(rec)
        report.trajectories[c.label] = traj
    return report


def standard_controllers(cfg: ExperimentConfig, trace: EpochTrace | None = None,
                         id_runs: list[IdentificationRun] | None = None) -> list[Controller]:
    """Nominal optimal DFC, state-feedback baseline, and any learned or identified gains."""
    dfc, sf = design(cfg)
    out = [Controller("K_ARE", "dfc", dfc.K), Controller("K_LQR", "sf", sf.K)]
    if trace is not None:
        out.append(Controller("K_trained", "dfc", trace.K))
    for run in id_runs or []:
        if run.controller is not None:
            out.append(run.controller)
    return out
