"""Experiment configuration: dataclasses, presets and JSON round-trip."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .design import PRINTED_K1, seed_gain, solve_dfc_are
from .linmodel import CostWeights, StateSpaceModel
from .mfpi import PiConfig, TrainingSetup
from .plant import MaglevParams, MaglevPlant, OperatingPoint, linearize, printed_model
from .sim import ExcitationSpec, FilterSpec, LinearPlant, Measurement
from .sysid import DmdcConfig

PLANT_KINDS = ("printed-A", "nominal-linear", "nonlinear")
PRESETS = ("sim-ivb", "hw-ivc")
INITIAL_GAINS = ("printed", "nominal-are", "pole-placement")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun a study; ``seed`` drives every random draw.

    ``plant`` is the data-generating system.  Model-based designs always use the
    nominal model (printed matrices for ``printed-A``, the linearization of the
    nominal parameters otherwise).  ``plant_scale`` multiplies the true plant
    parameters to create model mismatch.
    """

    plant: str = "printed-A"
    plant_scale: dict = field(default_factory=dict)
    cross_forces: bool = True
    y10: float = 0.01
    y20: float = -0.02
    Q: list = field(default_factory=lambda: np.eye(4).tolist())
    R: list = field(default_factory=lambda: np.diag([1.0, 2.0]).tolist())
    initial_gain: str = "printed"
    pi: PiConfig = field(default_factory=PiConfig)
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)
    ideal_derivative: bool = True
    filter_cutoff_hz: float = 2.0
    noise_std: float = 0.0
    bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    x0: list = field(default_factory=lambda: [0.005, 0.0, -0.005, 0.0])
    x0_train: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    T_s: float = 1e-3
    substeps: int = 4
    settle: float = 0.0
    test_duration: float = 10.0
    dmdc: DmdcConfig = field(default_factory=lambda: DmdcConfig(e_min=1.0))
    identify_duration: float = 2.0
    identify_seeds: list = field(default_factory=lambda: [1, 2])
    pem_iters: int = 10
    compare_duration: float = 10.0
    compare_bias: list = field(default_factory=lambda: [0.002, 0.0, -0.001, 0.0])
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.plant not in PLANT_KINDS:
            raise ConfigError(f"plant must be one of {PLANT_KINDS}")
        if self.initial_gain not in INITIAL_GAINS:
            raise ConfigError(f"initial_gain must be one of {INITIAL_GAINS}")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        for name in ("bias", "x0", "x0_train", "compare_bias"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} must have 4 entries")
        for name in ("T_s", "test_duration", "identify_duration", "compare_duration"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.settle < 0 or self.substeps < 1:
            raise ConfigError("settle must be >= 0 and substeps >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        p = round(self.pi.T / self.T_s)
        if p < 1 or abs(p * self.T_s - self.pi.T) > 1e-9 * self.pi.T:
            raise ConfigError("pi.T must be an integer multiple of T_s")
        bad = set(self.plant_scale) - {f.name for f in fields(MaglevParams)}
        if bad:
            raise ConfigError(f"unknown plant parameters {sorted(bad)}")
        try:
            self.pi.check_dims(4, 2)
            self.weights
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.ideal_derivative:
            FilterSpec(self.filter_cutoff_hz).check(self.T_s)

    # derived objects -------------------------------------------------------
    @property
    def weights(self) -> CostWeights:
        return CostWeights(np.array(self.Q, dtype=float), np.array(self.R, dtype=float))

    @property
    def filter(self) -> FilterSpec | None:
        return None if self.ideal_derivative else FilterSpec(self.filter_cutoff_hz)

    def excitation_for(self, offset: int = 0) -> ExcitationSpec:
        return replace(self.excitation, seed=self.seed + offset)

    def measurement(self, bias=None, seed_offset: int = 1000) -> Measurement:
        b = np.array(self.bias if bias is None else bias, dtype=float)
        return Measurement(bias=b if np.any(b) else None, noise_std=self.noise_std,
                           filter=self.filter, seed=self.seed + seed_offset)

    @property
    def params(self) -> MaglevParams:
        return MaglevParams()

    @property
    def operating_point(self) -> OperatingPoint:
        return OperatingPoint.at_equilibrium(self.params, self.y10, self.y20)

    def design_model(self) -> StateSpaceModel:
        if self.plant == "printed-A":
            return printed_model()
        return linearize(self.params, self.operating_point)

    def build_plant(self):
        """The data-generating plant handle (linear or nonlinear)."""
        if self.plant == "printed-A" and not self.plant_scale:
            return LinearPlant(printed_model())
        true = self.params.scaled(**self.plant_scale) if self.plant_scale else self.params
        nl = MaglevPlant(true, self.operating_point, cross_forces=self.cross_forces)
        if self.plant == "nonlinear":
            return nl
        if self.plant_scale:
            return LinearPlant(nl.jacobian(), nl.u_bias)
        return LinearPlant(self.design_model(), nl.u_bias)

    def reference_model(self, plant=None) -> StateSpaceModel:
        """Linearization of the true plant about its actual rest point."""
        plant = plant or self.build_plant()
        if isinstance(plant, LinearPlant):
            return plant.model
        return plant.jacobian()

    def initial_gain_matrix(self) -> np.ndarray:
        if self.initial_gain == "printed":
            return PRINTED_K1.copy()
        if self.initial_gain == "nominal-are":
            return solve_dfc_are(self.design_model(), self.weights).K
        return seed_gain(self.design_model())

    def training_setup(self, plant=None) -> TrainingSetup:
        return TrainingSetup(T_s=self.T_s, measurement=self.measurement(),
                             x0_train=np.array(self.x0_train, dtype=float),
                             x0_test=np.array(self.x0, dtype=float),
                             test_duration=self.test_duration, settle=self.settle,
                             substeps=self.substeps, reference_model=self.reference_model(plant))

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        base = base or cls()
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        nested = {"pi": PiConfig, "excitation": ExcitationSpec, "dmdc": DmdcConfig}
        for k, v in doc.items():
            if k in nested:
                sub = getattr(base, k)
                bad = set(v) - {f.name for f in fields(nested[k])}
                if bad:
                    raise ConfigError(f"unknown keys in {k}: {sorted(bad)}")
                try:
                    kw[k] = replace(sub, **v)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{k}: {exc}") from exc
            else:
                kw[k] = v
        try:
            return replace(base, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return self.from_dict(kw, self)


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("maglev_dfc").joinpath("presets", f"{name}.json").read_text()
    return ExperimentConfig.from_dict(json.loads(text))


def load_config(path=None, preset_name: str | None = None) -> ExperimentConfig:
    base = preset(preset_name) if preset_name else ExperimentConfig()
    if path is None:
        return base
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, base)
