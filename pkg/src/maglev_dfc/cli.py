"""Command line: ``maglev-dfc {design,train,identify,compare,simulate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure,
4 insufficient excitation.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import PRESETS, ConfigError, ExperimentConfig, load_config
from .design import DesignError, NotStabilizingError, dfc_are_residual
from .experiments import (FREQ_GRID, Controller, compare, design, frequency_overlay, identify,
                          standard_controllers, train)
from .formats import load_json, matrix_from_doc, save_json
from .linmodel import SingularLoopError, StateSpaceModel
from .mfpi import EpochAborted, InsufficientExcitation, PiNotConverged, save_trace
from .sim import SimulationDiverged, simulate_dfc_closed_loop
from .sysid import DegenerateData, IdentifiedModel, save_frequency_response

log = logging.getLogger("maglev_dfc")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_EXCITATION = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _manifest(cfg: ExperimentConfig, command: str, argv, outputs, elapsed: float) -> dict:
    return {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seeds": {"global": cfg.seed, "excitation": cfg.seed, "noise": cfg.seed + 1000,
                  "identify": list(cfg.identify_seeds)},
        "versions": {"maglev_dfc": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "elapsed_s": elapsed,
        "outputs": [str(p) for p in outputs],
    }


def _model_from_file(path) -> StateSpaceModel:
    doc = load_json(path)
    if "A" not in doc or "B" not in doc:
        raise UsageError(f"{path} holds no A/B model")
    ident = IdentifiedModel.from_dict(doc) if "q_used" in doc else None
    if ident is not None and not ident.is_designable:
        raise DesignError("identified A is singular; derivative-feedback design needs A^-1")
    return StateSpaceModel(matrix_from_doc(doc["A"]), matrix_from_doc(doc["B"]))


def cmd_design(cfg: ExperimentConfig, args, out: Path) -> list:
    model = _model_from_file(args.model) if args.model else None
    if not np.any(cfg.weights.Q):
        log.warning("Q = 0: the zero gain is optimal only if A is Hurwitz")
    dfc, sf = design(cfg, model)
    m = model or cfg.design_model()
    outputs = [
        save_json(out / "design.json", {**dfc.to_dict(), "are_residual": dfc_are_residual(m, cfg.weights, dfc.P),
                                        "A": m.A, "B": m.B}),
        Controller("K_ARE", "dfc", dfc.K).save(out / "gain_are.json"),
        Controller("K_LQR", "sf", sf.K).save(out / "gain_lqr.json"),
    ]
    print(f"K_ARE =\n{np.array2string(dfc.K, precision=4, suppress_small=True)}")
    print(f"Riccati residual {dfc.residual:.2e} after {dfc.iterations} policy-iteration steps")
    return outputs


def cmd_train(cfg: ExperimentConfig, args, out: Path) -> list:
    def report(rec):
        print(f"epoch {rec.epoch}: cost {rec.cost:.6g}  dV {rec.dV:.3g}  inner iterations {len(rec.inner)}")
    try:
        trace = train(cfg, on_epoch=report)
    except (EpochAborted, PiNotConverged, InsufficientExcitation) as exc:
        partial = getattr(exc, "epoch_trace", None)
        if partial is None and isinstance(exc, EpochAborted):
            partial = exc.trace
        if partial is not None:
            save_trace(partial, out / "partial")
        raise
    outputs = save_trace(trace, out)
    outputs.append(Controller("K_trained", "dfc", trace.K).save(out / "gain_trained.json"))
    print(f"initial cost {trace.V0:.6g}; final cost {trace.costs[-1]:.6g} after {len(trace)} epochs")
    return outputs


def cmd_identify(cfg: ExperimentConfig, args, out: Path) -> list:
    runs = identify(cfg)
    ref = cfg.reference_model()
    outputs = []
    models = {"nominal": cfg.design_model()}
    summary = []
    for run in runs:
        tag = f"seed{run.seed}"
        outputs.append(save_json(out / f"identified_{tag}.json", run.dmdc.to_dict()))
        outputs.append(save_json(out / f"pem_{tag}.json", run.pem.to_dict()))
        if run.controller is not None:
            outputs.append(run.controller.save(out / f"gain_id_{tag}.json"))
        rec = run.recovery(ref)
        summary.append({"seed": run.seed, "q_used": run.dmdc.q_used, "j_initial": run.pem.j_initial,
                        "j_final": run.pem.j_final, "design_error": run.error, **rec})
        print(f"{tag}: q = {run.dmdc.q_used}, PEM cost {run.pem.j_initial:.3e} -> {run.pem.j_final:.3e}, "
              f"|dA|/|A| = {rec['pem_A']:.2e}, |dB|/|B| = {rec['pem_B']:.2e}")
        try:
            models[tag] = run.pem.model
        except np.linalg.LinAlgError:
            pass
    for name, mag in frequency_overlay(models).items():
        outputs.append(save_frequency_response(out / f"freq_{name}_u1_y1.csv", FREQ_GRID, mag))
    outputs.append(save_json(out / "identify_report.json", {"runs": summary, "reference_A": ref.A,
                                                            "reference_B": ref.B}))
    return outputs


def cmd_compare(cfg: ExperimentConfig, args, out: Path) -> list:
    if args.standard:
        controllers = standard_controllers(cfg)
    else:
        controllers = []
    controllers += [Controller.load(p) for p in args.gains]
    if not controllers:
        raise UsageError("compare needs at least one gain file (or --standard)")
    for c in controllers:
        if c.K.shape != (2, 4):
            raise UsageError(f"gain {c.label!r} is {c.K.shape}; the maglev plant needs (2, 4)")
    report = compare(cfg, controllers)
    outputs = [save_json(out / "comparison.json", report.to_dict())]
    for label, traj in report.trajectories.items():
        outputs.append(traj.to_csv(out / "trajectories" / f"{label}.csv"))
    for r in report.records:
        print(f"{r.label:>14s} [{r.kind}] cost {r.cost:.5g}  offset {r.final_offset:.2e}  "
              f"|u_end| {r.terminal_u:.2e}  margin {r.hurwitz_margin:.3g}")
    return outputs


def cmd_simulate(cfg: ExperimentConfig, args, out: Path) -> list:
    K = Controller.load(args.gain).K if args.gain else cfg.initial_gain_matrix()
    duration = args.duration if args.duration is not None else cfg.pi.window
    if duration <= 0:
        raise UsageError("duration must be positive")
    traj = simulate_dfc_closed_loop(cfg.build_plant(), K, np.array(cfg.x0, dtype=float), cfg.T_s,
                                    duration, cfg.excitation_for(0), cfg.measurement(), cfg.substeps)
    return [traj.to_csv(out / "trajectory.csv")]


COMMANDS = {"design": cmd_design, "train": cmd_train, "identify": cmd_identify,
            "compare": cmd_compare, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (overrides the preset)")
    common.add_argument("--preset", choices=PRESETS, help="protocol preset")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="maglev-dfc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("design", parents=[common], help="optimal derivative-feedback gain from a model")
    d.add_argument("--model", help="model file with A and B (e.g. an identified model)")
    sub.add_parser("train", parents=[common], help="multi-epoch model-free policy iteration")
    sub.add_parser("identify", parents=[common], help="DMDc + PEM identification and indirect design")
    c = sub.add_parser("compare", parents=[common], help="evaluate gains on a shared biased scenario")
    c.add_argument("gains", nargs="*", help="gain files (JSON with label, kind, K)")
    c.add_argument("--standard", action="store_true", help="include the nominal K_ARE and K_LQR")
    s = sub.add_parser("simulate", parents=[common], help="one excited closed-loop run")
    s.add_argument("--gain", help="gain file (default: the configured initial gain)")
    s.add_argument("--duration", type=float)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
        out = Path(args.out or cfg.out_dir)
        t0 = time.perf_counter()
        outputs = COMMANDS[args.command](cfg, args, out)
        save_json(out / f"manifest_{args.command}.json",
                  _manifest(cfg, args.command, argv, outputs, time.perf_counter() - t0))
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientExcitation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXCITATION
    except (DesignError, NotStabilizingError, SingularLoopError, DegenerateData, SimulationDiverged,
            PiNotConverged, EpochAborted, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
