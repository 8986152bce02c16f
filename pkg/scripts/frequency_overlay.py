"""Magnitude response of the nominal model and identified models, one CSV per channel."""

import argparse
from pathlib import Path

import numpy as np

from maglev_dfc.config import preset
from maglev_dfc.experiments import FREQ_GRID, frequency_overlay, identify
from maglev_dfc.sysid import save_frequency_response


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="hw-ivc", choices=["sim-ivb", "hw-ivc"])
    ap.add_argument("--out", default="runs/frequency")
    args = ap.parse_args(argv)
    cfg = preset(args.preset)
    models = {"nominal": cfg.design_model(), "reference": cfg.reference_model()}
    for run in identify(cfg):
        try:
            models[f"seed{run.seed}"] = run.pem.model
        except np.linalg.LinAlgError:
            print(f"seed {run.seed}: identified A is singular, skipped")
    out = Path(args.out)
    for i, j in ((0, 0), (1, 1)):
        for name, mag in frequency_overlay(models, i, j).items():
            save_frequency_response(out / f"freq_{name}_u{j + 1}_y{i + 1}.csv", FREQ_GRID, mag)
    print(f"wrote {len(models)} models x 2 channels to {out}")


if __name__ == "__main__":
    main()
