"""Hardware-like re-enactment: mismatched nonlinear plant, filtered noisy data, biased sensing."""

import argparse
from pathlib import Path

import numpy as np

from maglev_dfc.config import preset
from maglev_dfc.experiments import train
from maglev_dfc.linmodel import closed_loop_matrix, hurwitz_margin
from maglev_dfc.mfpi import save_trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/hw-protocol")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    cfg = preset("hw-ivc").with_overrides(seed=args.seed)
    ref = cfg.reference_model()
    trace = train(cfg, on_epoch=lambda r: print(
        f"epoch {r.epoch}: cost {r.cost:.6e}  dV {r.dV:.2e}  inner iterations {len(r.inner)}  "
        f"margin {hurwitz_margin(closed_loop_matrix(ref, r.K)):.3f}", flush=True))
    save_trace(trace, Path(args.out))
    print(f"V0 {trace.V0:.6e} -> final {trace.costs[-1]:.6e}, converged {trace.converged}")
    print("final gain:\n" + np.array2string(trace.K, precision=4))


if __name__ == "__main__":
    main()
