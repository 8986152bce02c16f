"""Biased-sensing comparison of derivative feedback (nominal, trained, identified) and state feedback."""

import argparse
from pathlib import Path

from maglev_dfc.config import preset
from maglev_dfc.experiments import compare, identify, standard_controllers, train
from maglev_dfc.formats import save_json


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="sim-ivb", choices=["sim-ivb", "hw-ivc"])
    ap.add_argument("--out", default="runs/equilibrium")
    args = ap.parse_args(argv)
    out = Path(args.out)
    cfg = preset(args.preset)
    ctrls = standard_controllers(cfg, train(cfg), identify(cfg))
    rep = compare(cfg, ctrls)
    save_json(out / "comparison.json", rep.to_dict())
    for label, tr in rep.trajectories.items():
        tr.to_csv(out / "trajectories" / f"{label}.csv")
    print(f"bias {rep.bias}")
    for r in rep.records:
        print(f"{r.label:14s} {r.kind:3s} cost {r.cost:.4e}  offset {r.final_offset:.2e}  "
              f"terminal |u| {r.terminal_u:.2e}  stable {r.stable}")


if __name__ == "__main__":
    main()
