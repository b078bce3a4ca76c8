"""Sweep L1D size and branch predictor from one base checkpoint; compare predicted and oracle trends.

    python scripts/desk_scale.py --save base.ckpt
    python scripts/dse_sweep.py base.ckpt
"""

import argparse
import json

from tao.experiments import SweepConfig, sweep
from tao.nn import load_checkpoint
from tao.refsim import UARCH_A


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    args = ap.parse_args()

    base, _ = load_checkpoint(args.checkpoint)
    cfg = SweepConfig()
    log = lambda r: print(json.dumps(r), flush=True)
    out = [sweep(base, UARCH_A, "l1d.size", cfg.l1d_sizes, cfg, "l1d_mpki", log),
           sweep(base, UARCH_A, "branch_predictor", cfg.predictors, cfg, "branch_mpki", log)]
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
