"""Train on four programs for the default core and score two held-out programs.

    python scripts/desk_scale.py --epochs 12 --save model.ckpt
"""

import argparse
import json
from dataclasses import replace

from tao.experiments import DeskScaleConfig, desk_scale
from tao.nn import save_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="write the trained model checkpoint here")
    args = ap.parse_args()

    cfg = DeskScaleConfig(seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    res = desk_scale(cfg, log=lambda r: print(json.dumps(r), flush=True))
    model = res.pop("model")
    if args.save:
        save_checkpoint(model, args.save, extra={"experiment": "desk_scale", "seed": args.seed})
    res.pop("history")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
