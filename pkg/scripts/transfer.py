"""Shared embeddings on the two most divergent sampled designs, then fine-tune vs. scratch on a third."""

import argparse
import json
from dataclasses import replace

from tao.experiments import TransferConfig, transfer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scratch-epochs", type=int, default=None)
    ap.add_argument("--shared-epochs", type=int, default=None)
    ap.add_argument("--fraction", type=float, default=None, help="fine-tune share of the scratch dataset")
    args = ap.parse_args()

    cfg = TransferConfig()
    over = {k: v for k, v in (("scratch_epochs", args.scratch_epochs), ("shared_epochs", args.shared_epochs),
                              ("finetune_fraction", args.fraction)) if v is not None}
    res = transfer(replace(cfg, **over), log=lambda r: print(json.dumps(r), flush=True))
    for k in ("scratch_history", "finetune_history", "shared_history"):
        res.pop(k)
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
