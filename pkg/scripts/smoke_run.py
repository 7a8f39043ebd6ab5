"""Desk-scale curriculum run on a synthetic corpus, with post-training measurements.

    python scripts/smoke_run.py --clips 200 --out runs/smoke
"""
import argparse
import json
import logging

from talkinghead.config import load_config
from talkinghead.smoke import run_smoke


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--clips", type=int, default=200)
    ap.add_argument("--heldout", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--set", nargs="*", default=[], help="dotted overrides, e.g. train.batch_size=8")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    overrides = {}
    for item in args.set:
        k, v = item.split("=", 1)
        overrides[k] = json.loads(v)
    cfg = cfg.replace(**{"train.seed": args.seed, **overrides})
    summary = run_smoke(args.out, cfg, args.clips, args.heldout)
    print(json.dumps({k: v for k, v in summary.items() if k not in ("checkpoints", "mouth_r")}, indent=1))


if __name__ == "__main__":
    main()
