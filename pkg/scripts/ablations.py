"""Train the three nested loss configurations on one synthetic corpus and compare them.

    python scripts/ablations.py --clips 40 --epochs 2 --out runs/ablations

Prints the logged active-loss sets per run and PSNR/SSIM/sync numbers on held-out clips.
"""
import argparse
import json
import logging

import numpy as np

from talkinghead import checkpoint as ckio
from talkinghead.config import load_config
from talkinghead.curriculum import ABLATIONS, Trainer, train
from talkinghead.data import load_dataset, make_synthetic_corpus
from talkinghead.diagnostics import generate_clip, sync_distances
from talkinghead.metrics import psnr, ssim


def measure(ckpt, clips):
    tr = Trainer.from_checkpoint(ckio.load_checkpoint(ckpt))
    p, s = [], []
    for clip in clips:
        fake = generate_clip(tr.model, clip)
        p += [psnr(a, b) for a, b in zip(clip.frames, fake)]
        s += [ssim(a, b) for a, b in zip(clip.frames, fake)]
    matched, mismatched = sync_distances(tr.sync_d, clips, offset=None)
    return {"psnr_db": float(np.mean(p)), "ssim": float(np.mean(s)),
            "sync_gap": float(mismatched.mean() - matched.mean())}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--clips", type=int, default=40)
    ap.add_argument("--heldout", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=2, help="epoch cap per phase")
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/ablations")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config).replace(**{"train.phase_max_epochs": [args.epochs] * 3,
                                              "train.phase_min_epochs": 1})
    train_m = make_synthetic_corpus(args.clips, 3, f"{args.out}/corpus")
    held_m = make_synthetic_corpus(args.heldout, 1003, f"{args.out}/heldout")
    clips = load_dataset(train_m, cfg.audio)
    held = load_dataset(held_m, cfg.audio)
    results = {}
    for flag, max_phase in ABLATIONS.items():
        paths = train(train_m, cfg.replace(**{"train.max_phase": max_phase}), f"{args.out}/{flag}", clips=clips)
        st = ckio.load_checkpoint(paths[-1]).state
        results[flag] = {"active_losses": st["active_losses"], **measure(paths[-1], held)}
    print(json.dumps(results, indent=1))


if __name__ == "__main__":
    main()
