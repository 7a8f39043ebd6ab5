"""Command line entry point: train, generate, adapt, evaluate, synth-data, inspect.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import TalkingHeadError, ValidationError

log = logging.getLogger("talkinghead")


def _load_identity(path):
    from .data import read_frame, to_unit
    from .generator import IdentityImage

    return IdentityImage.from_array(np.moveaxis(to_unit(read_frame(path)), 0, -1))


def cmd_train(args) -> int:
    from .config import load_config
    from .curriculum import ABLATIONS, train

    cfg = load_config(args.config)
    if args.ablation:
        cfg = cfg.replace(**{"train.max_phase": ABLATIONS[args.ablation]})
    paths = train(args.manifest, cfg, args.out, resume=args.resume)
    print(json.dumps({"checkpoints": [str(p) for p in paths]}))
    return 0


def _model_from_ckpt(path):
    from .checkpoint import load_checkpoint
    from .config import Config
    from .fewshot import _load_model

    ck = load_checkpoint(path)
    cfg = Config.from_dict(ck.config)
    model, _ = _load_model(ck, cfg)
    return model, cfg


def cmd_generate(args) -> int:
    from .audio import read_wav
    from .data import assemble_video, to_uint8
    from .generator import generate_video

    model, cfg = _model_from_ckpt(args.ckpt)
    ident = _load_identity(args.image)
    wav = read_wav(args.audio)
    frames = generate_video(wav, ident, model)
    path = assemble_video([to_uint8(f.pixels) for f in frames], wav, args.out, cfg.audio.fps)
    print(json.dumps({"video": str(path), "frames": len(frames)}))
    return 0


def cmd_adapt(args) -> int:
    from .audio import read_wav
    from .checkpoint import load_checkpoint, save_checkpoint
    from .config import AdaptConfig, Config
    from .fewshot import adapt

    ck = load_checkpoint(args.ckpt)
    base = Config.from_dict(ck.config).adapt
    acfg = AdaptConfig(epochs=args.epochs if args.epochs is not None else base.epochs,
                       lr=args.lr if args.lr is not None else base.lr,
                       scope=args.scope or base.scope, batch_size=base.batch_size,
                       allow_untrained=args.allow_untrained or base.allow_untrained)
    res = adapt(args.ckpt, _load_identity(args.image), read_wav(args.audio), acfg)
    save_checkpoint(res.checkpoint, args.out)
    print(json.dumps({"checkpoint": args.out, "perceptual_loss": res.loss_history}))
    return 0


def _clip_dirs(root: Path) -> dict:
    """Map clip id -> frame directory; ``root`` is one clip or a directory of clips."""
    from .data import list_frames

    def frames_dir(d):
        return d / "frames" if (d / "frames").is_dir() else d

    if list_frames(frames_dir(root)):
        return {root.name: frames_dir(root)}
    return {d.name: frames_dir(d) for d in sorted(root.iterdir()) if d.is_dir() and list_frames(frames_dir(d))}


def _dirs_from_manifest(path: Path) -> dict:
    from .data import load_manifest

    rep = load_manifest(path)
    return {e.clip_id: e.frames_path for e in rep.entries}


def cmd_evaluate(args) -> int:
    from .data import list_frames, read_frame, read_landmarks
    from .losses import FeatureExtractor, mean_ear
    from .metrics import evaluate_clip, extractor_embedder

    def resolve(p):
        p = Path(p)
        return _dirs_from_manifest(p) if p.is_file() else _clip_dirs(p)

    gen, ref = resolve(args.generated), resolve(args.reference)
    if len(gen) == 1 and len(ref) == 1:
        ref = {next(iter(gen)): next(iter(ref.values()))}
    embedder = extractor_embedder(FeatureExtractor(weights=args.extractor_weights))
    embedder_name = "extractor:" + (args.extractor_weights or "random-seed-1234")
    wer = {}
    if args.wer_predictions:
        with open(args.wer_predictions) as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    wer[rec["clip_id"]] = float(rec["wer"])
    records, n_err = [], 0
    for clip_id, gdir in gen.items():
        try:
            if clip_id not in ref:
                raise ValidationError(f"no reference clip named {clip_id}")
            g = [read_frame(p) for p in list_frames(gdir)]
            r = [read_frame(p) for p in list_frames(ref[clip_id])]
            lm_path = Path(ref[clip_id]).parent / "landmarks.txt"
            ears = mean_ear(read_landmarks(lm_path)) if lm_path.is_file() else None
            rep = evaluate_clip(clip_id, g, r, embedder, embedder_name, ears)
            rep.wer = wer.get(clip_id)
            records.append(rep.to_record())
        except TalkingHeadError as e:
            n_err += 1
            records.append({"clip_id": clip_id, "error": type(e).__name__, "detail": str(e)})
    ok = [r for r in records if "error" not in r]

    def agg(key):
        vals = [r["mean"][key] for r in ok if r["mean"][key] is not None]
        return float(np.mean(vals)) if vals else None

    aggregate = {"aggregate": True, "clips": len(ok), "errors": n_err,
                 "ssim": agg("ssim"), "psnr_db": agg("psnr_db"), "cpbd": agg("cpbd"),
                 "acd_cosine": float(np.mean([r["acd_cosine"] for r in ok])) if ok else None,
                 "acd_euclidean": float(np.mean([r["acd_euclidean"] for r in ok])) if ok else None,
                 "embedder": embedder_name}
    with open(args.report, "w") as f:
        for rec in records + [aggregate]:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    print(json.dumps(aggregate))
    return 1 if n_err else 0


def cmd_synth(args) -> int:
    from .data import make_synthetic_corpus

    path = make_synthetic_corpus(args.n, args.seed, args.out)
    print(json.dumps({"manifest": str(path)}))
    return 0


def cmd_inspect(args) -> int:
    from .checkpoint import load_checkpoint

    ck = load_checkpoint(args.ckpt)
    namespaces: dict = {}
    for name, t in ck.tensors.items():
        ns = ".".join(name.split(".")[:2]) if name.startswith(("disc.", "aux.", "opt.")) else name.split(".")[0]
        namespaces[ns] = namespaces.get(ns, 0) + t.numel()
    info = {"version": ck.version, "fingerprint": ck.fingerprint, "state": ck.state,
            "parameters": namespaces, "adaptation": ck.meta.get("adaptation")}
    print(json.dumps(info, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="talkinghead", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run the three-phase curriculum")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ablation", choices=["BM", "BM+CL+TAL", "BM+CL+TAL+BL"])
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate frames for an image and an audio file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("adapt", help="fine-tune the generator to an unseen face")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--scope", choices=["all_generator", "modulation_only"])
    s.add_argument("--allow-untrained", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("evaluate", help="PSNR/SSIM/CPBD/ACD report for generated vs reference frames")
    s.add_argument("--generated", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--extractor-weights")
    s.add_argument("--wer-predictions", help="JSON lines with clip_id and wer from an external lipreader")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth-data", help="render a synthetic training corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect", help="summarize a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (TalkingHeadError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
