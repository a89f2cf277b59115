#!/usr/bin/env python3
"""Build the toy corpus and pretrain the normal-conditioned base denoiser.

Produces, under --out:
    corpus/           captioned renders + condition maps + manifest
    pretrained.pgsd   base model checkpoint (with control branch)
    pretrain_log.txt  loss rows, one per log interval

This is the model every downstream command (personalize / transfer /
ablate) starts from.  Expect roughly 15-20 minutes on a single CPU core at
the default desk-scale settings.
"""

import argparse
import logging
import time
from pathlib import Path

import torch

from scoretex import pipeline
from scoretex.config import default_config, load_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--config", help="INI run config (defaults if omitted)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fresh", action="store_true",
                    help="ignore an existing checkpoint instead of resuming")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)
    cfg = load_config(args.config) if args.config else default_config()

    out = Path(args.out)
    corpus_dir = out / "corpus"
    t0 = time.time()
    if not (corpus_dir / "corpus.npz").exists():
        pipeline.run_corpus(cfg, corpus_dir, seed=args.seed)
    _, heldout = pipeline.run_pretrain(cfg, corpus_dir, out, seed=args.seed,
                                       resume=not args.fresh)
    print(f"done in {time.time() - t0:.0f}s; held-out loss {heldout:.4f}")
    print(f"checkpoint: {out / 'pretrained.pgsd'}")


if __name__ == "__main__":
    main()
