#!/usr/bin/env python3
"""Draw ancestral samples from a denoiser checkpoint (sanity visualization).

Writes sample_00.png, sample_01.png, ... under --out.  Pass --prompt to
condition on a caption; with --control-from a corpus directory, samples are
additionally conditioned on normal maps drawn from it.
"""

import argparse
import logging
from pathlib import Path

import numpy as np
import torch

from scoretex.corpus import load_corpus
from scoretex.diffusion import build_schedule, encode_prompt, load_denoiser, null_prompt, sample
from scoretex.imageio import write_png


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--prompt", default="",
                    help='caption, e.g. "a photo of red checker cube front"')
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--guidance", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--control-from", metavar="CORPUS_DIR",
                    help="condition on normal maps from this corpus")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)
    model, meta = load_denoiser(args.checkpoint)
    sp = meta.get("schedule")
    schedule = build_schedule(sp["timesteps"], sp["beta_start"], sp["beta_end"]) \
        if sp else build_schedule()
    tokens = encode_prompt(args.prompt) if args.prompt else null_prompt()

    controls = None
    if args.control_from:
        data = load_corpus(args.control_from)
        controls = data.conditions()["normal"]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        control = None
        if controls is not None:
            pick = controls[int(rng.integers(0, len(controls)))]
            control = torch.as_tensor(pick, dtype=torch.float32) \
                .permute(2, 0, 1).unsqueeze(0)
        img = sample(model, schedule, tokens, rng, resolution=args.resolution,
                     steps=args.steps, guidance_weight=args.guidance,
                     control=control)
        write_png(out / f"sample_{i:02d}.png", img)
        print(f"wrote {out / f'sample_{i:02d}.png'}")


if __name__ == "__main__":
    main()
