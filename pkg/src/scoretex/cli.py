"""Command-line front end.

    scoretex corpus      --out runs/corpus
    scoretex pretrain    --corpus runs/corpus --out runs/pretrain
    scoretex personalize --base CKPT --exemplars DIR --out runs/person
    scoretex transfer    --base CKPT --exemplars DIR --mesh target.obj --out runs/t0
    scoretex bake        --field runs/t0/field.pgsd --mesh target.obj --out runs/t0
    scoretex relight     --source runs/t0/field.pgsd --mesh target.obj --out runs/rl
    scoretex eval        DIR_A DIR_B
    scoretex ablate      --base CKPT --exemplars DIR --mesh target.obj --out runs/abl

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing input
artifact, 4 numerical failure (divergence / non-finite values).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import ConfigError, config_lines, default_config, load_config
from .diffusion import DivergenceError
from .meshes import MeshError
from .weights_io import WeightsFileError

log = logging.getLogger("scoretex")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="INI run configuration (defaults used if omitted)")
    common.add_argument("--seed", type=int, default=0, metavar="N")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--dry-run", action="store_true",
                        help="validate inputs and print the plan; write nothing")

    parser = argparse.ArgumentParser(
        prog="scoretex",
        description="Relightable texture transfer via personalized, "
                    "geometry-aware score distillation.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("corpus", parents=[common],
                   help="generate the captioned toy render corpus")

    p = sub.add_parser("pretrain", parents=[common],
                       help="train the normal-conditioned base diffusion model")
    p.add_argument("--corpus", required=True, metavar="DIR")
    p.add_argument("--no-resume", action="store_true",
                   help="ignore an existing checkpoint in --out")

    p = sub.add_parser("personalize", parents=[common],
                       help="fine-tune the base model on exemplar images")
    p.add_argument("--base", required=True, metavar="CKPT")
    p.add_argument("--exemplars", required=True, metavar="DIR")

    p = sub.add_parser("transfer", parents=[common],
                       help="full texture transfer onto a target mesh")
    p.add_argument("--base", required=True, metavar="CKPT")
    p.add_argument("--exemplars", required=True, metavar="DIR")
    p.add_argument("--mesh", required=True, metavar="OBJ")
    p.add_argument("--no-resume", action="store_true",
                   help="recompute stages even if checkpoints exist in --out")

    p = sub.add_parser("bake", parents=[common],
                       help="bake a field checkpoint into texture maps")
    p.add_argument("--field", required=True, metavar="CKPT")
    p.add_argument("--mesh", required=True, metavar="OBJ")

    p = sub.add_parser("relight", parents=[common],
                       help="re-render a finished texture under new lighting")
    p.add_argument("--source", required=True, metavar="PATH",
                   help="field checkpoint file or baked-maps directory")
    p.add_argument("--mesh", required=True, metavar="OBJ")
    p.add_argument("--preset", action="append", dest="presets", metavar="NAME",
                   help="lighting preset (repeatable; default: original + 2 novel)")

    p = sub.add_parser("eval", parents=[common],
                       help="appearance similarity between two render sets")
    p.add_argument("dirs", nargs="+", metavar="DIR")
    p.add_argument("--diversity", action="store_true",
                   help="treat each DIR as one run; report cross-run diversity")

    p = sub.add_parser("ablate", parents=[common],
                       help="run the transfer under several distillation variants")
    p.add_argument("--base", required=True, metavar="CKPT")
    p.add_argument("--exemplars", required=True, metavar="DIR")
    p.add_argument("--mesh", required=True, metavar="OBJ")
    p.add_argument("--modes", default="pgsd,sds,no-control", metavar="LIST",
                   help="comma-separated subset of: "
                        + ",".join(sorted(pipeline.ABLATION_MODES)))
    return parser


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command}: --out is required")
    return Path(args.out)


def _plan(args, cfg, inputs: dict) -> None:
    print(f"plan {args.command} seed {args.seed}")
    for name, value in inputs.items():
        note = ""
        if isinstance(value, (str, Path)):
            note = " (present)" if Path(value).exists() else " (MISSING)"
        print(f"input {name} {value}{note}")
    if args.out:
        print(f"output {args.out}")
    for line in config_lines(cfg):
        print(f"config {line}")


def _dispatch(args, cfg) -> int:
    cmd = args.command
    resume = not getattr(args, "no_resume", False)

    if cmd == "corpus":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {})
            return EXIT_OK
        data = pipeline.run_corpus(cfg, out, seed=args.seed)
        print(f"corpus {out} samples {data.count}")
        return EXIT_OK

    if cmd == "pretrain":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {"corpus": args.corpus})
            return EXIT_OK
        _, hl = pipeline.run_pretrain(cfg, args.corpus, out, seed=args.seed,
                                      resume=resume)
        print(f"pretrained {out / 'pretrained.pgsd'} heldout_loss {hl:.6f}")
        return EXIT_OK

    if cmd == "personalize":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {"base": args.base, "exemplars": args.exemplars})
            return EXIT_OK
        pipeline.run_personalize(cfg, args.base, args.exemplars, out,
                                 seed=args.seed)
        print(f"personalized {out / 'personalized.pgsd'}")
        return EXIT_OK

    if cmd == "transfer":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {"base": args.base, "exemplars": args.exemplars,
                              "mesh": args.mesh})
            return EXIT_OK
        result = pipeline.run_transfer(cfg, args.base, args.exemplars,
                                       args.mesh, out, seed=args.seed,
                                       resume=resume)
        print(result.report.to_lines(), end="")
        return EXIT_OK

    if cmd == "bake":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {"field": args.field, "mesh": args.mesh})
            return EXIT_OK
        baked = pipeline.run_bake(cfg, args.field, args.mesh, out)
        print(f"baked {out / 'baked'} resolution {baked.resolution}")
        return EXIT_OK

    if cmd == "relight":
        out = _require_out(args)
        if args.dry_run:
            _plan(args, cfg, {"source": args.source, "mesh": args.mesh})
            return EXIT_OK
        result = pipeline.run_relight(cfg, args.source, args.mesh, out,
                                      seed=args.seed, presets=args.presets)
        for line in result["lines"]:
            print(line)
        return EXIT_OK

    if cmd == "eval":
        if args.dry_run:
            _plan(args, cfg, {f"set_{i}": d for i, d in enumerate(args.dirs)})
            return EXIT_OK
        if args.diversity:
            if len(args.dirs) < 2:
                raise ConfigError("eval --diversity needs at least two run dirs")
            score = pipeline.run_diversity(args.dirs)
            print(f"diversity {score:.6f}")
        else:
            if len(args.dirs) != 2:
                raise ConfigError("eval expects exactly two image directories")
            out_path = Path(args.out) / "eval.txt" if args.out else None
            if out_path is not None:
                out_path.parent.mkdir(parents=True, exist_ok=True)
            score = pipeline.run_eval(args.dirs[0], args.dirs[1], out_path)
            print(f"appearance_similarity {score:.6f}")
        return EXIT_OK

    if cmd == "ablate":
        out = _require_out(args)
        modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
        for m in modes:
            if m not in pipeline.ABLATION_MODES:
                raise ConfigError(f"unknown ablation mode {m!r}")
        if args.dry_run:
            _plan(args, cfg, {"base": args.base, "exemplars": args.exemplars,
                              "mesh": args.mesh, "modes": ",".join(modes)})
            return EXIT_OK
        results = pipeline.run_ablate(cfg, args.base, args.exemplars, args.mesh,
                                      out, seed=args.seed, modes=modes)
        for name, score in results.items():
            print(f"mode {name} similarity {score:.6f}")
        return EXIT_OK

    raise ConfigError(f"unknown command {cmd!r}")  # unreachable via argparse


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    torch.set_num_threads(1)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        return _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.ArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FileNotFoundError, WeightsFileError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
