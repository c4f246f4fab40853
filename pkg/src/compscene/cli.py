"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import PipelineConfig, load_config
from .errors import CheckpointError, ConfigError, DomainError
from .pipeline import StageError, benchmark_render, make_run_dir, plan_only, render_turntable, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--prompt", help="scene prompt (overrides the config)")
    p.add_argument("--offline", action="store_true", default=None, help="never contact the director endpoint")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    p.add_argument("--out", help="output directory for run folders")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compscene", description="Compositional dynamic scene generation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run the full pipeline")
    _common(gen)
    traj = sub.add_parser("trajectory", help="decompose the prompt and plan the trajectory only")
    _common(traj)

    ren = sub.add_parser("render", help="render a checkpoint from several azimuths")
    ren.add_argument("--checkpoint", required=True)
    ren.add_argument("--views", type=float, nargs="*", default=[0.0, 90.0, 180.0, 270.0])
    ren.add_argument("--timesteps", type=float, nargs="*")
    ren.add_argument("--resolution", type=int, nargs=2, default=[320, 576], metavar=("H", "W"))
    ren.add_argument("--out", required=True)

    bench = sub.add_parser("bench", help="measure rendering frames per second")
    bench.add_argument("--checkpoint", required=True)
    bench.add_argument("--resolution", type=int, nargs=2, default=[320, 576], metavar=("H", "W"))
    bench.add_argument("--frames", type=int, default=10)
    bench.add_argument("--out", help="write the report JSON here")
    return parser


def resolve_config(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.prompt is not None and args.seed is not None:
        cfg = PipelineConfig(scene_prompt=args.prompt, seed=args.seed)
    else:
        raise ConfigError("give --config, or both --prompt and --seed")
    changes = {}
    if args.prompt is not None:
        changes["scene_prompt"] = args.prompt
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.offline:
        changes["offline"] = True
    if args.out is not None:
        changes["output_dir"] = args.out
    return replace(cfg, **changes) if changes else cfg


def _progress(phase: str, it: int) -> None:
    if it % 10 == 0:
        logging.getLogger("compscene").info("%s iteration %d", phase, it)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command in ("generate", "trajectory"):
            cfg = resolve_config(args)
            run_dir = make_run_dir(cfg.output_dir, cfg.seed)
            if args.command == "generate":
                run_pipeline(cfg, run_dir, _progress)
            else:
                plan_only(cfg, run_dir)
            print(run_dir)
        elif args.command == "render":
            images = render_turntable(args.checkpoint, args.views, args.timesteps,
                                      resolution=tuple(args.resolution), out_dir=args.out)
            print(f"{len(images)} images written to {args.out}")
        else:
            report = benchmark_render(args.checkpoint, tuple(args.resolution), args.frames)
            text = json.dumps(report, indent=2, sort_keys=True)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"{exc} (partial artifacts in {exc.run_dir})", file=sys.stderr)
        return EXIT_STAGE
    except (CheckpointError, DomainError) as exc:
        print(f"stage 'render' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
