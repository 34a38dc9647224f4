import argparse
import logging
import sys
from typing import List, Optional

from api.commands import cmd_benchmark, cmd_export_plot, cmd_gen_natset, cmd_project
from core import __version__
from core.config import settings


def _add_projection_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--gamma", type=float, help="control regularization weight")
    parser.add_argument("--mip-gap", dest="mip_gap", type=float)
    parser.add_argument("--time-limit", dest="time_limit", type=float, help="seconds")
    parser.add_argument("--node-limit", dest="node_limit", type=int)
    parser.add_argument("--binary-mode", dest="binary_mode",
                        choices=["exactly_one", "at_least_one"])
    parser.add_argument("--big-m", dest="big_m", type=float,
                        help="fixed big-M constant (switches off the automatic per-row value)")
    parser.add_argument("--workers", type=int, help="threads for child relaxations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natset",
        description="Learn multimodal naturalistic sets from trajectories and project "
                    "candidate trajectories into them.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.log_level,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-natset", help="build a naturalistic set from a dataset")
    gen.add_argument("--config", required=True, help="PipelineConfig JSON")
    gen.add_argument("--out", help="output directory")
    gen.add_argument("--seed", type=int, help="seed for the clusterer and synthetic data")
    gen.add_argument("--workers", type=int, help="frames clustered in parallel")

    proj = sub.add_parser("project", help="project one trajectory into a naturalistic set")
    proj.add_argument("--natset", required=True)
    source = proj.add_mutually_exclusive_group(required=True)
    source.add_argument("--traj", help="trajectory CSV")
    source.add_argument("--synth", help="ScenarioSpec JSON")
    proj.add_argument("--traj-id", dest="traj_id", help="actor id to project")
    proj.add_argument("--index", type=int, default=0, help="trajectory index when no id is given")
    proj.add_argument("--config", help="PipelineConfig JSON whose projection block is the base")
    proj.add_argument("--frame-skip", dest="frame_skip", type=int)
    proj.add_argument("--downsample", type=int)
    proj.add_argument("--out")
    _add_projection_flags(proj)

    plot = sub.add_parser("export-plot", help="export polygons and trajectories for plotting")
    plot.add_argument("--natset", required=True)
    plot.add_argument("--frames", default="", help="comma-separated frame indices")
    plot.add_argument("--results", default="", help="comma-separated result.json files")
    plot.add_argument("--out")

    bench = sub.add_parser("benchmark", help="sweep frame skip and downsample rate")
    bench.add_argument("--natset", required=True)
    bsource = bench.add_mutually_exclusive_group(required=True)
    bsource.add_argument("--trajs", help="comma-separated trajectory CSVs")
    bsource.add_argument("--synth", help="ScenarioSpec JSON")
    bench.add_argument("--count", type=int, help="project only the first N trajectories")
    bench.add_argument("--frame-skips", dest="frame_skips", default="1,2,4,8")
    bench.add_argument("--downsamples", default="1")
    bench.add_argument("--out")
    _add_projection_flags(bench)
    return parser


def _projection_overrides(args: argparse.Namespace) -> dict:
    overrides = {k: getattr(args, k) for k in
                 ("gamma", "mip_gap", "time_limit", "node_limit", "binary_mode", "workers")}
    if args.big_m is not None:
        overrides.update(big_m=args.big_m, big_m_mode="fixed")
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "gen-natset":
        return cmd_gen_natset(args.config, out_dir=args.out, seed=args.seed, workers=args.workers)
    if args.command == "project":
        return cmd_project(args.natset, traj=args.traj, synth=args.synth, traj_id=args.traj_id,
                           index=args.index, config_path=args.config, out_dir=args.out,
                           frame_skip=args.frame_skip, downsample=args.downsample,
                           **_projection_overrides(args))
    if args.command == "export-plot":
        return cmd_export_plot(args.natset, frames=args.frames, results=args.results,
                               out_dir=args.out)
    return cmd_benchmark(args.natset, trajs=args.trajs, synth=args.synth, count=args.count,
                         frame_skips=args.frame_skips, downsamples=args.downsamples,
                         out_dir=args.out, **_projection_overrides(args))


if __name__ == "__main__":
    sys.exit(main())
