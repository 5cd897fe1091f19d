"""Command line: ``lidarodom {run,eval,synth,info}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as config_mod
from .errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path):
    return config_mod.load(path) if path else config_mod.PipelineConfig()


def cmd_run(args):
    from .fileio import load_manifest, run_pipeline

    cfg = _load_config(args.config)
    manifest = load_manifest(args.input, period=args.period)
    summary = run_pipeline(
        manifest, cfg, traj_out=args.traj_out, map_out=args.map_out, log_out=args.log, report_out=args.report
    )
    r = summary.report
    keys = ("frames_processed", "frames_skipped", "map_updates", "registration_failures", "endpoint_distance", "ate_rmse")
    print(json.dumps({k: r[k] for k in keys if k in r}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    from .evaluation import ate_rmse, endpoint_distance
    from .fileio import read_trajectory

    est = read_trajectory(args.est)
    if args.metric == "endpoint":
        value = endpoint_distance(est)
    else:
        if not args.gt:
            raise UsageError("--gt is required for --metric ate")
        value = ate_rmse(est, read_trajectory(args.gt), args.alignment, args.max_dt)
    print(f"{args.metric} {value:.6f}")
    return EXIT_OK


def cmd_synth(args):
    from . import synth
    from .evaluation import Trajectory
    from .fileio import write_sequence

    params = synth.SceneParams(rows=args.rows, trees_per_row=args.trees_per_row)
    scene = synth.generate_scene(args.layout, params, seed=args.seed)
    wp = synth.pattern_waypoints(args.pattern, scene)
    profile = synth.MotionProfile.from_waypoints(
        wp, speed=args.speed, yaw_rate=args.yaw_rate, pitch_amplitude=args.pitch_amplitude, pitch_frequency=2.0
    )
    lidar = synth.LidarModel(noise_sigma=args.noise)
    n = args.frames or int(profile.duration / lidar.scan_period) + 1
    frames, poses = synth.simulate_sequence(scene, profile, n, lidar, distort=args.distort, seed=args.seed)
    write_sequence(args.out, frames, Trajectory([f.stamp for f in frames], poses))
    print(f"wrote {n} frames to {args.out}")
    return EXIT_OK


def cmd_info(args):
    sys.stdout.write(config_mod.dumps(_load_config(args.config)))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="lidarodom", description="LiDAR odometry and mapping with two-stage GICP.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run the pipeline over a sequence directory")
    r.add_argument("--input", required=True, metavar="DIR")
    r.add_argument("--config", metavar="FILE")
    r.add_argument("--traj-out", default="trajectory.txt", metavar="FILE")
    r.add_argument("--map-out", metavar="FILE")
    r.add_argument("--log", metavar="FILE", help="per-frame timing log")
    r.add_argument("--report", metavar="FILE", help="JSON run report")
    r.add_argument("--period", type=float, default=0.1, help="frame spacing when there is no frames.txt")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="compare trajectory files")
    e.add_argument("--est", required=True, metavar="FILE")
    e.add_argument("--gt", metavar="FILE")
    e.add_argument("--metric", choices=("ate", "endpoint"), default="ate")
    e.add_argument("--alignment", choices=config_mod.ALIGNMENTS, default="rigid")
    e.add_argument("--max-dt", type=float, default=0.05)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic sequence")
    s.add_argument("--pattern", choices=("single-round", "lawn-mower", "cross-trees"), default="single-round")
    s.add_argument("--layout", choices=("in-row", "uniform", "mixture"), default="in-row")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--frames", type=int, help="default: the whole path")
    s.add_argument("--rows", type=int, default=3)
    s.add_argument("--trees-per-row", type=int, default=8)
    s.add_argument("--speed", type=float, default=2.0, help="m/s")
    s.add_argument("--yaw-rate", type=float, default=45.0, help="deg/s")
    s.add_argument("--pitch-amplitude", type=float, default=0.0, help="deg")
    s.add_argument("--noise", type=float, default=0.01, help="range noise sigma, m")
    s.add_argument("--distort", action="store_true")
    s.set_defaults(func=cmd_synth)

    i = sub.add_parser("info", help="print the resolved configuration")
    i.add_argument("--config", metavar="FILE")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("lidarodom: a command is required (run, eval, synth, info)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
