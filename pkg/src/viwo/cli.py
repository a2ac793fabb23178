"""Command-line interface: ``viwo simulate | run | evaluate | sweep``.

Exit codes: 0 success, 1 configuration error, 2 dataset error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import RunConfig, default_config, dump_yaml, load_config, load_yaml
from .dataset import GT_FILE, read_tum
from .errors import ConfigError, DatasetError, InsufficientOverlap, ViwoError
from .evaluation import evaluate_ate
from .replay import run_replay
from .sim import PRESETS, SimConfig, preset, simulate

logger = logging.getLogger("viwo")

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which collides with the dataset code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _sim_config(args) -> SimConfig:
    if args.config:
        cfg = load_yaml(SimConfig, args.config)
        if args.seed is not None:
            cfg.with_seed(args.seed)
        return cfg
    try:
        return preset(args.preset, 0 if args.seed is None else args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "out", None):
        cfg.output = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "rematch_lines", False):
        cfg.features.rematch_lines = True
    for flag, attr in (("no_lines", "use_lines"), ("no_mcc", "use_mcc"), ("no_wheel", "use_wheel"),
                       ("no_points", "use_points")):
        if getattr(args, flag, False):
            setattr(cfg.features, attr, False)
    return cfg


def cmd_simulate(args):
    cfg = _sim_config(args)
    if args.dump_default_config:
        sys.stdout.write(dump_yaml(cfg))
        return EXIT_OK
    if not args.out:
        raise ConfigError("--out is required")
    ds, world, traj = simulate(cfg)
    ds.write(args.out)
    with open(os.path.join(args.out, "sim_config.yaml"), "w") as f:
        f.write(dump_yaml(cfg))
    n_frames = sum(1 for _ in ds.frames())
    print(f"wrote {args.out}: {traj.duration:.1f} s, {traj.path_length():.1f} m, "
          f"{len(ds.imu)} imu, {len(ds.wheel)} wheel, {n_frames} frames, "
          f"{world.n_points} points, {world.n_lines} lines")
    return EXIT_OK


def cmd_run(args):
    cfg = _run_config(args)
    if args.dump_default_config:
        sys.stdout.write(dump_yaml(cfg))
        return EXIT_OK
    if not cfg.dataset:
        raise ConfigError("no dataset given (positional argument or 'dataset' in the config)")
    res = run_replay(cfg)
    s = res.stats
    print(f"{s['frames']} frames, {s['points_used']} points and {s['lines_used']} lines used, "
          f"{s['mcc_rejections']} MCC rejections, {s['runtime_s']:.1f} s")
    if cfg.output:
        print(f"outputs in {cfg.output}")
    gt_path = os.path.join(cfg.dataset, GT_FILE)
    if args.evaluate and os.path.exists(gt_path):
        rep = evaluate_ate(res.trajectory, read_tum(gt_path))
        print(f"ATE position {rep.rmse_position:.4f} m, orientation {rep.rmse_orientation:.4f} deg")
    return EXIT_OK


def cmd_evaluate(args):
    try:
        est = read_tum(args.estimate)
        gt = read_tum(args.groundtruth)
    except FileNotFoundError as e:
        raise DatasetError(str(e)) from None
    rep = evaluate_ate(est, gt, max_offset=args.max_offset, align=not args.no_align)
    print(f"pairs {len(rep.times)}  ATE position {rep.rmse_position:.6f} m  "
          f"orientation {rep.rmse_orientation:.6f} deg")
    if args.out:
        d = os.path.dirname(args.out)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(args.out, "w") as f:
            json.dump(rep.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return EXIT_OK


def _parse_seeds(text):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def _sweep_one(job):
    """Simulate, replay and score one seed; runs in a worker process."""
    sim_cfg, run_cfg, seed, out_dir = job
    sim_cfg.with_seed(seed)
    ds, _, traj = simulate(sim_cfg)
    run_cfg.seed = seed
    run_cfg.output = os.path.join(out_dir, f"seed_{seed:03d}") if out_dir else ""
    row = {"seed": seed, "path_length": traj.path_length()}
    try:
        res = run_replay(run_cfg, ds)
        rep = evaluate_ate(res.trajectory, ds.groundtruth)
    except ViwoError as e:
        row.update(status="failed", error=str(e))
        return row
    s = res.stats
    row.update(status="ok", ate_position=rep.rmse_position, ate_orientation=rep.rmse_orientation,
               points_used=s["points_used"], lines_used=s["lines_used"], mcc_rejections=s["mcc_rejections"],
               runtime_s=s["runtime_s"])
    return row


def cmd_sweep(args):
    # --config is the estimator file here; the simulator one is --sim-config
    sim_cfg = _sim_config(argparse.Namespace(config=args.sim_config, preset=args.preset, seed=None))
    run_cfg = _run_config(args)
    seeds = _parse_seeds(args.seeds)
    jobs = [(sim_cfg, run_cfg, s, args.out) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    for r in rows:
        if r["status"] == "ok":
            print(f"seed {r['seed']}: ATE {r['ate_position']:.4f} m "
                  f"({100 * r['ate_position'] / max(r['path_length'], 1e-9):.3f}% of path), "
                  f"{r['ate_orientation']:.3f} deg")
        else:
            print(f"seed {r['seed']}: failed ({r['error']})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        # runtime is wall-clock; keep it out of the file so sweeps are reproducible
        keys = ["seed", "status", "path_length", "ate_position", "ate_orientation", "points_used", "lines_used",
                "mcc_rejections", "error"]
        with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_NUMERICAL


def build_parser():
    p = _Parser(prog="viwo", description="Point-line visual-inertial-wheel odometry on simulated or recorded data.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--dump-default-config", action="store_true",
                        help="print the effective configuration as YAML and exit")

    def toggles(sp):
        sp.add_argument("--rematch-lines", action="store_true",
                        help="ignore dataset line ids and match segments between frames")
        sp.add_argument("--no-lines", action="store_true")
        sp.add_argument("--no-points", action="store_true")
        sp.add_argument("--no-mcc", action="store_true")
        sp.add_argument("--no-wheel", action="store_true")

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(sp, "dataset directory to write")
    sp.add_argument("--preset", default="urban", choices=sorted(PRESETS))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="replay a dataset through the estimator")
    sp.add_argument("dataset", nargs="?", help="dataset directory")
    common(sp, "output directory for trajectory and statistics")
    toggles(sp)
    sp.add_argument("--evaluate", action="store_true", help="also report ATE against the dataset ground truth")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("evaluate", help="absolute trajectory error between two TUM files")
    sp.add_argument("estimate")
    sp.add_argument("groundtruth")
    sp.add_argument("--out", help="write the report as JSON")
    sp.add_argument("--max-offset", type=float, default=0.01, help="association tolerance in seconds")
    sp.add_argument("--no-align", action="store_true", help="skip the rigid alignment")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="simulate, run and score a batch of seeds")
    sp.add_argument("--preset", default="urban", choices=sorted(PRESETS))
    sp.add_argument("--sim-config", dest="sim_config", help="simulator YAML (overrides --preset)")
    sp.add_argument("--config", help="estimator YAML configuration")
    sp.add_argument("--seeds", default="0-9", help="e.g. '0-9' or '1,4,7'")
    sp.add_argument("--out", help="directory for per-seed outputs and sweep.csv")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.set_defaults(func=cmd_sweep, seed=None, dump_default_config=False)
    toggles(sp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return _dispatch(args.func, args)


def _dispatch(func, args):
    try:
        return func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, InsufficientOverlap) as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET
    except ViwoError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
