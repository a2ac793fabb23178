"""Replay a dataset through the estimator and write the results."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import RunConfig, dump_yaml
from .dataset import Dataset, ingest_dataset, write_tum
from .estimator import Estimator, run_events

logger = logging.getLogger(__name__)

TRAJ_FILE = "trajectory.txt"
STATS_FILE = "stats.json"
POINT_RECORDS_FILE = "point_records.csv"
LINE_RECORDS_FILE = "line_records.csv"


@dataclass
class ReplayResult:
    trajectory: np.ndarray  # TUM rows
    stats: dict
    estimator: Estimator


def run_replay(cfg: RunConfig, dataset: Dataset | None = None, out_dir=None) -> ReplayResult:
    """Run the estimator over ``dataset`` (or ``cfg.dataset``).

    Outputs go to ``out_dir`` (default ``cfg.output``) when one is set.
    """
    if dataset is None:
        dataset = ingest_dataset(cfg.dataset)
    start = time.perf_counter()
    est = run_events(cfg, dataset.calib, dataset.events())
    elapsed = time.perf_counter() - start
    stats = est.stats.to_dict()
    traj = est.trajectory_array()
    logger.info("replay: %d frames in %.2f s", stats["frames"], elapsed)
    out_dir = cfg.output if out_dir is None else out_dir
    if out_dir:
        write_outputs(out_dir, cfg, traj, stats, est)
    stats = dict(stats, runtime_s=elapsed)
    return ReplayResult(traj, stats, est)


def write_outputs(out_dir, cfg, traj, stats, est):
    """Write trajectory, statistics and per-feature records.

    Everything written here is a deterministic function of the inputs (wall
    clock time is deliberately left out of ``stats.json``).
    """
    os.makedirs(out_dir, exist_ok=True)
    write_tum(os.path.join(out_dir, TRAJ_FILE), traj, comment="t px py pz qx qy qz qw")
    with open(os.path.join(out_dir, STATS_FILE), "w") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "config.yaml"), "w") as f:
        f.write(dump_yaml(cfg))
    with open(os.path.join(out_dir, POINT_RECORDS_FILE), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "t", "n_obs", "status", "mcc_residual"])
        for r in est.point_records:
            w.writerow([r.id, "%.9f" % r.t, r.n_obs, r.status, "%.6f" % r.mcc_residual])
    with open(os.path.join(out_dir, LINE_RECORDS_FILE), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["line_id", "t", "n_obs", "n_points", "plane_degenerate", "method", "status"])
        for r in est.line_records:
            d = asdict(r)
            w.writerow([d["line_id"], "%.9f" % d["t"], d["n_obs"], d["n_points"], int(d["plane_degenerate"]),
                        d["method"] or "", d["status"]])
