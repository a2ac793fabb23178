import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from viwo.config import RunConfig, default_config, dump_yaml, from_dict, load_config, parse_yaml, to_dict
from viwo.dataset import (GT_FILE, IMU_FILE, LINES_FILE, POINTS_FILE, WHEEL_FILE, ingest_dataset, read_tum,
                          write_tum)
from viwo.errors import ConfigError, InsufficientOverlap, MissingFile, NonMonotonicTimestamps, ParseError
from viwo.evaluation import associate, evaluate_ate, umeyama_rigid
from viwo.sim import SimConfig, preset


@pytest.fixture
def written(tmp_path, small_sim):
    ds = small_sim[0]
    path = tmp_path / "ds"
    ds.write(str(path))
    return ds, path


# -- dataset ---------------------------------------------------------------------

def test_dataset_round_trip(written):
    ds, path = written
    back = ingest_dataset(str(path))
    for f in ("imu", "wheel", "points", "lines", "groundtruth", "truth_points", "truth_lines"):
        np.testing.assert_array_equal(getattr(back, f), getattr(ds, f))
    assert back.calib.to_dict() == ds.calib.to_dict()
    assert [e[:2] for e in back.events()] == [e[:2] for e in ds.events()]


def _rewrite(path, name, fn):
    p = os.path.join(path, name)
    with open(p) as f:
        lines = f.read().split("\n")
    with open(p, "w") as f:
        f.write("\n".join(fn(lines)))


def test_shuffled_imu_rows(written):
    _, path = written
    rng = np.random.default_rng(0)

    def shuffle(lines):
        body = lines[1:-1]
        rng.shuffle(body)
        return [lines[0]] + body + [""]

    _rewrite(path, IMU_FILE, shuffle)
    with pytest.raises(NonMonotonicTimestamps) as ei:
        ingest_dataset(str(path))
    assert IMU_FILE in str(ei.value)


def test_truncated_final_line(written):
    _, path = written

    def truncate(lines):
        return lines[:-2] + [lines[-2][: len(lines[-2]) // 2]]

    _rewrite(path, WHEEL_FILE, truncate)
    with pytest.raises(ParseError) as ei:
        ingest_dataset(str(path))
    with open(os.path.join(path, WHEEL_FILE)) as f:
        n_lines = len(f.read().split("\n"))
    assert ei.value.file == WHEEL_FILE and ei.value.line == n_lines
    assert f"{WHEEL_FILE}:{n_lines}" in str(ei.value) or str(n_lines) in str(ei.value)


def test_missing_and_malformed_files(written, tmp_path):
    _, path = written
    with pytest.raises(MissingFile):
        ingest_dataset(str(tmp_path / "nope"))
    _rewrite(path, POINTS_FILE, lambda lines: ["t,point,u,v"] + lines[1:])
    with pytest.raises(ParseError):
        ingest_dataset(str(path))
    _rewrite(path, POINTS_FILE, lambda lines: ["t,feature_id,u,v"] + lines[1:])
    os.remove(os.path.join(path, LINES_FILE))
    with pytest.raises(MissingFile):
        ingest_dataset(str(path))


def test_tum_round_trip_and_validation(tmp_path):
    rng = np.random.default_rng(1)
    q = Rotation.random(20, random_state=rng).as_quat()
    rows = np.column_stack([np.arange(20) * 0.1, rng.normal(size=(20, 3)), q])
    f = str(tmp_path / "t.txt")
    write_tum(f, rows, fmt=repr, comment="t px py pz qx qy qz qw")
    np.testing.assert_array_equal(read_tum(f), rows)
    bad = rows.copy()
    bad[3, 4:] *= 1.1
    write_tum(f, bad)
    with pytest.raises(ParseError):
        read_tum(f)
    bad = rows[[0, 2, 1]]
    write_tum(f, bad)
    with pytest.raises(NonMonotonicTimestamps):
        read_tum(f)
    with open(f, "w") as fh:
        fh.write("0 1 2 3\n")
    with pytest.raises(ParseError):
        read_tum(f)


# -- config ------------------------------------------------------------------------

def test_config_round_trip():
    cfg = default_config()
    text = dump_yaml(cfg)
    assert dump_yaml(parse_yaml(RunConfig, text)) == text
    cfg.features.use_lines = False
    cfg.points.mcc_threshold = 2.5
    cfg.filter.n_clones = 7
    again = parse_yaml(RunConfig, dump_yaml(cfg))
    assert to_dict(again) == to_dict(cfg)
    sim = preset("urban", 4)
    assert to_dict(parse_yaml(SimConfig, dump_yaml(sim))) == to_dict(sim)


def test_config_rejects_bad_input(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        parse_yaml(RunConfig, "features:\n  use_lasers: true\n")
    with pytest.raises(ConfigError, match="unknown"):
        parse_yaml(RunConfig, "colour: blue\n")
    with pytest.raises(ConfigError):
        parse_yaml(RunConfig, "filter:\n  n_clones: eleven\n")
    with pytest.raises(ConfigError):
        parse_yaml(RunConfig, "features:\n  use_mcc: 1\n")
    with pytest.raises(ConfigError):
        parse_yaml(RunConfig, "noise:\n  sigma_px: -1.0\n")
    with pytest.raises(ConfigError):
        parse_yaml(RunConfig, "features: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_partial_config_takes_defaults():
    cfg = parse_yaml(RunConfig, "points:\n  mcc_threshold: 4\n")
    assert cfg.points.mcc_threshold == 4.0 and isinstance(cfg.points.mcc_threshold, float)
    assert cfg.points.max_points == 150
    assert to_dict(from_dict(RunConfig, {})) == to_dict(default_config())


# -- evaluation -----------------------------------------------------------------------

def _random_traj(rng, n=200):
    t = np.arange(n) * 0.05
    p = np.cumsum(rng.normal(size=(n, 3)) * 0.1, axis=0)
    q = Rotation.from_rotvec(np.cumsum(rng.normal(size=(n, 3)) * 0.02, axis=0)).as_quat()
    return np.column_stack([t, p, q])


def _transform(traj, R, t):
    out = traj.copy()
    out[:, 1:4] = traj[:, 1:4] @ R.T + t
    out[:, 4:8] = (Rotation.from_matrix(R) * Rotation.from_quat(traj[:, 4:8])).as_quat()
    return out


def _oracle_ate(est, gt):
    """Independent Kabsch alignment through scipy."""
    ps, pd = est[:, 1:4], gt[:, 1:4]
    ms, md = ps.mean(axis=0), pd.mean(axis=0)
    rot, _ = Rotation.align_vectors(pd - md, ps - ms)
    al = rot.apply(ps - ms) + md
    return float(np.sqrt(np.mean(np.sum((al - pd) ** 2, axis=1))))


def test_ate_identity_and_rigid_invariance():
    rng = np.random.default_rng(2)
    gt = _random_traj(rng)
    rep = evaluate_ate(gt, gt)
    assert rep.rmse_position == pytest.approx(0.0, abs=1e-12)
    assert rep.rmse_orientation == pytest.approx(0.0, abs=1e-6)
    R = Rotation.random(random_state=rng).as_matrix()
    moved = _transform(gt, R, np.array([3.0, -2.0, 7.0]))
    rep = evaluate_ate(moved, gt)
    assert rep.rmse_position < 1e-9 and rep.rmse_orientation < 1e-5
    np.testing.assert_allclose(rep.R_align, R.T, atol=1e-9)


def test_ate_matches_independent_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        gt = _random_traj(rng)
        est = gt.copy()
        est[:, 1:4] += rng.normal(size=est[:, 1:4].shape) * 0.2
        est[:, 3] += 1.0
        est = _transform(est, Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
        assert abs(evaluate_ate(est, gt).rmse_position - _oracle_ate(est, gt)) <= 1e-9
    gt = _random_traj(rng)
    est = gt.copy()
    est[:, 3] += 1.0
    assert evaluate_ate(est, gt, align=False).rmse_position == pytest.approx(1.0, abs=1e-12)
    assert evaluate_ate(est, gt).rmse_position == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ate_invariant_under_common_transform(seed):
    rng = np.random.default_rng(seed)
    gt = _random_traj(rng, 50)
    est = gt.copy()
    est[:, 1:4] += rng.normal(size=(50, 3)) * 0.3
    R, t = Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 10
    a = evaluate_ate(est, gt)
    b = evaluate_ate(_transform(est, R, t), _transform(gt, R, t))
    assert a.rmse_position == pytest.approx(b.rmse_position, abs=1e-9)
    assert a.rmse_orientation == pytest.approx(b.rmse_orientation, abs=1e-6)


def test_association_and_overlap():
    t_gt = np.arange(0, 1, 0.01)
    ie, ig = associate(t_gt[::3] + 0.004, t_gt)
    np.testing.assert_array_equal(ig, np.arange(0, 100, 3))
    ie, ig = associate(t_gt[::10] + 0.005, t_gt[::10] + 0.0)
    assert len(ie) == 10
    ie, ig = associate(np.arange(0, 1, 0.1) + 0.05, np.arange(0, 1, 0.1))
    assert len(ie) == 0
    rng = np.random.default_rng(4)
    gt = _random_traj(rng, 30)
    with pytest.raises(InsufficientOverlap):
        evaluate_ate(gt[:9], gt)
    est = gt.copy()
    est[:, 0] += 0.025
    with pytest.raises(InsufficientOverlap):
        evaluate_ate(est, gt)


def test_umeyama_recovers_transform():
    rng = np.random.default_rng(5)
    src = rng.normal(size=(30, 3))
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.normal(size=3)
    R2, t2 = umeyama_rigid(src, src @ R.T + t)
    np.testing.assert_allclose(R2, R, atol=1e-12)
    np.testing.assert_allclose(t2, t, atol=1e-12)
    # reflection case still returns a proper rotation
    R3, _ = umeyama_rigid(src, src * np.array([1, 1, -1]))
    assert np.linalg.det(R3) == pytest.approx(1.0)


def test_groundtruth_file_is_valid_tum(written):
    _, path = written
    gt = read_tum(os.path.join(path, GT_FILE))
    assert gt.shape[1] == 8 and np.all(np.diff(gt[:, 0]) > 0)
