import json

import numpy as np
import pytest

from lidarodom import synth
from lidarodom.config import PipelineConfig
from lidarodom.core import PointCloud, RigidTransform
from lidarodom.errors import DataError, ParseError
from lidarodom.evaluation import Trajectory
from lidarodom.fileio import (
    load_manifest,
    read_pcd,
    read_pointcloud_file,
    read_trajectory,
    run_pipeline,
    write_pcd,
    write_sequence,
    write_trajectory,
    write_xyz,
)
from lidarodom.synth import random_perturbation

ASCII_PCD = """# .PCD v0.7
VERSION 0.7
FIELDS x y z intensity
SIZE 4 4 4 4
TYPE F F F F
COUNT 1 1 1 1
WIDTH 3
HEIGHT 1
VIEWPOINT 0 0 0 1 0 0 0
POINTS 3
DATA ascii
1 2 3 10
-0.5 0.25 4 11
7 8 9 12
"""


def test_ascii_pcd_exact(tmp_path):
    p = tmp_path / "a.pcd"
    p.write_text(ASCII_PCD)
    cloud, dropped = read_pcd(p)
    assert dropped == 0
    assert np.array_equal(cloud.points, [[1, 2, 3], [-0.5, 0.25, 4], [7, 8, 9]])


def test_binary_float32_pcd_from_foreign_writer(tmp_path):
    pts = np.array([[1.5, -2.25, 3.0], [0.0, 1.0, 2.0]], dtype="<f4")
    inten = np.array([5.0, 6.0], dtype="<f4")
    body = np.c_[pts, inten].astype("<f4").tobytes()
    head = ASCII_PCD.split("1 2 3")[0].replace("WIDTH 3", "WIDTH 2").replace("POINTS 3", "POINTS 2").replace("ascii", "binary")
    p = tmp_path / "b.pcd"
    p.write_bytes(head.encode() + body)
    cloud, _ = read_pcd(p)
    assert np.array_equal(cloud.points, pts.astype(np.float64))


def test_binary_round_trip_bitwise(tmp_path):
    pts = np.random.default_rng(0).normal(size=(1000, 3)) * 50
    p = tmp_path / "r.pcd"
    write_pcd(p, pts, binary=True, intensity=np.arange(1000, dtype=np.float32))
    cloud, _ = read_pcd(p)
    assert np.array_equal(cloud.points, pts)
    write_pcd(p, pts, binary=False)
    assert np.array_equal(read_pcd(p)[0].points, pts)


def test_nan_points_dropped_and_counted(tmp_path):
    pts = np.arange(30, dtype=float).reshape(10, 3)
    pts[3, 1] = np.nan
    pts[8, 0] = np.nan
    p = tmp_path / "n.pcd"
    write_pcd(p, pts)
    cloud, dropped = read_pcd(p)
    assert len(cloud) == 8 and dropped == 2


def test_truncated_binary_names_offset(tmp_path):
    p = tmp_path / "t.pcd"
    write_pcd(p, np.zeros((10, 3)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-7])
    with pytest.raises(ParseError, match="byte offset"):
        read_pcd(p)


def test_malformed_headers(tmp_path):
    p = tmp_path / "m.pcd"
    p.write_text("VERSION 0.7\nFIELDS x y z\n")
    with pytest.raises(ParseError, match="byte offset"):
        read_pcd(p)
    p.write_text("VERSION 0.7\nBOGUS 1\nDATA ascii\n")
    with pytest.raises(ParseError, match="byte offset 12"):
        read_pcd(p)
    p.write_text(ASCII_PCD.replace("FIELDS x y z intensity", "FIELDS a b c d"))
    with pytest.raises(DataError, match="x, y and z"):
        read_pcd(p)
    p.write_text(ASCII_PCD.replace("DATA ascii", "DATA binary_compressed"))
    with pytest.raises(DataError, match="unsupported PCD DATA"):
        read_pcd(p)
    p.write_text(ASCII_PCD.replace("SIZE 4 4 4 4", "SIZE 4 4 4 3"))
    with pytest.raises(DataError, match="unsupported PCD field"):
        read_pcd(p)


def test_xyz_format(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("# comment\n1 2 3\n4 5 6 99\n\nnan 1 1\n")
    cloud, dropped = read_pointcloud_file(p)
    assert np.array_equal(cloud.points, [[1, 2, 3], [4, 5, 6]]) and dropped == 1
    pts = np.random.default_rng(1).normal(size=(20, 3))
    write_xyz(p, pts)
    assert np.array_equal(read_pointcloud_file(p)[0].points, pts)
    p.write_text("1 2\n")
    with pytest.raises(ParseError, match="line 1"):
        read_pointcloud_file(p)
    with pytest.raises(DataError, match="no such file"):
        read_pointcloud_file(tmp_path / "missing.xyz")


def test_identity_trajectory_line(tmp_path):
    p = tmp_path / "t.txt"
    write_trajectory(Trajectory([0.0], [RigidTransform.identity()]), p)
    assert p.read_text() == "0.000000000 0 0 0 0 0 0 1\n"


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    poses = [random_perturbation(rng, 180, 100) for _ in range(1000)]
    t = Trajectory(np.arange(1000) * 0.1, poses)
    p = tmp_path / "t.txt"
    write_trajectory(t, p)
    back = read_trajectory(p)
    assert np.allclose(back.stamps, t.stamps, atol=1e-9)
    err = max(np.abs(a.matrix - b.matrix).max() for a, b in zip(back.poses, t.poses))
    assert err < 1e-7


def test_trajectory_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n")
    with pytest.raises(ParseError, match="expected 8 columns at line 2"):
        read_trajectory(p)
    p.write_text("0.2 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n")
    with pytest.raises(ParseError, match="non-monotone stamp at line 2"):
        read_trajectory(p)
    p.write_text("0 0 0 0 0 0 0 1.001\n")
    with pytest.raises(ParseError, match="non-unit quaternion.*line 1"):
        read_trajectory(p)
    p.write_text("0 0 0 0 0 0 0 1.0000001\n")
    assert read_trajectory(p).poses[0].quat[3] == 1.0  # renormalized within tolerance


@pytest.fixture(scope="module")
def sequence(tmp_path_factory):
    """20 frames at 1 m per frame with ground truth, written to disk."""
    root = tmp_path_factory.mktemp("seq")
    scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=12), seed=1)
    prof = synth.MotionProfile.from_waypoints([[-2, 3], [30, 3]], speed=10.0, yaw_rate=90)
    frames, gt = synth.simulate_sequence(scene, prof, 20, seed=1)
    write_sequence(root, frames, Trajectory([f.stamp for f in frames], gt))
    return root


def test_manifest(sequence, tmp_path):
    m = load_manifest(sequence)
    assert len(m) == 20 and m.groundtruth is not None
    assert np.allclose(m.stamps, np.arange(20) * 0.1)
    for i in range(3):
        write_xyz(tmp_path / f"{i:03d}.xyz", np.zeros((1, 3)))
    m = load_manifest(tmp_path, period=0.5)
    assert m.stamps == (0.0, 0.5, 1.0) and m.groundtruth is None
    (tmp_path / "frames.txt").write_text("0.0 000.xyz\n0.1 nope.xyz\n")
    with pytest.raises(DataError, match="missing frame file"):
        load_manifest(tmp_path)
    with pytest.raises(DataError):
        load_manifest(tmp_path / "absent")


def test_run_pipeline_outputs(sequence, tmp_path):
    out = {k: tmp_path / n for k, n in (("traj_out", "t.txt"), ("map_out", "m.pcd"), ("log_out", "l.txt"), ("report_out", "r.json"))}
    s = run_pipeline(load_manifest(sequence), PipelineConfig(), **{k: str(v) for k, v in out.items()})
    traj = read_trajectory(out["traj_out"])
    assert len(traj) == 20
    assert s.report["ate_rmse"] < 0.1
    report = json.loads(out["report_out"].read_text())
    assert report["frames_processed"] == 20 and report["map_updates"] > 0
    assert report["parameters"]["policy"]["max_rotation"] == 2.0
    lines = out["log_out"].read_text().splitlines()
    assert lines[0].split()[0] == "frame_id" and len(lines) == 21
    assert len(read_pcd(out["map_out"])[0]) == report["map_points"]
    # determinism: a second run writes the identical trajectory
    again = tmp_path / "t2.txt"
    run_pipeline(load_manifest(sequence), PipelineConfig(), traj_out=str(again))
    assert again.read_bytes() == out["traj_out"].read_bytes()


def test_run_pipeline_skips_bad_frames(sequence, tmp_path):
    import shutil

    root = tmp_path / "s"
    shutil.copytree(sequence, root)
    (root / "frames" / "000007.pcd").write_text("garbage\n")
    s = run_pipeline(load_manifest(root), PipelineConfig())
    assert s.skipped == [7] and len(s.results) == 19
    (root / "frames" / "000000.pcd").write_text("garbage\n")
    with pytest.raises(DataError, match="first frame unreadable"):
        run_pipeline(load_manifest(root), PipelineConfig())


def test_run_pipeline_empty_manifest(tmp_path):
    with pytest.raises(DataError, match="no frames"):
        run_pipeline(load_manifest(tmp_path))


def test_write_sequence_closure(tmp_path):
    frames = [PointCloud(np.random.default_rng(i).normal(size=(50, 3)), stamp=i * 0.1, frame_id=i) for i in range(3)]
    write_sequence(tmp_path, frames, binary=False)
    m = load_manifest(tmp_path)
    for f, p in zip(frames, m.paths):
        assert np.array_equal(read_pointcloud_file(p)[0].points, f.points)
