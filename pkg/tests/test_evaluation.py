import numpy as np
import pytest

from lidarodom.core import RigidTransform
from lidarodom.errors import NoOverlapError
from lidarodom.evaluation import (
    TimingRecord,
    Trajectory,
    associate,
    ate_rmse,
    endpoint_distance,
    kabsch,
    timing_summary,
)
from lidarodom.synth import random_perturbation
from oracles import ate_brute, nearest_stamp_brute, percentile_linear, rot_z


def square(n=40, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 4, n, endpoint=False)
    xy = np.array([(t, 0) if t < 1 else (1, t - 1) if t < 2 else (3 - t, 1) if t < 3 else (0, 4 - t) for t in s])
    pos = np.c_[xy, np.zeros(n)] * 10 + rng.normal(0, noise, (n, 3))
    return Trajectory(np.arange(n) * 0.1, [RigidTransform([0, 0, 0, 1], p) for p in pos])


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [RigidTransform.identity()] * 2)
    with pytest.raises(ValueError):
        Trajectory([0.0], [])


def test_endpoint_distance_cases():
    assert endpoint_distance(Trajectory([0.0], [RigidTransform.identity()])) == 0.0
    t = Trajectory([0.0, 1.0], [RigidTransform.identity(), RigidTransform([0, 0, 0, 1], [3, 4, 0])])
    assert endpoint_distance(t) == 5.0


def test_endpoint_invariant_under_time_reversal():
    t = square(noise=0.3, seed=1)
    rev = Trajectory(t.stamps, t.poses[::-1])
    assert endpoint_distance(rev) == pytest.approx(endpoint_distance(t), abs=1e-12)


def test_associate_identical_and_offset():
    t = square()
    a = associate(t, t)
    assert len(a) == len(t) and a.dropped == 0
    shifted = Trajectory(t.stamps + 0.2, t.poses)
    with pytest.raises(NoOverlapError, match="no temporal overlap"):
        associate(Trajectory(t.stamps[:1], t.poses[:1]), Trajectory(shifted.stamps[:1], t.poses[:1]))


def test_associate_jitter_matches_brute_force():
    rng = np.random.default_rng(2)
    gt_stamps = np.arange(200) * 0.1
    est_stamps = np.sort(gt_stamps + rng.uniform(-0.02, 0.02, 200))
    est_stamps[::7] += 0.06  # some fall outside the window
    est_stamps = np.unique(est_stamps)
    poses = [RigidTransform.identity()]
    a = associate(Trajectory(est_stamps, poses * len(est_stamps)), Trajectory(gt_stamps, poses * 200), 0.05)
    want = nearest_stamp_brute(est_stamps, gt_stamps, 0.05)
    assert list(zip(a.est_idx.tolist(), a.gt_idx.tolist())) == want
    assert a.dropped == len(est_stamps) - len(want)


def test_associate_tie_picks_earlier():
    poses = [RigidTransform.identity()]
    a = associate(Trajectory([0.15], poses), Trajectory([0.1, 0.2], poses * 2), 0.05)
    assert a.gt_idx.tolist() == [0]


def test_ate_zero_and_alignment_invariance():
    gt = square()
    assert ate_rmse(gt, gt) < 1e-12
    g = RigidTransform.from_rotation(rot_z(37), (5, -3, 2))
    assert ate_rmse(gt.transformed(g), gt) < 1e-9
    assert ate_rmse(gt, gt.transformed(g), alignment="origin") < 1e-9
    assert ate_rmse(gt.transformed(g), gt, alignment="none") > 1.0


def test_ate_matches_independent_oracle():
    gt = square()
    est = square(noise=0.2, seed=3)
    g = random_perturbation(np.random.default_rng(4), 90, 10)
    est = est.transformed(g)
    want = ate_brute(est.positions, gt.positions)
    assert ate_rmse(est, gt) == pytest.approx(want, abs=1e-9)
    h = random_perturbation(np.random.default_rng(5), 90, 10)
    assert ate_rmse(est.transformed(h), gt.transformed(h)) == pytest.approx(want, abs=1e-9)


def test_ate_needs_three_pairs():
    t = Trajectory([0.0, 0.1], [RigidTransform.identity()] * 2)
    with pytest.raises(ValueError):
        ate_rmse(t, t)


def test_kabsch_reflection_guard():
    rng = np.random.default_rng(6)
    src = rng.normal(size=(20, 3))
    R, t = kabsch(src, src * [1, 1, -1])  # mirrored target: must still return a rotation
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_timing_summary_cases():
    one = timing_summary([TimingRecord(0, {"a": 4.0}, 5.0)])
    assert one["a"] == {"median": 4.0, "p90": 4.0, "max": 4.0}
    recs = [TimingRecord(i, {"a": float(i + 1), "b": None}, float(i + 1)) for i in range(100)]
    s = timing_summary(recs)
    assert s["a"]["median"] == pytest.approx(50.5)
    assert s["a"]["p90"] == pytest.approx(90.1)
    assert s["a"]["p90"] == pytest.approx(percentile_linear(range(1, 101), 90))
    assert "b" not in s and s["total"]["max"] == 100.0
    with pytest.raises(ValueError):
        timing_summary([])
