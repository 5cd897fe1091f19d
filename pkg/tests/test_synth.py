import math

import numpy as np
import pytest

from lidarodom import synth
from lidarodom.core import RigidTransform
from lidarodom.odometry import Odometry
from oracles import ray_cylinder


def test_zero_trees_is_bare_ground():
    scene = synth.generate_scene("in-row", synth.SceneParams(rows=0), seed=0)
    assert scene.trees == []
    pose = RigidTransform.from_euler_deg(translation=(0, 0, 2))
    scan = synth.simulate_scan(scene, pose, synth.LidarModel(noise_sigma=0.0))
    assert len(scan) > 0
    assert np.max(np.abs(pose.apply(scan.points)[:, 2])) < 1e-9


def test_uniform_grid_exact():
    scene = synth.generate_scene("uniform", synth.SceneParams(rows=5, trees_per_row=5, spacing=4.0), seed=3)
    xy = scene.trunk_positions
    g = np.arange(5) * 4.0
    want = np.array([[x, y] for y in g for x in g])
    assert np.array_equal(xy, want)


def test_layouts_and_determinism():
    for layout in synth.LAYOUTS:
        a = synth.generate_scene(layout, seed=5)
        b = synth.generate_scene(layout, seed=5)
        assert a.trees == b.trees
    lidar = synth.LidarModel()
    pose = RigidTransform.from_euler_deg(yaw=10, translation=(3, 3, 0.6))
    s1 = synth.simulate_scan(a, pose, lidar, seed=1)
    s2 = synth.simulate_scan(a, pose, lidar, seed=1)
    assert np.array_equal(s1.points, s2.points)
    with pytest.raises(ValueError):
        synth.generate_scene("spiral")


def test_mixture_varies_sizes():
    scene = synth.generate_scene("mixture", synth.SceneParams(rows=3, trees_per_row=10), seed=2)
    r = [t.canopy_radius for t in scene.trees]
    assert len(scene.trees) < 30 and max(r) / min(r) > 1.5


def test_infeasible_density():
    with pytest.raises(ValueError, match="infeasible"):
        synth.generate_scene("uniform", synth.SceneParams(spacing=0.2), seed=0)


def test_zero_motion_distortion_equivalence():
    scene = synth.generate_scene("in-row", seed=1)
    pose = RigidTransform.from_euler_deg(yaw=30, translation=(5, 3, 0.6))
    lidar = synth.LidarModel(noise_sigma=0.0)
    a = synth.simulate_scan(scene, synth.MotionProfile.static(pose), lidar, distort=True)
    b = synth.simulate_scan(scene, pose, lidar, distort=False)
    assert np.array_equal(a.points, b.points)


def test_cylinder_ranges_match_analytic_intersection():
    tree = synth.Tree(5.0, 0.0, 0.3, 10.0, 0.01, 50.0)
    scene = synth.Scene("in-row", [tree], [], 0)
    pose = RigidTransform.from_euler_deg(translation=(0, 0, 1.0))
    lidar = synth.LidarModel(noise_sigma=0.0)
    scan = synth.simulate_scan(scene, pose, lidar)
    world = pose.apply(scan.points)
    on_trunk = np.hypot(world[:, 0] - 5.0, world[:, 1]) < 0.31
    assert on_trunk.sum() > 50
    for p in scan.points[on_trunk]:
        r = np.linalg.norm(p)
        t = ray_cylinder(pose.translation, p / r, (5.0, 0.0), 0.3)
        assert t is not None and abs(t - r) < 1e-9


def test_scan_points_lie_on_surfaces():
    scene = synth.generate_scene("mixture", seed=4)
    pose = RigidTransform.from_euler_deg(roll=2, pitch=-3, yaw=45, translation=(6, 4, 0.6))
    scan = synth.simulate_scan(scene, pose, synth.LidarModel(noise_sigma=0.0))
    assert np.max(scene.distance(pose.apply(scan.points))) < 1e-6


def test_furrow_ground():
    scene = synth.Scene("in-row", [], [synth.Furrow(y=0.0, width=1.0, depth=0.2)], 0)
    assert scene.ground_height(0.0, 0.0) == pytest.approx(-0.2)
    assert scene.ground_height(0.0, 0.6) == 0.0
    pose = RigidTransform.from_euler_deg(translation=(0, 0, 1.5))
    scan = synth.simulate_scan(scene, pose, synth.LidarModel(noise_sigma=0.0))
    w = pose.apply(scan.points)
    assert np.max(np.abs(w[:, 2] - scene.ground_height(w[:, 0], w[:, 1]))) < 1e-6


def test_noise_is_radial_with_given_sigma():
    scene = synth.generate_scene("in-row", synth.SceneParams(rows=0), seed=0)
    pose = RigidTransform.from_euler_deg(translation=(0, 0, 2))
    clean = synth.simulate_scan(scene, pose, synth.LidarModel(noise_sigma=0.0))
    noisy = synth.simulate_scan(scene, pose, synth.LidarModel(noise_sigma=0.05), seed=9)
    dr = np.linalg.norm(noisy.points, axis=1) - np.linalg.norm(clean.points, axis=1)
    assert np.std(dr) == pytest.approx(0.05, rel=0.1)


def test_motion_profile_interpolation():
    prof = synth.MotionProfile.from_waypoints([[0, 0], [10, 0], [10, 10]], speed=2.0, yaw_rate=45.0)
    assert prof.pose_at(0).almost_equal(RigidTransform.from_euler_deg(translation=(0, 0, 0.6)))
    mid = prof.pose_at(2.5)
    assert np.allclose(mid.translation, [5, 0, 0.6])
    # 90 degree turn at 45 deg/s lasts 2 s, midway the heading is 45 degrees
    turning = prof.pose_at(5.0 + 1.0)
    assert np.allclose(turning.translation, [10, 0, 0.6])
    assert math.degrees(math.atan2(turning.rotation[1, 0], turning.rotation[0, 0])) == pytest.approx(45.0)
    assert prof.duration == pytest.approx(5 + 2 + 5)
    assert prof.pose_at(100).almost_equal(prof.pose_at(prof.duration))


def test_pitch_bump():
    prof = synth.MotionProfile([0.0], [RigidTransform.identity()], pitch_amplitude=3.0, pitch_frequency=1.0)
    R = prof.pose_at(0.25).rotation
    assert math.degrees(math.asin(-R[2, 0])) == pytest.approx(3.0)


def test_patterns_are_closed():
    scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=6), seed=0)
    for pattern in synth.PATTERNS:
        wp = synth.pattern_waypoints(pattern, scene)
        assert np.allclose(wp[0], wp[-1])
        assert np.all(wp.min(axis=0) < scene.trunk_positions.min(axis=0))


def test_sequence_stamps_and_poses():
    scene = synth.generate_scene("in-row", seed=0)
    prof = synth.MotionProfile.from_waypoints([[0, -3], [20, -3]], speed=2.0, yaw_rate=45.0)
    frames, poses = synth.simulate_sequence(scene, prof, 5)
    assert [f.frame_id for f in frames] == list(range(5))
    assert np.allclose([f.stamp for f in frames], np.arange(5) * 0.1)
    assert np.allclose(poses[4].translation, [0.8, -3, 0.6])


def test_inject_transient():
    scene = synth.generate_scene("in-row", seed=0)
    prof = synth.MotionProfile.from_waypoints([[0, -3], [20, -3]], speed=2.0, yaw_rate=45.0)
    frames, poses = synth.simulate_sequence(scene, prof, 10)
    blob = synth.TransientBlob(center=(0.0, -1.5, 0.8), radius=0.3, n_points=200)
    out = synth.inject_transient(frames, blob, 5, clearance=0.1, scene=scene, pose=poses[5])
    assert [len(a) - len(b) for a, b in zip(out, frames)] == [0] * 5 + [200] + [0] * 4
    assert np.array_equal(out[5].points[-200:], blob.sample())
    with pytest.raises(ValueError):
        # centered on the ground below the sensor
        synth.inject_transient(frames, synth.TransientBlob(center=(2.0, 0, -0.6)), 5, scene=scene, pose=poses[5])
    with pytest.raises(IndexError):
        synth.inject_transient(frames, blob, 10)


def test_fast_rotation_marks_frames_unstable():
    scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=8), seed=0)
    start = RigidTransform.from_euler_deg(translation=(14, 3, 0.6))
    end = RigidTransform.from_euler_deg(yaw=60, translation=(14, 3, 0.6))
    prof = synth.MotionProfile([0.0, 0.6], [start, end])  # 100 deg/s, 10 deg per scan
    frames, _ = synth.simulate_sequence(scene, prof, 6, distort=True)
    res = Odometry().run(frames)
    assert not any(r.stable for r in res[1:])
    assert not any(r.keyframe_selected for r in res[1:])
