"""Drive a closed loop around a simulated tree block and report drift.

The sensor starts and ends at the same place, so the distance between the
first and last estimated positions measures accumulated drift.

    python demos/loop_drift.py [--frames N]
"""
import argparse
import time

import numpy as np

from lidarodom import synth
from lidarodom.evaluation import Trajectory, ate_rmse, endpoint_distance
from lidarodom.odometry import Odometry

ap = argparse.ArgumentParser()
ap.add_argument("--frames", type=int, help="default: the whole loop")
args = ap.parse_args()

scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=8), seed=3)
path = synth.pattern_waypoints("single-round", scene)
profile = synth.MotionProfile.from_waypoints(path, speed=2.0, yaw_rate=45.0)
n = args.frames or int(np.ceil(profile.duration / 0.1)) + 1
frames, truth = synth.simulate_sequence(scene, profile, n)
print(f"{len(scene.trees)} trees, {n} frames, path length {np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)):.0f} m")

odo = Odometry()
t0 = time.perf_counter()
results = odo.run(frames)
elapsed = time.perf_counter() - t0

est = Trajectory.from_results(results)
gt = Trajectory([f.stamp for f in frames], truth)
keyframes = sum(r.keyframe_selected for r in results)
print(f"ran in {elapsed:.1f} s ({1000 * elapsed / n:.0f} ms/frame)")
print(f"keyframes {keyframes}, map points {len(odo.map)}")
print(f"endpoint distance {endpoint_distance(est):.3f} m, ATE RMSE {ate_rmse(est, gt):.3f} m")
