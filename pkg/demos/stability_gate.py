"""Show the stability gate pausing map updates during a fast turn.

The sensor drives down a row at 1 m per scan, spins 180 degrees in place at
20 degrees per scan, then drives back. Frames whose scan-to-scan rotation
exceeds the gate are tracked but never added to the map.

    python demos/stability_gate.py [--distort]
"""
import argparse

from lidarodom import synth
from lidarodom.core import rotation_angle_deg
from lidarodom.odometry import Odometry

ap = argparse.ArgumentParser()
ap.add_argument("--distort", action="store_true", help="simulate per-column motion distortion")
args = ap.parse_args()

scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=12), seed=1)
profile = synth.MotionProfile.from_waypoints([[0, 3], [20, 3], [0, 3]], speed=10.0, yaw_rate=200.0)
frames, truth = synth.simulate_sequence(scene, profile, 45, distort=args.distort)
results = Odometry().run(frames)

print("frame  true rot  est rot  stable  keyframe  inserted")
for k, r in enumerate(results):
    true_rot = rotation_angle_deg(truth[k - 1].inverse() @ truth[k]) if k else 0.0
    est_rot = rotation_angle_deg(r.scan_to_scan)
    ins = "" if r.inserted_frame_id is None else str(r.inserted_frame_id)
    print(f"{k:5d}  {true_rot:8.1f}  {est_rot:7.1f}  {str(r.stable):6s}  {str(r.keyframe_selected):8s}  {ins}")
