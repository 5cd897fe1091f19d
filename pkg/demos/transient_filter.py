"""Show the consistency filter keeping a one-frame object out of the map.

A sphere of points appears in a single keyframe, the way a person walking
past the sensor would. With the filter on, none of it reaches the map;
with the filter off, it is stored as if it were a tree.

    python demos/transient_filter.py
"""
import numpy as np

from lidarodom import synth
from lidarodom.config import PipelineConfig
from lidarodom.odometry import Odometry

scene = synth.generate_scene("in-row", synth.SceneParams(rows=3, trees_per_row=8), seed=3)
profile = synth.MotionProfile.from_waypoints(synth.pattern_waypoints("single-round", scene), speed=2.0, yaw_rate=45.0)
frames, truth = synth.simulate_sequence(scene, profile, 30)

# pick a frame that is a keyframe with and without the filter
selected = []
for on in (True, False):
    res = Odometry(PipelineConfig().replace(policy={"consistency_filter": on})).run(frames)
    selected.append({r.frame_id for r in res if r.keyframe_selected})
k = min(f for f in selected[0] & selected[1] if f >= 2)

blob = synth.TransientBlob(center=(1.0, -2.5, 0.6), radius=1.0, n_points=200, seed=7)
injected = synth.inject_transient(frames, blob, k, clearance=0.1, scene=scene, pose=truth[k])
print(f"blob of {blob.n_points} points injected into keyframe {k}")

for on in (True, False):
    odo = Odometry(PipelineConfig().replace(policy={"consistency_filter": on}))
    res = odo.run(injected)
    center = res[k].pose.apply(np.asarray(blob.center)[None])[0]
    near = np.sum(np.linalg.norm(odo.map.points - center, axis=1) <= blob.radius + 0.1)
    print(f"consistency filter {'on ' if on else 'off'}: {near:4d} map points where the blob was")
