"""Synthetic orchard scenes and spinning-LiDAR scans with exact ground truth.

Scenes are built from a ground height field (flat, with optional furrow
grooves), vertical trunk cylinders and spherical canopies. Scans ray-cast
every (channel, azimuth) beam against those primitives; with distortion on,
each azimuth column fires from the pose interpolated at its firing time.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, RigidTransform, compose, twist_log

LAYOUTS = ("in-row", "uniform", "mixture")
PATTERNS = ("single-round", "lawn-mower", "cross-trees")


@dataclasses.dataclass(frozen=True)
class Tree:
    x: float
    y: float
    trunk_radius: float
    trunk_height: float
    canopy_radius: float
    canopy_height: float  # z of the canopy sphere center


@dataclasses.dataclass(frozen=True)
class Furrow:
    """A groove running along x: cosine-shaped dip of ``depth`` over ``width``."""

    y: float
    width: float
    depth: float


@dataclasses.dataclass
class SceneParams:
    rows: int = 2
    trees_per_row: int = 10
    spacing: float = 4.0
    row_spacing: float = 6.0
    origin: tuple = (0.0, 0.0)
    trunk_radius: tuple = (0.12, 0.2)
    trunk_height: tuple = (0.9, 1.3)
    canopy_radius: tuple = (0.8, 1.3)
    jitter: float = 0.3
    gap_probability: float = 0.2
    furrows: tuple = ()


@dataclasses.dataclass
class Scene:
    layout: str
    trees: list
    furrows: list
    seed: int

    def __post_init__(self):
        t = self.trees
        self._xy = np.array([[a.x, a.y] for a in t]).reshape(-1, 2)
        self._tr = np.array([a.trunk_radius for a in t])
        self._th = np.array([a.trunk_height for a in t])
        self._cr = np.array([a.canopy_radius for a in t])
        self._cc = np.array([[a.x, a.y, a.canopy_height] for a in t]).reshape(-1, 3)

    @property
    def trunk_positions(self) -> np.ndarray:
        return self._xy.copy()

    def ground_height(self, x, y):
        h = np.zeros(np.broadcast(x, y).shape)
        for f in self.furrows:
            u = np.abs(np.asarray(y) - f.y)
            inside = u < 0.5 * f.width
            dip = -0.5 * f.depth * (1.0 + np.cos(2.0 * np.pi * u / f.width))
            h = np.where(inside, np.minimum(h, dip), h)
        return h

    def distance(self, points) -> np.ndarray:
        """Approximate distance from world points to the nearest scene surface."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        best = np.abs(p[:, 2] - self.ground_height(p[:, 0], p[:, 1]))
        if len(self.trees):
            radial = np.linalg.norm(p[:, None, :2] - self._xy[None], axis=2) - self._tr[None]
            above = np.maximum(p[:, None, 2] - self._th[None], 0.0)
            trunk = np.sqrt(np.maximum(radial, 0.0) ** 2 + above**2)
            canopy = np.abs(np.linalg.norm(p[:, None, :] - self._cc[None], axis=2) - self._cr[None])
            best = np.minimum(best, np.minimum(trunk.min(axis=1), canopy.min(axis=1)))
        return best

    def raycast(self, origins, dirs, max_range) -> np.ndarray:
        """Distance along each unit ray to the first surface; inf on a miss."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        o = np.broadcast_to(o, d.shape)
        t_best = self._ground_hit(o, d)
        if len(self.trees):
            near = np.linalg.norm(self._xy - o[:, :2].mean(axis=0), axis=1) < max_range + 5.0
            if near.any():
                t_best = np.minimum(t_best, self._trunk_hit(o, d, near))
                t_best = np.minimum(t_best, self._canopy_hit(o, d, near))
        t_best[t_best > max_range] = np.inf
        return t_best

    def _ground_hit(self, o, d):
        t = np.full(len(d), np.inf)
        down = d[:, 2] < 0
        if not self.furrows:
            t[down] = -o[down, 2] / d[down, 2]
            return t
        deepest = max(f.depth for f in self.furrows)
        od, dd = o[down], d[down]
        lo = np.maximum((0.0 - od[:, 2]) / dd[:, 2], 0.0)
        hi = (-deepest - od[:, 2]) / dd[:, 2]
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            q = od + mid[:, None] * dd
            above = q[:, 2] > self.ground_height(q[:, 0], q[:, 1])
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        t[down] = 0.5 * (lo + hi)
        return t

    def _trunk_hit(self, o, d, sel):
        c, r, h = self._xy[sel], self._tr[sel], self._th[sel]
        ox = o[:, None, 0] - c[None, :, 0]
        oy = o[:, None, 1] - c[None, :, 1]
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (d[:, None, 0] * ox + d[:, None, 1] * oy)
        cc = ox**2 + oy**2 - r[None] ** 2
        disc = b * b - 4.0 * a[:, None] * cc
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (-b - np.sqrt(disc)) / (2.0 * a[:, None])
        z = o[:, None, 2] + t * d[:, None, 2]
        ok = (disc >= 0) & (t > 0) & (z <= h[None]) & (z >= -1.0)
        t = np.where(ok, t, np.inf)
        return t.min(axis=1)

    def _canopy_hit(self, o, d, sel):
        c, r = self._cc[sel], self._cr[sel]
        oc = o[:, None, :] - c[None]
        b = np.einsum("bk,bmk->bm", d, oc)
        cc = np.einsum("bmk,bmk->bm", oc, oc) - r[None] ** 2
        disc = b * b - cc
        with np.errstate(invalid="ignore"):
            t = -b - np.sqrt(disc)
        t = np.where((disc >= 0) & (t > 0), t, np.inf)
        return t.min(axis=1)


def generate_scene(layout: str = "in-row", params: SceneParams | None = None, seed: int = 0) -> Scene:
    """Deterministic orchard block.

    ``in-row`` puts jittered trees on parallel lines, ``uniform`` on an exact
    square grid, ``mixture`` on lines with random gaps and widely varying
    tree sizes.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    p = params or SceneParams()
    rng = np.random.default_rng(seed)
    x0, y0 = p.origin
    trees = []
    for row in range(p.rows):
        for i in range(p.trees_per_row):
            if layout == "uniform":
                x, y = x0 + i * p.spacing, y0 + row * p.spacing
                scale = 1.0
            else:
                x = x0 + i * p.spacing + rng.uniform(-p.jitter, p.jitter)
                y = y0 + row * p.row_spacing + rng.uniform(-0.3 * p.jitter, 0.3 * p.jitter)
                scale = rng.uniform(0.6, 1.5) if layout == "mixture" else 1.0
                if layout == "mixture" and rng.uniform() < p.gap_probability:
                    continue
            tr = scale * rng.uniform(*p.trunk_radius)
            th = scale * rng.uniform(*p.trunk_height)
            cr = scale * rng.uniform(*p.canopy_radius)
            trees.append(Tree(float(x), float(y), float(tr), float(th), float(cr), float(th + 0.7 * cr)))
    xy = np.array([[t.x, t.y] for t in trees]).reshape(-1, 2)
    radii = np.array([t.trunk_radius for t in trees])
    if len(trees) > 1:
        gap = np.linalg.norm(xy[:, None] - xy[None], axis=2) - (radii[:, None] + radii[None])
        np.fill_diagonal(gap, np.inf)
        if gap.min() <= 0:
            raise ValueError("tree density infeasible: trunks overlap")
    return Scene(layout, trees, list(p.furrows), seed)


@dataclasses.dataclass
class LidarModel:
    channels: int = 16
    fov_up: float = 15.0
    fov_down: float = -15.0
    horizontal_resolution: float = 0.4
    max_range: float = 100.0
    min_range: float = 0.3
    noise_sigma: float = 0.01
    scan_period: float = 0.1

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    def beam_directions(self):
        """Unit beam directions in the sensor frame, shape (columns, channels, 3)."""
        el = np.radians(np.linspace(self.fov_down, self.fov_up, self.channels))
        az = np.radians(np.arange(0.0, 360.0, self.horizontal_resolution))
        ce, se = np.cos(el), np.sin(el)
        d = np.empty((len(az), len(el), 3))
        d[..., 0] = np.cos(az)[:, None] * ce[None]
        d[..., 1] = np.sin(az)[:, None] * ce[None]
        d[..., 2] = se[None]
        return d


class MotionProfile:
    """Sensor pose as a function of time, interpolated between keyed poses.

    Translation is linear and rotation geodesic between keys; a sinusoidal
    pitch oscillation (degrees, Hz) can be layered on top to mimic furrow
    traversal. Outside the keyed span the end poses hold.
    """

    def __init__(self, times, poses, pitch_amplitude=0.0, pitch_frequency=1.0):
        times = np.asarray(times, dtype=np.float64)
        if len(times) != len(poses) or len(times) == 0:
            raise ValueError("need one pose per key time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("key times must be strictly increasing")
        self.times = times
        self.poses = list(poses)
        self.pitch_amplitude = pitch_amplitude
        self.pitch_frequency = pitch_frequency
        self._steps = [twist_log(a.inverse() @ b) for a, b in zip(self.poses[:-1], self.poses[1:])]

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    def _base(self, t):
        if t <= self.times[0]:
            return self.poses[0]
        if t >= self.times[-1]:
            return self.poses[-1]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        a, b = self.poses[i], self.poses[i + 1]
        rot = RigidTransform.from_rotvec(s * self._steps[i][:3])
        pos = (1 - s) * a.translation + s * b.translation
        return RigidTransform((a @ rot).quat, pos)

    def pose_at(self, t) -> RigidTransform:
        pose = self._base(t)
        if self.pitch_amplitude:
            bump = self.pitch_amplitude * math.sin(2.0 * math.pi * self.pitch_frequency * t)
            pose = compose(pose, RigidTransform.from_euler_deg(pitch=bump))
        return pose

    @classmethod
    def static(cls, pose: RigidTransform) -> MotionProfile:
        return cls([0.0], [pose])

    @classmethod
    def from_waypoints(cls, waypoints, speed, yaw_rate, sensor_height=0.6, start_yaw=None, **kw) -> MotionProfile:
        """Drive straight between xy waypoints, turning in place at each corner.

        ``speed`` in m/s, ``yaw_rate`` in deg/s.
        """
        wp = np.asarray(waypoints, dtype=np.float64)
        if len(wp) < 2:
            raise ValueError("need at least two waypoints")
        t = 0.0
        times, poses = [], []

        def key(xy, yaw):
            times.append(t)
            poses.append(RigidTransform.from_euler_deg(yaw=yaw, translation=(xy[0], xy[1], sensor_height)))

        yaw = start_yaw
        for a, b in zip(wp[:-1], wp[1:]):
            seg = b - a
            length = float(np.linalg.norm(seg))
            if length == 0:
                continue
            heading = math.degrees(math.atan2(seg[1], seg[0]))
            if yaw is None:
                yaw = heading
                key(a, yaw)
            turn = (heading - yaw + 180.0) % 360.0 - 180.0
            if abs(turn) > 1e-9:
                # split turns so each keyed step stays well below 180 degrees
                n = max(1, int(math.ceil(abs(turn) / 90.0)))
                for j in range(1, n + 1):
                    t += abs(turn) / n / yaw_rate
                    key(a, yaw + turn * j / n)
            yaw = yaw + turn
            t += length / speed
            key(b, yaw)
        return cls(times, poses, **kw)


def simulate_scan(
    scene: Scene,
    pose: RigidTransform | MotionProfile,
    lidar: LidarModel | None = None,
    distort: bool = False,
    stamp: float = 0.0,
    frame_id: int = 0,
    seed: int | None = 0,
) -> PointCloud:
    """One sensor-frame sweep starting at ``stamp``.

    With ``distort`` each azimuth column uses the pose at its own firing time
    (columns spread uniformly over the scan period) while the points are
    still reported as if measured from a single frame.
    """
    lidar = lidar or LidarModel()
    dirs = lidar.beam_directions()
    ncol = dirs.shape[0]
    if isinstance(pose, MotionProfile):
        if distort:
            col_poses = [pose.pose_at(stamp + lidar.scan_period * c / ncol) for c in range(ncol)]
        else:
            col_poses = [pose.pose_at(stamp)] * ncol
    else:
        if distort:
            raise ValueError("distortion needs a motion profile")
        col_poses = [pose] * ncol
    if all(p is col_poses[0] for p in col_poses):
        R = np.broadcast_to(col_poses[0].rotation, (ncol, 3, 3))
        o = np.broadcast_to(col_poses[0].translation, (ncol, 3))
    else:
        R = np.stack([p.rotation for p in col_poses])
        o = np.stack([p.translation for p in col_poses])
    world_dirs = np.einsum("cij,cbj->cbi", R, dirs).reshape(-1, 3)
    origins = np.repeat(o, dirs.shape[1], axis=0)
    rng_t = scene.raycast(origins, world_dirs, lidar.max_range)
    hit = np.isfinite(rng_t) & (rng_t >= lidar.min_range)
    r = rng_t[hit]
    if lidar.noise_sigma > 0:
        r = r + np.random.default_rng(seed).normal(0.0, lidar.noise_sigma, len(r))
    pts = dirs.reshape(-1, 3)[hit] * r[:, None]
    return PointCloud(pts, stamp=stamp, frame_id=frame_id)


def pattern_waypoints(pattern: str, scene: Scene, margin: float = 3.0):
    """Closed xy paths around or through the tree block, starting and ending at the same place."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    xy = scene.trunk_positions
    if len(xy) == 0:
        raise ValueError("scene has no trees to plan around")
    (x0, y0), (x1, y1) = xy.min(axis=0) - margin, xy.max(axis=0) + margin
    if pattern == "single-round":
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
    rows = np.unique(np.round(xy[:, 1], 0))
    if pattern == "lawn-mower":
        lanes = np.concatenate([[y0], 0.5 * (rows[:-1] + rows[1:]), [y1]])
        pts = []
        for i, y in enumerate(lanes):
            pts += [[x0, y], [x1, y]] if i % 2 == 0 else [[x1, y], [x0, y]]
        pts.append([pts[-1][0], y0])
        pts.append([x0, y0])
        return np.array(pts)
    # cross-trees: weave across the block between consecutive tree columns
    cols = np.unique(np.round(xy[:, 0], 0))
    mids = 0.5 * (cols[:-1] + cols[1:])
    pts = [[x0, y0]]
    for i, x in enumerate(mids):
        pts += [[x, y0], [x, y1]] if i % 2 == 0 else [[x, y1], [x, y0]]
    pts += [[x1, pts[-1][1]], [x1, y0], [x0, y0]]
    return np.array(pts)


def simulate_sequence(scene, profile: MotionProfile, n_frames, lidar=None, distort=False, seed=0, t0=0.0):
    """Scans at the LiDAR rate; returns (frames, ground-truth poses at each stamp)."""
    lidar = lidar or LidarModel()
    frames, poses = [], []
    for k in range(n_frames):
        stamp = t0 + k * lidar.scan_period
        frames.append(simulate_scan(scene, profile, lidar, distort, stamp=stamp, frame_id=k, seed=seed + k))
        poses.append(profile.pose_at(stamp))
    return frames, poses


@dataclasses.dataclass(frozen=True)
class TransientBlob:
    """A sphere of points (e.g. a person walking past), sensor-frame center."""

    center: tuple
    radius: float = 0.3
    n_points: int = 200
    seed: int = 0

    def sample(self):
        rng = np.random.default_rng(self.seed)
        v = rng.normal(size=(self.n_points, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = self.radius * rng.uniform(0, 1, self.n_points) ** (1.0 / 3.0)
        return np.asarray(self.center, dtype=np.float64) + v * r[:, None]


def inject_transient(frames, blob: TransientBlob, index: int, clearance: float = 0.1, scene=None, pose=None):
    """Add ``blob`` to ``frames[index]`` only, refusing placements near static geometry.

    Every blob point must be at least ``clearance`` away from the frame's
    own points and, when ``scene`` and the frame's world ``pose`` are given,
    from every scene surface.
    """
    if not 0 <= index < len(frames):
        raise IndexError(f"frame index {index} out of range")
    pts = blob.sample()
    target = frames[index]
    if len(target):
        dist, _ = cKDTree(target.points).query(pts, k=1)
        if dist.min() < clearance:
            raise ValueError(f"transient blob within {dist.min():.3f} m of static points")
    if scene is not None and pose is not None:
        gap = scene.distance(pose.apply(pts)).min()
        if gap < clearance:
            raise ValueError(f"transient blob within {gap:.3f} m of scene geometry")
    out = list(frames)
    out[index] = PointCloud(np.vstack([target.points, pts]), stamp=target.stamp, frame_id=target.frame_id)
    return out


def structured_cloud(rng, n=500, extent=4.0):
    """Points on a floor, a wall and a vertical cylinder: a scene that pins all 6 DOF."""
    k = n // 3
    a = rng.uniform(0, extent, (k, 2))
    b = rng.uniform(0, extent, (k, 2))
    m = n - 2 * k
    th = rng.uniform(0, 2 * np.pi, m)
    z = rng.uniform(0, 0.75 * extent, m)
    cx, cy, r = rng.uniform(0.4, 0.6) * extent, rng.uniform(0.5, 0.75) * extent, rng.uniform(0.2, 0.4)
    return np.vstack(
        [
            np.c_[a, np.zeros(k)],
            np.c_[np.zeros(k), b],
            np.c_[cx + r * np.cos(th), cy + r * np.sin(th), z],
        ]
    )


def random_perturbation(rng, max_rotation_deg, max_translation) -> RigidTransform:
    """Uniform random axis, angle in [0, max], translation inside a ball of radius max."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0, max_rotation_deg))
    tdir = rng.normal(size=3)
    tdir /= np.linalg.norm(tdir)
    return RigidTransform.from_rotvec(axis * angle, tdir * rng.uniform(0, max_translation))
