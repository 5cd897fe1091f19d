"""Two-stage odometry: scan-to-scan prediction refined by scan-to-map GICP.

Per frame: preprocess, align against the previous frame from an identity
seed, predict the map pose, align against a local submap seeded by that
prediction, integrate the pose, then run the map update policy.

Keyframe insertion lags the gate by one frame: the frame selected at k is
filtered as the middle of (k-1, k, k+1) once frame k+1 has been registered.
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np
from ._nn import KDTree

from . import _kernels
from .config import PipelineConfig
from .core import PointCloud, RigidTransform, compose
from .mapping import OctreeMap, consistency_filter, insert_keyframe, map_update_due, motion_stable
from .preprocess import VoxelState, adaptive_voxel_downsample, estimate_covariances, neighbor_indices
from .registration import NeighborIndex, gicp_align

log = logging.getLogger(__name__)

STAGES = ("preprocess", "scan_to_scan", "submap", "scan_to_map", "mapping")


@dataclasses.dataclass
class OdometryState:
    """Everything carried from frame k-1 into frame k.

    ``previous_cloud`` is the last frame that could be registered; its pose
    is ``previous_cloud_pose`` (equal to ``pose`` unless frames were skipped).
    """

    voxel: VoxelState
    previous_cloud: PointCloud | None = None
    previous_index: NeighborIndex | None = None
    previous_cloud_pose: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)
    pre_previous_cloud: PointCloud | None = None
    pre_previous_index: NeighborIndex | None = None
    pre_previous_cloud_pose: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)
    pose: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)
    last_incremental: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)
    last_stable: bool = True
    last_map_update_pose: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)
    pending_keyframe: int | None = None  # frame id gated last frame, inserted this frame
    frames: int = 0

    @classmethod
    def initial(cls, cfg: PipelineConfig) -> OdometryState:
        return cls(VoxelState(cfg.preprocess.voxel_size))


@dataclasses.dataclass(frozen=True)
class FrameResult:
    frame_id: int
    stamp: float
    pose: RigidTransform
    incremental: RigidTransform
    scan_to_scan: RigidTransform
    stable: bool
    map_updated: bool
    keyframe_selected: bool
    inserted_frame_id: int | None
    failures: tuple
    points: int
    timing: dict


def new_map(cfg: PipelineConfig) -> OctreeMap:
    knn = cfg.preprocess.knn if cfg.map.covariances == "cached" else None
    return OctreeMap(cfg.map.leaf_resolution, knn=knn, epsilon=cfg.preprocess.epsilon)


def submap_members(m: OctreeMap, predicted_pose: RigidTransform, current: PointCloud, radius: float, knn: int = 5, mode: str = "union"):
    """Boolean mask over the map points forming the scan-to-map target.

    ``radius`` mode keeps map points within ``radius`` of the predicted
    sensor position; ``knn`` mode keeps the ``knn`` nearest map points of
    every predicted current point; ``union`` keeps both.
    """
    mask = np.zeros(len(m), dtype=bool)
    if len(m) == 0:
        return mask
    center = predicted_pose.translation
    if mode in ("radius", "union"):
        lo, hi = m.bounding_box
        corner = np.maximum(np.abs(lo - center), np.abs(hi - center))
        if float(np.linalg.norm(corner)) <= radius:
            mask[:] = True
            return mask
        diff = m.points - center
        mask |= np.einsum("ij,ij->i", diff, diff) <= radius * radius
    if mode in ("knn", "union") and len(current):
        _, idx = m.tree.query(predicted_pose.apply(current.points), k=min(knn, len(m)))
        mask[np.asarray(idx).reshape(-1)] = True
    return mask


def extract_local_submap(m: OctreeMap, predicted_pose: RigidTransform, current: PointCloud, radius: float, knn: int = 5, mode: str = "union") -> PointCloud:
    """The submap as a cloud (map order, duplicates removed)."""
    return m.as_cloud().select(submap_members(m, predicted_pose, current, radius, knn, mode))


def _submap_index(m: OctreeMap, mask, cfg: PipelineConfig) -> NeighborIndex | None:
    if not mask.any():
        return None
    if cfg.map.covariances == "cached":
        return NeighborIndex(m.as_cloud(), m.tree, members=mask)
    pts = m.points[mask]
    if len(pts) < cfg.preprocess.knn + 1:
        covs = np.tile(np.eye(3), (len(pts), 1, 1))
        return NeighborIndex(PointCloud(pts, covs))
    tree = m.tree if mask.all() else KDTree(pts)
    nbr = neighbor_indices(pts, cfg.preprocess.knn, tree)
    covs, _, _ = _kernels.regularized_covariances(pts, nbr, float(cfg.preprocess.epsilon), np.zeros(3))
    return NeighborIndex(PointCloud(pts, covs), tree)


def _preprocess(raw: PointCloud, cfg: PipelineConfig, state: OdometryState):
    down = adaptive_voxel_downsample(raw, cfg.preprocess, state.voxel)
    if len(down) < cfg.preprocess.knn + 1:
        return down, None
    tree = KDTree(down.points)
    cloud = estimate_covariances(down, cfg.preprocess, tree=tree)
    return cloud, NeighborIndex(cloud, tree)


def process_frame(state: OdometryState, raw: PointCloud, cfg: PipelineConfig, m: OctreeMap) -> FrameResult:
    """Advance the odometry by one frame; mutates ``state`` and ``m``."""
    t_start = time.perf_counter()
    timing = {}
    clock = t_start

    def lap(stage):
        nonlocal clock
        now = time.perf_counter()
        timing[stage] = (now - clock) * 1e3
        clock = now

    k = state.frames
    state.frames += 1
    cloud, index = _preprocess(raw, cfg, state)
    lap("preprocess")

    if k == 0 or state.previous_index is None and len(m) == 0:
        # the first usable frame defines the map origin
        ok = index is not None
        if ok:
            insert_keyframe(m, cloud, state.pose)
            state.previous_cloud, state.previous_index = cloud, index
            state.previous_cloud_pose = state.pose
            state.last_map_update_pose = state.pose
        timing["total"] = (time.perf_counter() - t_start) * 1e3
        return FrameResult(
            raw.frame_id, raw.stamp, state.pose, RigidTransform.identity(), RigidTransform.identity(),
            True, ok, ok, raw.frame_id if ok else None, () if ok else ("empty frame",), len(cloud), timing,
        )

    failures = []
    prev_pose = state.pose
    stable = True
    if index is None:
        failures.append("empty frame")
        pose = compose(prev_pose, state.last_incremental)
        s2s = state.last_incremental
        stable = False
        timing.update(scan_to_scan=0.0, submap=0.0, scan_to_map=0.0)
        clock = time.perf_counter()
    else:
        # identity relative to the latest pose; differs from identity only after skipped frames
        seed = state.previous_cloud_pose.inverse() @ prev_pose
        r1 = gicp_align(cloud, state.previous_index, seed, cfg.scan_to_scan)
        if r1.failure is None:
            s2s = r1.transform
            predicted = compose(state.previous_cloud_pose, s2s)
            stable = motion_stable(s2s, cfg.policy.max_rotation, cfg.policy.max_translation_jump)
        else:
            failures.append("scan-to-scan: " + r1.failure)
            s2s = state.last_incremental
            predicted = compose(prev_pose, s2s)
            stable = False
        lap("scan_to_scan")

        mask = submap_members(m, predicted, cloud, cfg.submap.radius, cfg.submap.knn, cfg.submap.mode)
        target = _submap_index(m, mask, cfg)
        lap("submap")

        pose = predicted
        if target is None:
            failures.append("scan-to-map: empty submap")
            stable = False
        else:
            r2 = gicp_align(cloud, target, predicted, cfg.scan_to_map)
            if r2.failure is None:
                pose = r2.transform
            else:
                failures.append("scan-to-map: " + r2.failure)
                stable = False
        lap("scan_to_map")

    incremental = prev_pose.inverse() @ pose
    # keep the chain exact: T0k = T0,k-1 * Tk-1,k
    pose = compose(prev_pose, incremental)

    inserted = None
    if state.pending_keyframe is not None:
        # the frame gated last time is the middle of (k-2, k-1, k)
        current = cloud if index is not None else PointCloud(np.empty((0, 3)))
        middle = state.previous_cloud_pose
        kept = consistency_filter(
            current,
            state.previous_cloud,
            state.pre_previous_cloud,
            state.pre_previous_cloud_pose.inverse() @ middle,
            middle.inverse() @ pose,
            cfg.policy.consistency_threshold,
            trees=(
                index.tree if index is not None else None,
                state.pre_previous_index.tree if state.pre_previous_index is not None else None,
            ),
        )
        insert_keyframe(m, kept, middle)
        inserted = state.pending_keyframe
        state.pending_keyframe = None

    selected = False
    if index is not None and map_update_due(state, pose, stable, cfg.policy):
        selected = True
        state.last_map_update_pose = pose
        if cfg.policy.consistency_filter:
            state.pending_keyframe = raw.frame_id
        else:
            insert_keyframe(m, cloud, pose)
            inserted = raw.frame_id
    lap("mapping")

    if index is not None:
        state.pre_previous_cloud, state.pre_previous_index = state.previous_cloud, state.previous_index
        state.pre_previous_cloud_pose = state.previous_cloud_pose
        state.previous_cloud, state.previous_index = cloud, index
        state.previous_cloud_pose = pose
    state.pose = pose
    state.last_incremental = incremental
    state.last_stable = stable
    timing["total"] = (time.perf_counter() - t_start) * 1e3
    if failures:
        log.info("frame %d: %s", raw.frame_id, "; ".join(failures))
    return FrameResult(
        raw.frame_id, raw.stamp, pose, incremental, s2s, stable, inserted is not None, selected,
        inserted, tuple(failures), len(cloud), timing,
    )


class Odometry:
    """Owns the state and map of one sequence run."""

    def __init__(self, cfg: PipelineConfig | None = None):
        self.cfg = cfg or PipelineConfig()
        self.state = OdometryState.initial(self.cfg)
        self.map = new_map(self.cfg)
        self.results = []

    def process(self, raw: PointCloud) -> FrameResult:
        r = process_frame(self.state, raw, self.cfg, self.map)
        self.results.append(r)
        return r

    def run(self, frames):
        for f in frames:
            self.process(f)
        return self.results

    @property
    def poses(self):
        return [r.pose for r in self.results]
