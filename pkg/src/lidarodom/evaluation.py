"""Trajectory metrics: endpoint distance, ATE RMSE, timing statistics."""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import RigidTransform
from .errors import NoOverlapError


@dataclasses.dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped poses with strictly increasing stamps."""

    stamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        stamps = np.array(self.stamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if len(stamps) != len(poses):
            raise ValueError("need one stamp per pose")
        if not np.all(np.isfinite(stamps)):
            raise ValueError("stamps must be finite")
        if np.any(np.diff(stamps) <= 0):
            raise ValueError("stamps must be strictly increasing")
        stamps.setflags(write=False)
        object.__setattr__(self, "stamps", stamps)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.stamps)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @classmethod
    def from_results(cls, results) -> Trajectory:
        return cls([r.stamp for r in results], [r.pose for r in results])

    def transformed(self, g: RigidTransform) -> Trajectory:
        """Every pose left-multiplied by ``g`` (a change of world frame)."""
        return Trajectory(self.stamps, [g @ p for p in self.poses])

    def relative_to_first(self) -> Trajectory:
        return self.transformed(self.poses[0].inverse())


@dataclasses.dataclass(frozen=True)
class Association:
    est_idx: np.ndarray
    gt_idx: np.ndarray
    dropped: int

    def __len__(self):
        return len(self.est_idx)


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.05) -> Association:
    """Pair each estimate with the nearest ground-truth stamp within ``max_dt``.

    On an exact tie between two ground-truth stamps the earlier one wins.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlapError("no temporal overlap")
    s = gt.stamps
    pos = np.searchsorted(s, est.stamps)
    lo = np.clip(pos - 1, 0, len(s) - 1)
    hi = np.clip(pos, 0, len(s) - 1)
    use_hi = np.abs(s[hi] - est.stamps) < np.abs(s[lo] - est.stamps)
    j = np.where(use_hi, hi, lo)
    ok = np.abs(s[j] - est.stamps) <= max_dt
    if not ok.any():
        raise NoOverlapError("no temporal overlap")
    i = np.flatnonzero(ok)
    return Association(i, j[ok], int(len(ok) - ok.sum()))


def kabsch(src, dst):
    """Rotation R and translation t minimizing sum |R src + t - dst|^2 (no scale)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ms).T @ (dst - md)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, md - R @ ms


def ate_rmse(est: Trajectory, gt: Trajectory, alignment: str = "rigid", max_dt: float = 0.05) -> float:
    """Translational RMSE after aligning the estimate onto the ground truth.

    ``alignment``: ``rigid`` (least-squares rotation + translation over all
    pairs), ``origin`` (match the first associated poses) or ``none``.
    """
    a = associate(est, gt, max_dt)
    p = est.positions[a.est_idx]
    q = gt.positions[a.gt_idx]
    if alignment == "rigid":
        if len(a) < 3:
            raise ValueError("rigid alignment needs at least 3 associated poses")
        R, t = kabsch(p, q)
        p = p @ R.T + t
    elif alignment == "origin":
        g = gt.poses[a.gt_idx[0]] @ est.poses[a.est_idx[0]].inverse()
        p = g.apply(p)
    elif alignment != "none":
        raise ValueError(f"unknown alignment {alignment!r}")
    return float(np.sqrt(np.mean(np.sum((p - q) ** 2, axis=1))))


def endpoint_distance(t: Trajectory) -> float:
    """Distance between the first and last positions."""
    if len(t) == 0:
        raise ValueError("empty trajectory")
    return float(np.linalg.norm(t.poses[-1].translation - t.poses[0].translation))


@dataclasses.dataclass(frozen=True)
class TimingRecord:
    frame_id: int
    stages: dict
    total: float

    @classmethod
    def from_result(cls, r) -> TimingRecord:
        stages = {k: v for k, v in r.timing.items() if k != "total"}
        return cls(r.frame_id, stages, r.timing["total"])


def timing_summary(records) -> dict:
    """Median, 90th percentile and max per stage (ms), linear interpolation.

    Stages no record reports are omitted; ``total`` is always present.
    """
    if not records:
        raise ValueError("no timing records")
    columns = {"total": [r.total for r in records]}
    for r in records:
        for k, v in r.stages.items():
            if v is not None:
                columns.setdefault(k, []).append(v)
    out = {}
    for k, vals in columns.items():
        v = np.asarray(vals, dtype=np.float64)
        out[k] = {
            "median": float(np.percentile(v, 50)),
            "p90": float(np.percentile(v, 90)),
            "max": float(v.max()),
        }
    return out
