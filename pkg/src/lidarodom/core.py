"""Geometry primitives: SE(3) transforms, twists and point clouds.

Convention: ``T_a_b`` maps coordinates expressed in frame ``b`` into frame
``a``. ``compose(a, b)`` applies ``b`` first, then ``a`` (``a @ b`` in matrix
form). Clouds are stored in their own sensor frame.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

from .errors import DegenerateRotationError

SMALL_ANGLE = 1e-7
LOG_ANGLE_LIMIT = math.pi - 1e-6


def _frozen(a, shape=None, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    if shape is not None and a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


def _hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion stored as (x, y, z, w)."""
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def matrix_to_quat(R):
    """Unit quaternion (x, y, z, w) of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return np.array(q)


def quat_multiply(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def _canonical_quat(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("quaternion must be finite and nonzero")
    q = q / n
    # q and -q encode the same rotation; keep w >= 0 for reproducible output
    if q[3] < 0:
        q = -q
    return q


@dataclasses.dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): unit quaternion (x, y, z, w) plus translation in meters."""

    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "quat", _frozen(_canonical_quat(self.quat), (4,)))
        t = _frozen(self.translation, (3,))
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        """Build from a 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotation(cls, R, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(matrix_to_quat(R), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation given as axis * angle (radians)."""
        return cls(_rotvec_to_quat(np.asarray(rotvec, dtype=np.float64)), translation)

    @classmethod
    def from_euler_deg(cls, roll=0.0, pitch=0.0, yaw=0.0, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation Rz(yaw) Ry(pitch) Rx(roll), angles in degrees."""
        qx = _rotvec_to_quat(np.array([math.radians(roll), 0.0, 0.0]))
        qy = _rotvec_to_quat(np.array([0.0, math.radians(pitch), 0.0]))
        qz = _rotvec_to_quat(np.array([0.0, 0.0, math.radians(yaw)]))
        return cls(quat_multiply(qz, quat_multiply(qy, qx)), translation)

    @functools.cached_property
    def rotation(self) -> np.ndarray:
        R = quat_to_matrix(self.quat)
        R.setflags(write=False)
        return R

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map points (..., 3) from the source frame into the target frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        q = self.quat * np.array([-1.0, -1.0, -1.0, 1.0])
        return RigidTransform(q, -(self.rotation.T @ self.translation))

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def almost_equal(self, other: RigidTransform, atol=1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self):
        q = np.array2string(self.quat, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"RigidTransform(quat={q}, translation={t})"


def _rotvec_to_quat(w):
    theta = float(np.linalg.norm(w))
    if theta < SMALL_ANGLE:
        k = 0.5 - theta * theta / 48.0
    else:
        k = math.sin(0.5 * theta) / theta
    return np.array([k * w[0], k * w[1], k * w[2], math.cos(0.5 * theta)])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a * b``: apply ``b`` first, then ``a``."""
    return RigidTransform(quat_multiply(a.quat, b.quat), a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def rotation_angle_deg(t: RigidTransform) -> float:
    """Geodesic rotation magnitude in degrees, in [0, 180]."""
    # atan2 form of arccos((trace(R) - 1) / 2); stays accurate near 0 and 180
    q = t.quat
    return math.degrees(2.0 * math.atan2(float(np.linalg.norm(q[:3])), abs(float(q[3]))))


def twist_exp(xi) -> RigidTransform:
    """SE(3) exponential of a twist ordered (rx, ry, rz, tx, ty, tz)."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,) or not np.all(np.isfinite(xi)):
        raise ValueError("twist must be a finite 6-vector")
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = _hat(w)
    if theta < SMALL_ANGLE:
        V = np.eye(3) + 0.5 * W + W @ W / 6.0
    else:
        t2 = theta * theta
        V = np.eye(3) + (1.0 - math.cos(theta)) / t2 * W + (theta - math.sin(theta)) / (t2 * theta) * (W @ W)
    return RigidTransform(_rotvec_to_quat(w), V @ v)


def twist_log(t: RigidTransform) -> np.ndarray:
    """Inverse of :func:`twist_exp` for rotation angles below pi - 1e-6."""
    q = t.quat
    s = float(np.linalg.norm(q[:3]))
    theta = 2.0 * math.atan2(s, float(q[3]))
    if theta > LOG_ANGLE_LIMIT:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} rad too close to pi for log")
    if theta < SMALL_ANGLE:
        w = 2.0 * q[:3] / q[3]
    else:
        w = theta / s * q[:3]
    W = _hat(w)
    if theta < SMALL_ANGLE:
        Vinv = np.eye(3) - 0.5 * W + W @ W / 12.0
    else:
        c = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / (theta * theta)
        Vinv = np.eye(3) - 0.5 * W + c * (W @ W)
    return np.concatenate([w, Vinv @ t.translation])


def _as_array(a, shape_tail, name, n=None):
    if a is None:
        return None
    a = np.array(a, dtype=np.float64 if name != "planar" else bool, copy=True)
    if a.shape[1:] != shape_tail or (n is not None and a.shape[0] != n):
        raise ValueError(f"{name} has shape {a.shape}, expected ({n}, {', '.join(map(str, shape_tail))})")
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable frame of 3D points with optional per-point attributes.

    ``covariances`` (N, 3, 3), ``normals`` (N, 3) and ``planar`` (N,) are
    either None or aligned with ``points``.
    """

    points: np.ndarray
    covariances: np.ndarray | None = None
    normals: np.ndarray | None = None
    planar: np.ndarray | None = None
    stamp: float = 0.0
    frame_id: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        n = len(pts)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "covariances", _as_array(self.covariances, (3, 3), "covariances", n))
        object.__setattr__(self, "normals", _as_array(self.normals, (3,), "normals", n))
        object.__setattr__(self, "planar", _as_array(self.planar, (), "planar", n))
        if not (math.isfinite(self.stamp) and self.stamp >= 0):
            raise ValueError("stamp must be finite and nonnegative")

    def __len__(self):
        return len(self.points)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def select(self, idx) -> PointCloud:
        """Subset by integer indices or boolean mask, keeping attributes aligned."""

        def pick(a):
            return None if a is None else a[idx]

        return PointCloud(
            self.points[idx],
            pick(self.covariances),
            pick(self.normals),
            pick(self.planar),
            stamp=self.stamp,
            frame_id=self.frame_id,
        )

    def replace(self, **changes) -> PointCloud:
        return dataclasses.replace(self, **changes)


def transform_cloud(t: RigidTransform, c: PointCloud) -> PointCloud:
    """Express ``c`` in the frame that ``t`` maps into."""
    R = t.rotation
    covs = None if c.covariances is None else np.einsum("ij,njk,lk->nil", R, c.covariances, R)
    normals = None if c.normals is None else c.normals @ R.T
    return PointCloud(t.apply(c.points), covs, normals, c.planar, stamp=c.stamp, frame_id=c.frame_id)


def drop_nonfinite(points) -> tuple[np.ndarray, int]:
    """Remove rows with NaN/Inf coordinates; return kept rows and dropped count."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ok = np.all(np.isfinite(p), axis=1)
    return p[ok], int(len(p) - ok.sum())
