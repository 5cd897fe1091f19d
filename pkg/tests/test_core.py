import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarodom.core import (
    PointCloud,
    RigidTransform,
    compose,
    drop_nonfinite,
    invert,
    rotation_angle_deg,
    transform_cloud,
    twist_exp,
    twist_log,
)
from lidarodom.errors import DegenerateRotationError
from oracles import homogeneous, rodrigues, rot_x, rot_z


def random_transform(rng, max_angle=math.pi * 0.99):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return RigidTransform.from_rotvec(axis * rng.uniform(0, max_angle), rng.uniform(-5, 5, 3))


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(0)
    T = random_transform(rng)
    assert compose(RigidTransform.identity(), T).almost_equal(T)
    assert compose(T, invert(T)).almost_equal(RigidTransform.identity())


def test_compose_matches_matrix_product():
    a = RigidTransform.from_rotation(rot_z(30), (1, 0, 0))
    b = RigidTransform.from_rotation(rot_z(60))
    expected = homogeneous(rot_z(30), [1, 0, 0]) @ homogeneous(rot_z(60), [0, 0, 0])
    assert np.allclose(compose(a, b).matrix, expected, atol=1e-12)
    assert np.allclose(compose(a, b).matrix, homogeneous(rot_z(90), [1, 0, 0]), atol=1e-12)


def test_invert_cases():
    assert invert(RigidTransform.identity()).almost_equal(RigidTransform.identity())
    t = invert(RigidTransform([0, 0, 0, 1], [1, 2, 3]))
    assert np.allclose(t.translation, [-1, -2, -3])
    T = RigidTransform.from_rotation(rot_z(90), (1, 0, 0))
    inv = invert(T)
    assert np.allclose(inv.matrix, np.linalg.inv(T.matrix), atol=1e-12)
    assert np.allclose(inv.rotation, rot_z(-90), atol=1e-12)
    assert np.allclose(inv.translation, [0, 1, 0], atol=1e-12)


def test_compose_associative_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b, c = (random_transform(rng) for _ in range(3))
        assert compose(compose(a, b), c).almost_equal(compose(a, compose(b, c)), atol=1e-9)


def test_rotation_stays_orthonormal_over_long_chain():
    rng = np.random.default_rng(2)
    T = RigidTransform.identity()
    for _ in range(10000):
        T = compose(T, random_transform(rng, 0.1))
    R = T.rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_transform_cloud_basic():
    c = PointCloud(np.array([[1.0, 0, 0]]), stamp=1.5, frame_id=7)
    out = transform_cloud(RigidTransform.from_rotation(rot_z(90)), c)
    assert np.allclose(out.points, [[0, 1, 0]], atol=1e-12)
    assert out.stamp == 1.5 and out.frame_id == 7
    same = transform_cloud(RigidTransform.identity(), c)
    assert np.array_equal(same.points, c.points)


def test_transform_cloud_covariance_eigen():
    eps = 0.001
    cov = np.diag([eps, 1.0, 1.0])
    c = PointCloud(np.zeros((1, 3)), covariances=cov[None])
    out = transform_cloud(RigidTransform.from_rotation(rot_z(90)), c)
    w, v = np.linalg.eigh(out.covariances[0])
    assert np.allclose(w, [eps, 1, 1], atol=1e-12)
    # min-eigenvector (1,0,0) rotates to (0,1,0), up to sign
    assert np.allclose(np.abs(v[:, 0]), [0, 1, 0], atol=1e-12)


def test_transform_cloud_rigid():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 3))
    T = random_transform(rng)
    out = transform_cloud(T, PointCloud(pts)).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_rotation_angle_cases():
    assert rotation_angle_deg(RigidTransform.identity()) == 0.0
    axis = np.ones(3) / math.sqrt(3)
    T = RigidTransform.from_rotation(rodrigues(axis, math.radians(2.0)))
    assert abs(rotation_angle_deg(T) - 2.0) < 1e-6
    assert abs(rotation_angle_deg(RigidTransform.from_rotation(rot_z(90) @ rot_x(0))) - 90.0) < 1e-9
    assert abs(rotation_angle_deg(RigidTransform.from_rotation(rot_z(180))) - 180.0) < 1e-9


def test_rotation_angle_self_inverse():
    rng = np.random.default_rng(4)
    for _ in range(100):
        T = random_transform(rng)
        assert rotation_angle_deg(compose(T, invert(T))) < 1e-6


def test_twist_exp_cases():
    assert twist_exp(np.zeros(6)).almost_equal(RigidTransform.identity(), atol=0)
    T = twist_exp([0, 0, math.pi / 2, 0, 0, 0])
    assert np.allclose(T.rotation, rot_z(90), atol=1e-12)
    # Rodrigues oracle for a general axis
    axis = np.array([1.0, -2.0, 0.5])
    axis /= np.linalg.norm(axis)
    T = twist_exp(np.r_[axis * 1.3, 0, 0, 0])
    assert np.allclose(T.rotation, rodrigues(axis, 1.3), atol=1e-12)


def test_twist_roundtrip_random():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        xi = np.r_[axis * rng.uniform(1e-9, 3.0), rng.uniform(-3, 3, 3)]
        T = twist_exp(xi)
        back = twist_log(T)
        assert np.allclose(back, xi, atol=1e-9)
        assert twist_exp(back).almost_equal(T, atol=1e-9)


def test_twist_small_angle_series():
    xi = np.array([3e-8, -1e-8, 2e-8, 0.1, 0.2, 0.3])
    assert np.allclose(twist_log(twist_exp(xi)), xi, atol=1e-15)


def test_twist_log_near_pi_raises():
    T = RigidTransform.from_rotvec([0, 0, math.pi - 1e-8])
    with pytest.raises(DegenerateRotationError):
        twist_log(T)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
)
def test_exp_log_property(w, v):
    xi = np.array(w + v)
    assert np.allclose(twist_log(twist_exp(xi)), xi, atol=1e-9)


def test_pointcloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), covariances=np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), stamp=-1.0)
    c = PointCloud(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_drop_nonfinite():
    pts = np.zeros((10, 3))
    pts[2, 0] = np.nan
    pts[7, 2] = np.inf
    kept, dropped = drop_nonfinite(pts)
    assert dropped == 2 and len(kept) == 8
