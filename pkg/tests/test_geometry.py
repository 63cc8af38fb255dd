import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from posereg.errors import DepthNonPositive, SchemaError
from posereg.geometry import (CameraIntrinsics, LocalPoseDelta, ObjectModel, Pose, SymmetryPlane, apply_delta,
                              delta_between, exp_so3, is_rotation, log_so3, nearest_rotation, normalize_pixel,
                              project, reflect, skew)

from _util import rodrigues

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_exp_zero_is_identity():
    assert np.array_equal(exp_so3(np.zeros(3)), np.eye(3))


def test_exp_half_turn_about_x():
    assert np.allclose(exp_so3([np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_exp_matches_rodrigues_and_expm():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = rng.normal(size=3)
        c *= 0.7 / np.linalg.norm(c)
        R = exp_so3(c)
        assert np.linalg.norm(R - rodrigues(c)) <= 1e-12
        assert np.linalg.norm(R - expm(skew(c))) <= 1e-12


def test_exp_small_angle_series():
    c = np.array([3e-9, -1e-9, 2e-9])
    assert np.linalg.norm(exp_so3(c) - expm(skew(c))) <= 1e-16


@given(vec3)
def test_exp_is_rotation(c):
    assert is_rotation(exp_so3(c), tol=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-3, 3)))
def test_log_inverts_exp(c):
    if np.linalg.norm(c) >= np.pi - 1e-6:
        return
    assert np.allclose(log_so3(exp_so3(c)), c, atol=1e-9)


def test_apply_zero_delta_is_identity():
    pose = Pose(exp_so3([0.1, 0.2, 0.3]), [0.1, -0.2, 3.0])
    out = apply_delta(pose, LocalPoseDelta())
    assert np.array_equal(out.R, pose.R) and np.array_equal(out.t, pose.t)


def test_apply_delta_from_identity():
    out = apply_delta(Pose.identity(), LocalPoseDelta([0, 0, np.pi / 2], [1, 0, 0]))
    assert np.allclose(out.R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    assert np.allclose(out.t, [1, 0, 0])


def test_delta_composition_is_second_order():
    rng = np.random.default_rng(1)
    pose = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
    for scale in (1e-2, 1e-3):
        d1 = LocalPoseDelta.from_vector(scale * rng.normal(size=6))
        d2 = LocalPoseDelta.from_vector(scale * rng.normal(size=6))
        composed = apply_delta(apply_delta(pose, d1), d2)
        single = delta_between(pose, composed).as_vector()
        err = np.linalg.norm(single - (d1.as_vector() + d2.as_vector()))
        assert err <= 10 * scale ** 2


def test_delta_between_inverts_apply():
    rng = np.random.default_rng(2)
    pose = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
    v = 0.3 * rng.normal(size=6)
    back = delta_between(pose, apply_delta(pose, LocalPoseDelta.from_vector(v))).as_vector()
    assert np.allclose(back, v, atol=1e-12)


def test_apply_delta_reorthonormalizes():
    # a rotation with visible drift comes back as a proper rotation
    R = exp_so3([0.3, 0.1, -0.2]) * (1 + 1e-9)
    pose = Pose(R, np.zeros(3))
    out = apply_delta(pose, LocalPoseDelta([1e-3, 0, 0]))
    assert is_rotation(out.R, tol=1e-12)


def test_nearest_rotation_of_reflection_is_proper():
    R = nearest_rotation(np.diag([1.0, 1.0, -1.0]) @ exp_so3([0.2, 0.3, 0.4]))
    assert is_rotation(R)


def test_project_examples():
    xy, z = project(Pose.identity(), [0, 0, 1])
    assert np.array_equal(xy, [0, 0]) and z == 1
    xy, z = project(Pose.identity(), [0.3, 0.4, 2])
    assert np.allclose(xy, [0.15, 0.2]) and z == 2
    with pytest.raises(DepthNonPositive):
        project(Pose.identity(), [0, 0, -1])


def test_normalize_pixel_examples():
    assert np.array_equal(normalize_pixel(CameraIntrinsics(1, 1, 0, 0), [3, 4]), [3, 4, 1])
    assert np.array_equal(normalize_pixel(CameraIntrinsics(500, 500, 320, 240), [320, 240]), [0, 0, 1])
    assert np.allclose(normalize_pixel(CameraIntrinsics(500, 400, 320, 240), [420, 280]), [0.2, 0.1, 1])


def test_reflect_examples():
    plane = SymmetryPlane([1, 0, 0], [0, 0, 0])
    assert np.allclose(reflect(plane, [0.2, 0.1, 0.3]), [-0.2, 0.1, 0.3])
    on_plane = np.array([0.0, 0.7, -0.4])
    assert np.array_equal(reflect(plane, on_plane), on_plane)


@given(vec3, vec3, arrays(np.float64, 3, elements=st.floats(-1, 1)))
def test_reflect_involution_and_isometry(a, b, n):
    if np.linalg.norm(n) < 1e-3:
        return
    plane = SymmetryPlane(n / np.linalg.norm(n), [0.1, -0.2, 0.3])
    assert np.allclose(reflect(plane, reflect(plane, a)), a, atol=1e-13)
    d0 = np.linalg.norm(a - b)
    assert abs(np.linalg.norm(reflect(plane, a) - reflect(plane, b)) - d0) <= 1e-12 * max(1, d0)


def test_reflection_matrix_form_agrees():
    plane = SymmetryPlane(np.array([1.0, 2.0, 2.0]) / 3, [0.5, 0, 0])
    Rs, ts = plane.reflection
    x = np.array([0.3, -0.1, 0.9])
    assert np.allclose(Rs @ x + ts, reflect(plane, x), atol=1e-15)


def test_model_defaults_to_complete_graph():
    kps = np.random.default_rng(3).normal(size=(8, 3))
    m = ObjectModel.build(kps, SymmetryPlane([1, 0, 0], [0, 0, 0]))
    assert m.n_edges == 8 * 7 // 2
    assert np.all(m.edges[:, 0] != m.edges[:, 1])


def test_model_rejects_bad_edges_and_diameter():
    kps = np.eye(3)
    plane = SymmetryPlane([1, 0, 0], [0, 0, 0])
    with pytest.raises(SchemaError):
        ObjectModel.build(kps, plane, edges=[[0, 3]])
    with pytest.raises(SchemaError):
        ObjectModel.build(kps, plane, edges=[[1, 1]])
    with pytest.raises(SchemaError):
        ObjectModel(kps, [[0, 1]], plane, 5.0, np.zeros((0, 3)))


def test_symmetry_normal_must_be_unit():
    with pytest.raises(ValueError):
        SymmetryPlane([1.0, 0.1, 0], [0, 0, 0])


@settings(max_examples=50)
@given(arrays(np.float64, 6, elements=st.floats(-1, 1)))
def test_pose_values_are_immutable(v):
    pose = apply_delta(Pose.identity(), LocalPoseDelta.from_vector(v))
    with pytest.raises(ValueError):
        pose.R[0, 0] = 2.0
