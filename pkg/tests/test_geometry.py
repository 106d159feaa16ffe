"""Geometry unit tests: projection, triangulation, registration, SE(3)."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointmimic import geometry
from pointmimic.errors import (
    DegenerateConfiguration,
    DegenerateGeometry,
    DepthNonPositive,
    NonUnitInput,
)
from pointmimic.geometry import (
    CameraModel,
    Pose,
    RigidTransform,
    canonicalize_quaternion,
    compose,
    estimate_rigid_transform,
    identity_quaternion,
    intrinsics_matrix,
    invert,
    matrix_to_quat,
    project,
    quat_angle,
    quat_multiply,
    quat_to_matrix,
    registration_residual,
    triangulate_dlt,
)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


def random_transform(rng, scale=1.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


@pytest.fixture
def identity_camera():
    return CameraModel(intrinsics_matrix(500.0, 500.0, 320.0, 240.0),
                       RigidTransform.identity(), name="cam0")


@pytest.fixture
def stereo_rig():
    k = intrinsics_matrix(500.0, 500.0, 320.0, 240.0)
    target = np.array([0.0, 0.0, 1.0])
    left = CameraModel.look_at([-0.15, 0.0, 0.0], target, k, name="left")
    right = CameraModel.look_at([0.15, 0.0, 0.0], target, k, name="right")
    return left, right


class TestProject:
    def test_optical_axis_maps_to_principal_point(self, identity_camera):
        uv = project(identity_camera, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(uv, [320.0, 240.0], atol=1e-12)

    def test_offset_point(self, identity_camera):
        # oracle: f * x / z + cx = 500 * 0.1 / 1 + 320 = 370
        uv = project(identity_camera, [0.1, 0.0, 1.0])
        np.testing.assert_allclose(uv, [370.0, 240.0], atol=1e-12)

    def test_zero_depth_raises(self, identity_camera):
        with pytest.raises(DepthNonPositive):
            project(identity_camera, [0.0, 0.0, 0.0])

    def test_behind_camera_raises(self, identity_camera):
        with pytest.raises(DepthNonPositive):
            project(identity_camera, [0.0, 0.0, -0.5])


class TestCameraModel:
    def test_projection_equals_k_rt(self, stereo_rig):
        for cam in stereo_rig:
            rt = np.hstack([cam.extrinsics.rotation, cam.extrinsics.translation[:, None]])
            np.testing.assert_allclose(cam.projection, cam.intrinsics @ rt, atol=1e-12)

    def test_center_projects_forward(self, stereo_rig):
        left, _ = stereo_rig
        np.testing.assert_allclose(left.center, [-0.15, 0.0, 0.0], atol=1e-12)

    def test_nonpositive_focal_rejected(self):
        with pytest.raises(ValueError):
            CameraModel(intrinsics_matrix(-500.0, 500.0, 320.0, 240.0), RigidTransform.identity())

    def test_lower_triangle_rejected(self):
        k = intrinsics_matrix(500.0, 500.0, 320.0, 240.0)
        k[1, 0] = 2.0
        with pytest.raises(ValueError):
            CameraModel(k, RigidTransform.identity())

    def test_mapping_roundtrip(self, stereo_rig):
        left, _ = stereo_rig
        clone = CameraModel.from_mapping(left.to_mapping(), name=left.name)
        np.testing.assert_allclose(clone.projection, left.projection, atol=1e-12)


class TestTriangulate:
    def test_noiseless_recovery(self, stereo_rig):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = np.array([0.0, 0.0, 1.0]) + rng.uniform(-0.2, 0.2, 3)
            obs = [(cam, project(cam, x)) for cam in stereo_rig]
            np.testing.assert_allclose(triangulate_dlt(obs), x, atol=1e-6)

    def test_zero_baseline_raises(self, identity_camera):
        obs = [(identity_camera, [320.0, 240.0]), (identity_camera, [321.0, 240.0])]
        with pytest.raises(DegenerateGeometry):
            triangulate_dlt(obs)

    def test_single_view_rejected(self, identity_camera):
        with pytest.raises(ValueError):
            triangulate_dlt([(identity_camera, [320.0, 240.0])])

    def test_noise_monte_carlo(self, stereo_rig):
        # sigma=1 px, baseline 0.3 m, depth ~0.8 m: error < 2 cm in >= 95% of trials
        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(1000):
            x = np.array([0.0, 0.0, 0.8]) + rng.uniform(-0.1, 0.1, 3)
            obs = [(cam, project(cam, x) + rng.normal(0.0, 1.0, 2)) for cam in stereo_rig]
            if np.linalg.norm(triangulate_dlt(obs) - x) < 0.02:
                hits += 1
        assert hits >= 950

    def test_error_decreases_with_baseline(self):
        # monotone on average as the baseline grows at fixed pixel noise
        k = intrinsics_matrix(500.0, 500.0, 320.0, 240.0)
        rng = np.random.default_rng(11)
        means = []
        for baseline in (0.05, 0.1, 0.2, 0.3, 0.5):
            cams = [
                CameraModel.look_at([-baseline / 2, 0.0, 0.0], [0.0, 0.0, 1.0], k),
                CameraModel.look_at([baseline / 2, 0.0, 0.0], [0.0, 0.0, 1.0], k),
            ]
            errors = []
            for _ in range(1000):
                x = np.array([0.0, 0.0, 0.8]) + rng.uniform(-0.1, 0.1, 3)
                obs = [(cam, project(cam, x) + rng.normal(0.0, 1.0, 2)) for cam in cams]
                errors.append(np.linalg.norm(triangulate_dlt(obs) - x))
            means.append(np.mean(errors))
        assert all(a > b for a, b in zip(means, means[1:]))


class TestRegistration:
    POINTS = np.array([
        [0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0],
        [0.0, 0.1, 0.0],
        [0.0, 0.0, 0.1],
        [0.05, 0.07, 0.02],
    ])

    def test_identity_on_equal_sets(self):
        t = estimate_rigid_transform(self.POINTS, self.POINTS)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(t.translation, np.zeros(3), atol=1e-9)

    def test_recovers_constructed_transform(self):
        r = rot_z(np.pi / 2)
        t = np.array([0.1, 0.0, 0.0])
        dst = self.POINTS @ r.T + t
        est = estimate_rigid_transform(self.POINTS, dst)
        np.testing.assert_allclose(est.rotation, r, atol=1e-9)
        np.testing.assert_allclose(est.translation, t, atol=1e-9)

    def test_collinear_raises(self):
        src = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]])
        with pytest.raises(DegenerateConfiguration):
            estimate_rigid_transform(src, src)

    def test_coplanar_sets_are_valid(self):
        # the robot offset layout is coplanar on purpose; must not be rejected
        src = np.array([[0, 0, 0], [0.04, 0, 0], [-0.04, 0, 0], [0, 0.04, 0], [0, -0.04, 0]], dtype=float)
        r = rot_z(0.3)
        est = estimate_rigid_transform(src, src @ r.T)
        np.testing.assert_allclose(est.rotation, r, atol=1e-9)

    def test_reflection_corrected_to_proper_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            src = rng.normal(size=(6, 3))
            dst = src.copy()
            dst[:, 2] *= -1.0  # mirrored set: naive SVD solution is a reflection
            est = estimate_rigid_transform(src, dst)
            assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_mirrored_offsets_det_positive(self):
        src = self.POINTS
        dst = src.copy()
        dst[:, 0] *= -1.0
        est = estimate_rigid_transform(src, dst)
        assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_residual_invariant_under_common_motion(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.normal(size=(5, 3))
        dst = src + rng.normal(scale=0.05, size=(5, 3))
        base = registration_residual(estimate_rigid_transform(src, dst), src, dst)
        g = random_transform(rng)
        moved = registration_residual(
            estimate_rigid_transform(g.apply(src), g.apply(dst)), g.apply(src), g.apply(dst))
        assert moved == pytest.approx(base, abs=1e-9)


class TestCompose:
    def test_identity_neutral(self):
        rng = np.random.default_rng(5)
        t = random_transform(rng)
        out = compose(RigidTransform.identity(), t)
        np.testing.assert_allclose(out.rotation, t.rotation, atol=1e-12)
        np.testing.assert_allclose(out.translation, t.translation, atol=1e-12)

    def test_rotation_angles_add(self):
        a = RigidTransform(rot_z(np.pi / 2), np.zeros(3))
        out = compose(a, a)
        np.testing.assert_allclose(out.rotation, rot_z(np.pi), atol=1e-9)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_pointwise_composition(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_transform(rng), random_transform(rng)
        point = rng.normal(size=3)
        np.testing.assert_allclose(compose(a, b).apply(point), a.apply(b.apply(point)), atol=1e-12)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_inverse_cancels(self, seed):
        rng = np.random.default_rng(seed)
        t = random_transform(rng)
        out = compose(t, invert(t))
        np.testing.assert_allclose(out.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(out.translation, np.zeros(3), atol=1e-9)

    def test_pose_composition_matches_transforms(self):
        rng = np.random.default_rng(9)
        a, b = random_transform(rng), random_transform(rng)
        pa, pb = Pose.from_transform(a), Pose.from_transform(b)
        via_pose = compose(pa, pb).as_transform()
        via_transform = compose(a, b)
        np.testing.assert_allclose(via_pose.rotation, via_transform.rotation, atol=1e-9)
        np.testing.assert_allclose(via_pose.translation, via_transform.translation, atol=1e-9)

    def test_mixed_types_rejected(self):
        with pytest.raises(TypeError):
            compose(RigidTransform.identity(), Pose.identity())


class TestQuaternions:
    def test_identity_matrix_roundtrip(self):
        np.testing.assert_allclose(matrix_to_quat(np.eye(3)), [1, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix([1, 0, 0, 0]), np.eye(3), atol=1e-12)

    def test_half_turn_about_z(self):
        np.testing.assert_allclose(matrix_to_quat(rot_z(np.pi)), [0, 0, 0, 1], atol=1e-9)
        np.testing.assert_allclose(quat_to_matrix([0, 0, 0, 1]), rot_z(np.pi), atol=1e-12)

    @given(st.integers(min_value=0, max_value=100_000))
    @settings(max_examples=100, deadline=None)
    def test_random_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        r = random_rotation(rng)
        np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(r)), r, atol=1e-9)

    def test_non_unit_rejected(self):
        with pytest.raises(NonUnitInput):
            quat_to_matrix([1.1, 0.0, 0.0, 0.0])

    def test_canonical_sign(self):
        q = canonicalize_quaternion([-0.5, 0.5, 0.5, 0.5])
        assert q[0] >= 0.0
        rng = np.random.default_rng(2)
        r = random_rotation(rng)
        assert matrix_to_quat(r)[0] >= 0.0

    def test_multiply_matches_matrix_product(self):
        rng = np.random.default_rng(4)
        qa = matrix_to_quat(random_rotation(rng))
        qb = matrix_to_quat(random_rotation(rng))
        lhs = quat_to_matrix(quat_multiply(qa, qb))
        rhs = quat_to_matrix(qa) @ quat_to_matrix(qb)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_angle_metric(self):
        assert quat_angle(identity_quaternion(), identity_quaternion()) == pytest.approx(0.0)
        qz = matrix_to_quat(rot_z(0.3))
        assert quat_angle(identity_quaternion(), qz) == pytest.approx(0.3, abs=1e-9)


class TestPose:
    def test_normalizes_and_canonicalizes(self):
        p = Pose(np.zeros(3), [-1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(p.orientation, [1, 0, 0, 0], atol=1e-12)

    def test_far_from_unit_rejected(self):
        with pytest.raises(NonUnitInput):
            Pose(np.zeros(3), [2.0, 0.0, 0.0, 0.0])

    def test_transform_roundtrip(self):
        rng = np.random.default_rng(8)
        t = random_transform(rng)
        back = Pose.from_transform(t).as_transform()
        np.testing.assert_allclose(back.rotation, t.rotation, atol=1e-9)
        np.testing.assert_allclose(back.translation, t.translation, atol=1e-9)
