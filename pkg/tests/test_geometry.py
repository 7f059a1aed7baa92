"""Angle/vector conversions, the rotation map, and the clamped metric."""

import math

import numpy as np
import pytest

from gazenet import geometry as geo


class TestRodrigues:
    def test_zero_vector_is_identity(self):
        np.testing.assert_array_equal(geo.rodrigues([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(geo.rodrigues([0, 0, math.pi / 2]), expected, atol=1e-15)

    def test_half_turn_about_x(self):
        np.testing.assert_allclose(geo.rodrigues([math.pi, 0, 0]),
                                   np.diag([1.0, -1.0, -1.0]), atol=1e-15)

    def test_orthonormal_with_unit_determinant(self, rng):
        for _ in range(1000):
            r = rng.uniform(-1, 1, 3)
            r *= rng.uniform(0, math.pi) / max(np.linalg.norm(r), 1e-12)
            rot = geo.rodrigues(r)
            assert np.max(np.abs(rot.T @ rot - np.eye(3))) < 1e-9
            assert abs(np.linalg.det(rot) - 1.0) < 1e-9


class TestAngleVectorConversions:
    def test_straight_at_camera(self):
        np.testing.assert_allclose(geo.angles_to_vector([0.0, 0.0]), [0, 0, -1], atol=1e-15)

    def test_quarter_yaw(self):
        np.testing.assert_allclose(geo.angles_to_vector([math.pi / 2, 0.0]),
                                   [-1, 0, 0], atol=1e-15)

    def test_pitch_up(self):
        s = math.sqrt(2) / 2
        np.testing.assert_allclose(geo.angles_to_vector([0.0, math.pi / 4]),
                                   [0, -s, -s], atol=1e-15)

    def test_vector_to_angles_anchor(self):
        np.testing.assert_allclose(geo.vector_to_angles([0.0, 0.0, -1.0]), [0, 0],
                                   atol=1e-15)

    def test_round_trip_is_identity(self, rng):
        yaw = rng.uniform(-math.pi, math.pi, 1000)
        pitch = rng.uniform(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6, 1000)
        g = np.stack([yaw, pitch], axis=-1)
        back = geo.vector_to_angles(geo.angles_to_vector(g))
        assert np.max(np.abs(back - g)) < 1e-12

    def test_gimbal_pole_defines_yaw_zero(self):
        np.testing.assert_allclose(geo.vector_to_angles([0.0, -1.0, 0.0]),
                                   [0.0, math.pi / 2], atol=1e-12)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            geo.vector_to_angles([0.0, 0.0, -1.1])


class TestAngularError:
    def test_zero_for_equal(self, rng):
        # dot products round to just below 1, so "zero" means sub-microdegree
        g = rng.uniform(-0.5, 0.5, (100, 2))
        assert np.max(geo.angular_error(g, g)) < 1e-5

    def test_opposite_directions(self):
        assert geo.angular_error([0.0, 0.0], [math.pi, 0.0]) == pytest.approx(180.0)

    def test_small_yaw_is_exact_arc(self):
        assert geo.angular_error([0.1, 0.0], [0.0, 0.0]) == pytest.approx(
            math.degrees(0.1), abs=1e-9)
        assert geo.angular_error([0.1, 0.0], [0.0, 0.0]) == pytest.approx(5.7296, abs=1e-4)

    def test_clamp_kills_rounding_nan(self):
        # dot products nudged just outside [-1, 1] must clamp, not NaN
        v = np.array([1.0, 0.0, 0.0])
        assert geo.arc_degrees_between(v * (1 + 5e-16), v * (1 + 5e-16)) == 0.0
        assert geo.arc_degrees_between(-v * (1 + 5e-16), v * (1 + 5e-16)) == pytest.approx(180.0)

    def test_never_nan_on_colinear_rounding(self, rng):
        g = rng.uniform(-1.2, 1.2, (2000, 2))
        g[:, 1] = np.clip(g[:, 1], -1.5, 1.5)
        errs = geo.angular_error(g, g)
        assert np.all(np.isfinite(errs))

    def test_metric_properties(self, rng):
        a = rng.uniform(-1.0, 1.0, (300, 2))
        b = rng.uniform(-1.0, 1.0, (300, 2))
        ab = geo.angular_error(a, b)
        np.testing.assert_allclose(ab, geo.angular_error(b, a), atol=1e-12)
        assert np.all(ab >= 0.0)
        assert np.all(ab <= 180.0)


class TestAngleEuclidean:
    def test_zero_for_equal(self):
        assert geo.angle_euclidean([0.3, -0.2], [0.3, -0.2]) == 0.0

    def test_pythagorean_triple(self):
        a = [math.radians(3.0), math.radians(4.0)]
        assert geo.angle_euclidean(a, [0.0, 0.0]) == pytest.approx(5.0)

    def test_symmetric(self, rng):
        a = rng.uniform(-1, 1, (50, 2))
        b = rng.uniform(-1, 1, (50, 2))
        np.testing.assert_allclose(geo.angle_euclidean(a, b), geo.angle_euclidean(b, a))


class TestFlipGaze:
    def test_negates_yaw_only(self):
        np.testing.assert_allclose(geo.flip_gaze([0.2, 0.1]), [-0.2, 0.1])

    def test_involution(self, rng):
        g = rng.uniform(-1, 1, (40, 2))
        np.testing.assert_array_equal(geo.flip_gaze(geo.flip_gaze(g)), g)

    def test_mirror_preserves_angular_error(self, rng):
        a = rng.uniform(-1.0, 1.0, (200, 2))
        b = rng.uniform(-1.0, 1.0, (200, 2))
        np.testing.assert_allclose(
            geo.angular_error(geo.flip_gaze(a), geo.flip_gaze(b)),
            geo.angular_error(a, b), atol=1e-9)


class TestAveragePair:
    def test_componentwise_mean(self):
        np.testing.assert_allclose(geo.average_pair([0.1, 0.2], [0.3, 0.0]), [0.2, 0.1])

    def test_idempotent_on_equal(self):
        np.testing.assert_allclose(geo.average_pair([0.4, -0.1], [0.4, -0.1]), [0.4, -0.1])

    def test_commutes_with_flip(self, rng):
        left = rng.uniform(-1, 1, 2)
        right = rng.uniform(-1, 1, 2)
        np.testing.assert_allclose(
            geo.average_pair(geo.flip_gaze(left), geo.flip_gaze(right)),
            geo.flip_gaze(geo.average_pair(left, right)))


class TestHeadposeFromRotvec:
    def test_identity_rotation(self):
        np.testing.assert_allclose(geo.headpose_from_rotvec([0.0, 0.0, 0.0]), [0.0, 0.0])

    def test_quarter_turn_about_x_hits_pole(self):
        yaw, pitch = geo.headpose_from_rotvec([math.pi / 2, 0.0, 0.0])
        assert pitch == pytest.approx(-math.pi / 2)
        assert yaw == 0.0

    def test_rotated_axis_stays_unit(self, rng):
        for _ in range(200):
            r = rng.uniform(-math.pi, math.pi, 3)
            z = geo.rodrigues(r)[:, 2]
            assert abs(np.linalg.norm(z) - 1.0) < 1e-9
            yaw, pitch = geo.headpose_from_rotvec(r)
            assert -math.pi <= yaw <= math.pi
            assert -math.pi / 2 <= pitch <= math.pi / 2
