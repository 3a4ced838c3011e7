import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wamkit.mvee import (DegenerateCloudError, Ellipsoid, WindowScheme,
                         features, mvee, unit_ball_volume)

TOL = 1e-7


def random_cloud(seed, d=None, n=None):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 5))
    n = n or int(rng.integers(d + 2, 51))
    return rng.standard_normal((n, d))


class TestMvee:
    def test_square_corners_circle(self):
        P = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        e = mvee(P, tol=1e-9)
        f = features(e)
        assert np.allclose(e.center, 0.0, atol=1e-6)
        assert np.allclose(f.semi_axes, np.sqrt(2.0), atol=1e-6)
        assert abs(f.volume - 2 * np.pi) < 1e-6

    def test_affine_volume_scaling(self):
        # oracle: recompute the MVEE on the mapped points
        rng = np.random.default_rng(5)
        P = random_cloud(11, d=3, n=30)
        T = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        v0 = features(mvee(P, TOL)).volume
        v1 = features(mvee(P @ T.T, TOL)).volume
        assert abs(v1 - abs(np.linalg.det(T)) * v0) <= 1e-5 * max(v1, v0)

    def test_containment_and_support_points(self):
        P = random_cloud(21, d=2, n=20)
        e = mvee(P, TOL)
        dist = e.distance(P)
        assert (dist <= 1 + 10 * TOL).all()
        assert np.sum(dist >= 1 - 10 * TOL) >= 3

    def test_translation_invariance(self):
        P = random_cloud(33, d=3)
        v = np.array([5.0, -2.0, 11.0])
        e0 = mvee(P, TOL)
        e1 = mvee(P + v, TOL)
        assert np.abs(e1.center - (e0.center + v)).max() < 1e-6
        assert np.abs(e1.shape - e0.shape).max() < 1e-6

    def test_duplicate_point_no_change(self):
        P = random_cloud(44, d=2, n=15)
        e0 = mvee(P, TOL)
        e1 = mvee(np.vstack([P, P[3]]), TOL)
        assert np.abs(e1.center - e0.center).max() < 1e-6
        assert np.abs(e1.shape - e0.shape).max() < 1e-6

    def test_degenerate_rank_reported(self):
        P = np.zeros((10, 3))
        P[:, 0] = np.arange(10)
        P[:, 1] = 2 * np.arange(10)  # rank 1 cloud in 3-D
        with pytest.raises(DegenerateCloudError) as exc:
            mvee(P)
        assert exc.value.rank < 3

    def test_too_few_points(self):
        with pytest.raises(DegenerateCloudError):
            mvee(np.array([[0.0, 0.0], [1.0, 1.0]]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_containment_property(self, seed):
        P = random_cloud(seed)
        e = mvee(P, TOL)
        assert (e.distance(P) <= 1 + 10 * TOL).all()


class TestFeatures:
    def test_unit_circle(self):
        f = features(Ellipsoid(np.zeros(2), np.eye(2)))
        assert abs(f.volume - np.pi) < 1e-12
        assert np.allclose(f.semi_axes, 1.0)
        assert f.eccentricity == 1.0

    def test_diagonal_closed_form(self):
        f = features(Ellipsoid(np.zeros(2), np.diag([1.0, 4.0])))
        assert np.allclose(f.semi_axes, [1.0, 0.5])
        assert abs(f.volume - np.pi / 2) < 1e-12

    def test_square_corner_volume(self):
        P = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        assert abs(features(mvee(P, 1e-9)).volume - 2 * np.pi) < 1e-6

    def test_volume_matches_determinant_formula(self):
        P = random_cloud(7, d=3)
        e = mvee(P, TOL)
        f = features(e)
        v_det = unit_ball_volume(3) / np.sqrt(np.linalg.det(e.shape))
        assert abs(f.volume - v_det) <= 1e-9 * v_det

    def test_non_spd_rejected(self):
        with pytest.raises(ValueError):
            features(Ellipsoid(np.zeros(2), np.diag([1.0, -1.0])))


class TestWindowScheme:
    def test_default_windows_ordered(self):
        spans = WindowScheme().windows()
        assert spans == [(-2.0, 0.0), (0.0, 2.0), (2.0, 6.0), (6.0, 14.0)]

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            WindowScheme(w2=(-1.0, 2.0)).windows()
