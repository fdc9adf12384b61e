"""
Tests for calibration error, depth alignment and accuracy, and point-cloud
distances.
"""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.error_handler import EmptyInput, GeometryError, RankDeficient, ShapeMismatch
from src.metrics import (
    Alignment,
    align_affine,
    align_scale,
    apply_alignment,
    calib_error,
    chamfer_l1,
    depth_errors,
    fscore,
    nearest_distances,
    nearest_distances_bruteforce,
    rms_error,
)
from src.models import DepthMap, ImageGeometry, Intrinsics, PointCloud


pytestmark = pytest.mark.unit


def cloud(points) -> PointCloud:
    return PointCloud.from_points(points)


class TestCalibError:

    def test_identical_intrinsics(self, scannet):
        err = calib_error(scannet.intrinsics, scannet.intrinsics, scannet.geometry)
        assert (err.e_f, err.e_b) == (0.0, 0.0)

    def test_focal_error_uses_worse_axis(self):
        gt = Intrinsics(fx=500, fy=400, bx=320, by=240)
        pred = Intrinsics(fx=550, fy=400, bx=320, by=240)
        err = calib_error(gt, pred, ImageGeometry(width=640, height=480))
        assert err.e_f == pytest.approx(0.1)
        assert err.e_b == 0.0

    def test_principal_point_normalized_by_half_size(self):
        gt = Intrinsics(fx=500, fy=500, bx=320, by=240)
        pred = Intrinsics(fx=500, fy=500, bx=352, by=252)
        err = calib_error(gt, pred, ImageGeometry(width=640, height=480))
        assert err.e_b == pytest.approx(0.1)


class TestDepthAlignment:

    def test_affine_recovers_scale_and_shift(self, ramp_depth):
        gt = apply_alignment(ramp_depth, Alignment(2.5, 0.75))
        scale, shift = align_affine(ramp_depth, gt)
        assert scale == pytest.approx(2.5, rel=1e-12)
        assert shift == pytest.approx(0.75, abs=1e-12)

    def test_scale_only(self, ramp_depth):
        gt = apply_alignment(ramp_depth, Alignment(3.0, 0.0))
        assert align_scale(ramp_depth, gt) == pytest.approx((3.0, 0.0))

    def test_aligned_depth_scores_perfectly(self, ramp_depth):
        gt = apply_alignment(ramp_depth, Alignment(0.5, 1.0))
        aligned = apply_alignment(ramp_depth, align_affine(ramp_depth, gt))
        abs_rel, delta1 = depth_errors(aligned, gt)
        assert abs_rel < 1e-12
        assert delta1 == 1.0

    def test_constant_prediction_is_rank_deficient(self, ramp_depth):
        flat = DepthMap.from_array(np.full(ramp_depth.geometry.shape, 2.0))
        with pytest.raises(RankDeficient):
            align_affine(flat, ramp_depth)

    def test_needs_two_joint_pixels(self):
        values = np.full((2, 2), np.nan)
        values[0, 0] = 1.0
        one = DepthMap.from_array(values)
        with pytest.raises(EmptyInput):
            align_affine(one, one)

    def test_geometry_mismatch(self, ramp_depth):
        other = DepthMap.from_array(np.ones((4, 4)))
        with pytest.raises(ShapeMismatch):
            align_affine(ramp_depth, other)

    def test_invalid_pixels_are_ignored(self, ramp_depth):
        assert not ramp_depth.mask[3, 4]
        assert not ramp_depth.mask[10, 20]
        assert np.isnan(ramp_depth.values[10, 20])
        assert ramp_depth.valid_count == 32 * 24 - 2

    def test_negative_result_becomes_invalid(self, ramp_depth):
        shifted = apply_alignment(ramp_depth, Alignment(1.0, -1.5))
        assert shifted.valid_count < ramp_depth.valid_count
        assert (shifted.values[shifted.mask] > 0).all()


class TestDepthErrors:

    def test_hand_computed(self):
        gt = DepthMap.from_array(np.array([[1.0, 2.0], [4.0, 5.0]]))
        pred = DepthMap.from_array(np.array([[1.1, 2.0], [2.0, 5.0]]))
        abs_rel, delta1 = depth_errors(pred, gt)
        assert abs_rel == pytest.approx((0.1 + 0.0 + 0.5 + 0.0) / 4)
        assert delta1 == 0.75

    def test_threshold_override(self):
        gt = DepthMap.from_array(np.array([[1.0, 2.0], [4.0, 5.0]]))
        pred = DepthMap.from_array(np.array([[1.1, 2.0], [2.0, 5.0]]))
        assert depth_errors(pred, gt, delta1_threshold=2.5).delta1 == 1.0

    def test_no_joint_pixels(self):
        a = DepthMap.from_array(np.array([[1.0, np.nan], [1.0, np.nan]]))
        b = DepthMap.from_array(np.array([[np.nan, 1.0], [np.nan, 1.0]]))
        with pytest.raises(EmptyInput):
            depth_errors(a, b)

    def test_rms_error(self):
        assert rms_error(np.zeros(4), np.full(4, 2.0)) == 2.0
        with pytest.raises(ShapeMismatch):
            rms_error(np.zeros(3), np.zeros(4))


class TestPointClouds:

    def test_nearest_distance_hand_computed(self):
        a = cloud([[0, 0, 0], [10, 0, 0]])
        b = cloud([[0, 0, 1], [10, 3, 4]])
        assert_array_equal(nearest_distances(a, b), [1.0, 5.0])

    def test_chamfer_is_symmetric(self, rng):
        a = cloud(rng.standard_normal((200, 3)))
        b = cloud(rng.standard_normal((150, 3)))
        assert chamfer_l1(a, b) == chamfer_l1(b, a)

    def test_identical_clouds(self, rng):
        a = cloud(rng.standard_normal((100, 3)))
        assert chamfer_l1(a, a) == 0.0
        assert fscore(a, a, tau=1e-6) == 1.0

    def test_translated_cloud(self):
        a = cloud([[0, 0, 0], [5, 5, 5]])
        b = cloud([[0.5, 0, 0], [5.5, 5, 5]])
        assert chamfer_l1(a, b) == pytest.approx(0.5)
        assert fscore(a, b, tau=0.4) == 0.0
        assert fscore(a, b, tau=0.6) == 1.0

    def test_unit_apart_points(self):
        assert chamfer_l1(cloud([[0, 0, 0]]), cloud([[0, 0, 1]])) == 1.0

    @pytest.mark.parametrize("offset, expected", [(0.04, 1.0), (0.06, 0.0)])
    def test_fscore_at_five_centimeters(self, offset, expected):
        assert fscore(cloud([[0, 0, 0]]), cloud([[0, 0, offset]]), tau=0.05) == expected

    def test_fscore_threshold_is_strict(self):
        a = cloud([[0, 0, 0]])
        b = cloud([[0.5, 0, 0]])
        assert fscore(a, b, tau=0.5) == 0.0

    def test_fscore_monotone_in_tau(self, rng):
        a = cloud(rng.standard_normal((300, 3)))
        b = cloud(rng.standard_normal((300, 3)))
        scores = [fscore(a, b, tau=t) for t in (0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 5.0)]
        assert scores == sorted(scores)
        assert scores[-1] == 1.0

    def test_fscore_default_tau_from_settings(self, monkeypatch):
        a = cloud([[0, 0, 0]])
        b = cloud([[0.07, 0, 0]])
        assert fscore(a, b) == 0.0
        monkeypatch.setenv("INCICAL_EVALUATION__FSCORE_TAU", "0.1")
        from src.config import get_settings

        get_settings.cache_clear()
        assert fscore(a, b) == 1.0

    def test_kdtree_matches_bruteforce(self, rng):
        for _ in range(50):
            n, m = rng.integers(1, 400, size=2)
            a = cloud(rng.uniform(-2, 2, (n, 3)))
            b = cloud(rng.uniform(-2, 2, (m, 3)))
            assert_array_equal(nearest_distances(a, b), nearest_distances_bruteforce(a, b))
            assert chamfer_l1(a, b) == chamfer_l1(a, b, bruteforce=True)
            assert fscore(a, b, tau=0.3) == fscore(a, b, tau=0.3, bruteforce=True)

    def test_non_finite_cloud_is_a_geometry_error(self):
        with pytest.raises(GeometryError) as exc_info:
            cloud([[0, 0, 0], [1, np.inf, 2]])
        assert exc_info.value.code.value == "GEO_002"

    def test_empty_cloud(self):
        with pytest.raises(EmptyInput):
            chamfer_l1(cloud([]), cloud([[0, 0, 0]]))

    def test_non_positive_tau(self):
        a = cloud([[0, 0, 0]])
        with pytest.raises(ValueError):
            fscore(a, a, tau=0.0)
