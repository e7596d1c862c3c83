import numpy as np
import pytest

from conftest import make_labels
from oracles import (
    brute_class_distances,
    brute_collision_count,
    brute_edt,
    brute_gap_region,
    random_label_volume,
)

from mpseg.distance import (
    WeightMapParams,
    class_distances,
    detect_collisions,
    edt,
    erode_labels,
    gap_region,
    weight_map,
)
from mpseg.errors import DataError


class TestEdt:
    def test_three_four_five(self):
        mask = np.zeros((8, 8, 8), bool)
        mask[0, 0, 0] = True
        assert edt(mask)[3, 4, 0] == 5.0

    def test_all_true_is_zero(self):
        assert edt(np.ones((5, 5, 5), bool)).max() == 0.0

    def test_empty_mask_is_inf(self):
        assert np.all(np.isinf(edt(np.zeros((4, 4, 4), bool))))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(3, 13, 3))
        mask = rng.uniform(size=shape) < rng.uniform(0.02, 0.3)
        got = edt(mask)
        want = brute_edt(mask)
        if not mask.any():
            assert np.all(np.isinf(got))
        else:
            assert np.abs(got - want).max() <= 1e-9

    def test_anisotropic_spacing_mode(self):
        from mpseg.volume import VolumeGeometry
        mask = np.zeros((6, 6, 6), bool)
        mask[0, 0, 0] = True
        g = VolumeGeometry((6, 6, 6), (2.0, 1.0, 1.0))
        d = edt(mask, geometry=g, units="mm")
        assert d[3, 0, 0] == pytest.approx(6.0)
        assert d[0, 3, 0] == pytest.approx(3.0)


class TestClassDistances:
    def test_midpoint_between_two_point_classes(self):
        labels = np.zeros((16, 4, 4), np.int32)
        labels[2, 1, 1] = 1
        labels[12, 1, 1] = 2
        cdf = class_distances(make_labels(labels, 3))
        assert cdf.d1[7, 1, 1] == 5.0
        assert cdf.d2[7, 1, 1] == 5.0

    def test_inside_class_is_zero(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[1:3, 1:3, 1:3] = 2
        labels[4, 4, 4] = 1
        cdf = class_distances(make_labels(labels, 3))
        assert cdf.d1[1, 1, 1] == 0.0
        assert cdf.nearest_class[1, 1, 1] == 2

    def test_single_class_has_infinite_d2(self):
        labels = np.zeros((5, 5, 5), np.int32)
        labels[2, 2, 2] = 1
        cdf = class_distances(make_labels(labels, 4))
        assert np.all(np.isinf(cdf.d2))
        assert np.all(cdf.second_class == -1)

    def test_background_only(self):
        cdf = class_distances(make_labels(np.zeros((4, 4, 4), np.int32), 1))
        assert np.all(np.isinf(cdf.d1)) and np.all(np.isinf(cdf.d2))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(100 + seed)
        labels = random_label_volume(rng, (12, 12, 12), num_classes=4)
        cdf = class_distances(make_labels(labels, 4))
        d1, d2, c1, c2 = brute_class_distances(labels, 4)
        assert np.allclose(cdf.d1, d1, atol=1e-9, equal_nan=False)
        finite2 = np.isfinite(d2)
        assert np.array_equal(np.isfinite(cdf.d2), finite2)
        assert np.abs(cdf.d2[finite2] - d2[finite2]).max() <= 1e-9
        assert np.array_equal(cdf.nearest_class, c1)
        assert np.array_equal(cdf.second_class, c2)

    def test_d1_le_d2_and_distinct_classes(self):
        rng = np.random.default_rng(3)
        labels = random_label_volume(rng, (10, 10, 10), num_classes=4)
        cdf = class_distances(make_labels(labels, 4))
        assert np.all(cdf.d1 <= cdf.d2)
        finite = np.isfinite(cdf.d2)
        assert np.all(cdf.nearest_class[finite] != cdf.second_class[finite])
        assert np.all(cdf.d1[labels > 0] == 0.0)


class TestWeightMap:
    def test_spot_value(self):
        # two point classes 5 apart: between them d1+d2 = 5 at every voxel
        labels = np.zeros((8, 3, 3), np.int32)
        labels[1, 1, 1] = 1
        labels[6, 1, 1] = 2
        wm = weight_map(make_labels(labels, 3))
        expected = 1.0 + 10.0 * np.exp(-25.0 / 50.0)
        for x in (2, 3, 4, 5):
            assert wm.data[x, 1, 1] == pytest.approx(expected, abs=1e-4)

    def test_far_from_classes_approaches_wc(self):
        labels = np.zeros((40, 3, 3), np.int32)
        labels[0, 1, 1] = 1
        labels[1, 1, 1] = 2
        wm = weight_map(make_labels(labels, 3))
        assert wm.data[39, 2, 2] == pytest.approx(1.0, abs=1e-6)

    def test_single_class_uniform_wc(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[2:4, 2:4, 2:4] = 1
        wm = weight_map(make_labels(labels, 2))
        assert np.all(wm.data == 1.0)

    def test_bounds(self):
        rng = np.random.default_rng(4)
        labels = random_label_volume(rng, (12, 12, 12), num_classes=3)
        p = WeightMapParams(w0=10.0, sigma=5.0, wc=1.0)
        wm = weight_map(make_labels(labels, 3), p)
        assert wm.data.min() >= p.wc
        assert wm.data.max() <= p.wc + p.w0 + 1e-6

    def test_axis_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        labels = random_label_volume(rng, (10, 11, 12), num_classes=3)
        base = weight_map(make_labels(labels, 3)).data
        perm = (2, 0, 1)
        permuted = weight_map(make_labels(np.transpose(labels, perm), 3)).data
        assert np.allclose(np.transpose(base, perm), permuted, atol=1e-12)
        flipped = weight_map(make_labels(labels[::-1].copy(), 3)).data
        assert np.allclose(base[::-1], flipped, atol=1e-12)

    def test_erosion_monotonicity(self):
        from mpseg.distance import border_class_distances
        rng = np.random.default_rng(6)
        labels = random_label_volume(rng, (14, 14, 14), num_classes=3,
                                     blob_radius=(3, 5))
        y = make_labels(labels, 3)
        set_sums, border_sums, weights = [], [], []
        for r in (0, 1, 2):
            lv, _ = erode_labels(y, r)
            cdf = class_distances(lv)
            set_sums.append(cdf.d1 + cdf.d2)
            b1, b2 = border_class_distances(lv)
            border_sums.append(b1 + b2)
            weights.append(weight_map(y, WeightMapParams(erode_radius_vox=r)).data)
        # voxel-set distances never shrink under erosion ...
        assert np.all(set_sums[1] >= set_sums[0] - 1e-12)
        assert np.all(set_sums[2] >= set_sums[1] - 1e-12)
        # ... and so the weight's exponential term never grows outside the
        # foreground; inside, the shrinking own-border distance may raise it
        # slightly, which is what lets erosion emphasize boundary voxels
        bg = labels == 0
        for arr in (border_sums, ):
            assert np.all(arr[1][bg] >= arr[0][bg] - 1e-12)
            assert np.all(arr[2][bg] >= arr[1][bg] - 1e-12)
        assert np.all(weights[1][bg] <= weights[0][bg] + 1e-6)
        assert np.all(weights[2][bg] <= weights[1][bg] + 1e-6)

    def test_eroding_away_a_class_warns_and_reports(self):
        labels = np.zeros((8, 8, 8), np.int32)
        labels[1, 1, 1] = 1       # single voxel: erosion by 2 empties it
        labels[4:7, 4:7, 4:7] = 2
        y = make_labels(labels, 3)
        with pytest.warns(UserWarning):
            wm = weight_map(y, WeightMapParams(erode_radius_vox=2))
        assert wm.meta["emptied_classes"] == [1, 2]

    def test_param_validation(self):
        with pytest.raises(DataError):
            WeightMapParams(sigma=0.0)
        with pytest.raises(DataError):
            WeightMapParams(w0=-1.0)


class TestErosion:
    def test_ball_erosion_semantics(self):
        # 5x5x5 cube eroded by r=1 keeps the 3x3x3 core; r=2 keeps the center
        mask = np.zeros((9, 9, 9), bool)
        mask[2:7, 2:7, 2:7] = True
        y = make_labels(mask.astype(np.int32), 2)
        r1, _ = erode_labels(y, 1)
        assert np.array_equal(r1.labels > 0, np.pad(np.ones((3, 3, 3), bool), 3))
        r2, _ = erode_labels(y, 2)
        assert int((r2.labels > 0).sum()) == 1

    def test_grid_border_counts_as_outside(self):
        mask = np.ones((4, 4, 4), bool)
        y = make_labels(mask.astype(np.int32), 2)
        r1, _ = erode_labels(y, 1)
        expected = np.zeros((4, 4, 4), bool)
        expected[1:3, 1:3, 1:3] = True
        assert np.array_equal(r1.labels > 0, expected)


class TestGapRegion:
    def test_wide_gap_empty_on_midline(self):
        labels = np.zeros((40, 5, 5), np.int32)
        labels[4, 2, 2] = 1
        labels[34, 2, 2] = 2
        y = make_labels(labels, 3)
        g = gap_region(y, 10.0)
        assert not g[19, 2, 2]
        d1, d2, _, _ = brute_class_distances(labels, 3)
        assert np.array_equal(g, (d1 + d2) < 10.0)

    def test_infinite_epsilon_covers_grid(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[1, 1, 1] = 1
        labels[4, 4, 4] = 2
        assert gap_region(make_labels(labels, 3), np.inf).all()

    def test_single_class_empty(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[2:4, 2:4, 2:4] = 1
        assert not gap_region(make_labels(labels, 2), 10.0).any()

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(7)
        labels = random_label_volume(rng, (12, 12, 12), num_classes=3)
        y = make_labels(labels, 3)
        g1, g2 = gap_region(y, 4.0), gap_region(y, 9.0)
        assert not (g1 & ~g2).any()

    def test_epsilon_must_be_positive(self):
        y = make_labels(np.zeros((3, 3, 3), np.int32), 1)
        with pytest.raises(DataError):
            gap_region(y, 0.0)


class TestCollisions:
    def test_clean_gap_has_no_collisions(self):
        labels = np.zeros((10, 4, 4), np.int32)
        labels[0:3, :, :] = 1
        labels[7:10, :, :] = 2  # 4-voxel index gap between facing surfaces
        rep = detect_collisions(make_labels(labels, 3), epsilon=2.0)
        assert rep.count == 0

    def test_face_adjacent_classes(self):
        labels = np.zeros((10, 10, 10), np.int32)
        labels[0:5, :, :] = 1
        labels[5:10, :, :] = 2
        rep = detect_collisions(make_labels(labels, 3), epsilon=2.0)
        want_count, want_points = brute_collision_count(labels, 3, 2.0)
        assert rep.count == want_count
        assert set(map(tuple, rep.points)) == set(want_points)

    def test_single_class_empty(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[2:4, 2:4, 2:4] = 1
        assert detect_collisions(make_labels(labels, 2), 2.0).count == 0

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(30 + seed)
        labels = random_label_volume(rng, (11, 11, 11), num_classes=4)
        for eps in (0.0, 1.0, 2.0, 3.5):
            rep = detect_collisions(make_labels(labels, 4), eps)
            want, _ = brute_collision_count(labels, 4, eps)
            assert rep.count == want

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(40)
        labels = random_label_volume(rng, (12, 12, 12), num_classes=3)
        y = make_labels(labels, 3)
        counts = [detect_collisions(y, e).count for e in (0, 1, 2, 4, 8)]
        assert counts == sorted(counts)

    def test_truncation_keeps_exact_count(self):
        labels = np.zeros((10, 10, 10), np.int32)
        labels[0:5, :, :] = 1
        labels[5:10, :, :] = 2
        full = detect_collisions(make_labels(labels, 3), 2.0)
        cut = detect_collisions(make_labels(labels, 3), 2.0, max_points=5)
        assert cut.count == full.count
        assert len(cut.points) == 5
        assert cut.truncated

    def test_report_text_roundtrip(self):
        labels = np.zeros((6, 6, 6), np.int32)
        labels[1, 1, 1] = 1
        labels[1, 1, 2] = 2
        rep = detect_collisions(make_labels(labels, 3), 2.0)
        from mpseg.distance import CollisionReport
        back = CollisionReport.from_text(rep.to_text())
        assert back.count == rep.count and back.epsilon == rep.epsilon
        assert np.array_equal(back.points, rep.points)
