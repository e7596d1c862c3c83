import numpy as np
import pytest

from conftest import make_labels, make_volume

from mpseg.errors import DataError
from mpseg.multiplanar import (
    ViewGrid,
    ViewSet,
    extract_slices,
    fit_grid,
    fuse,
    generate_views,
    pairwise_view_angles_deg,
    reconstruct_view,
    view_basis,
)
from mpseg.volume import ProbabilityVolume, VolumeGeometry


class TestViews:
    def test_canonical_axes(self):
        vs = generate_views(3, canonical=True)
        assert np.array_equal(vs.views, np.eye(3))

    def test_same_seed_same_views(self):
        a = generate_views(6, seed=12)
        b = generate_views(6, seed=12)
        assert np.array_equal(a.views, b.views)
        c = generate_views(6, seed=13)
        assert not np.array_equal(a.views, c.views)

    def test_six_views_sixty_degrees(self):
        vs = generate_views(6, seed=0, min_angle_deg=60.0)
        angles = pairwise_view_angles_deg(vs.views)
        assert len(angles) == 15
        assert angles.min() >= 60.0

    def test_unit_norms_and_hemisphere(self):
        vs = generate_views(5, seed=2)
        assert np.abs(np.linalg.norm(vs.views, axis=1) - 1).max() < 1e-9
        assert np.all(vs.views[:, 2] >= 0)

    def test_infeasible_constraint_errors(self):
        with pytest.raises(DataError):
            generate_views(50, seed=0, min_angle_deg=60.0)

    def test_text_roundtrip(self):
        vs = generate_views(4, seed=9, min_angle_deg=45.0)
        back = ViewSet.from_text(vs.to_text())
        assert np.array_equal(back.views, vs.views)
        assert back.seed == vs.seed
        assert back.min_pairwise_angle_deg == vs.min_pairwise_angle_deg


class TestFitGrid:
    def test_single_cube_infer(self):
        g = VolumeGeometry((100, 100, 100), (1.0, 1.0, 1.0))
        assert fit_grid([g], "infer") == (100, 100.0)

    def test_mean_scan_dimensions(self):
        g = VolumeGeometry((415, 244, 266), (0.78, 0.77, 0.96))
        d, m = fit_grid([g], "infer")
        assert d == 416  # max count 415 rounded up to even
        assert m == pytest.approx(323.7)

    def test_train_uses_75th_percentile(self):
        gs = [VolumeGeometry((10, 20, 30), (1, 1, 1)),
              VolumeGeometry((40, 10, 20), (1, 1, 1))]
        d, m = fit_grid(gs, "train")
        # pooled counts {10,20,30,40,10,20}: 75th pct = 27.5 -> 28
        counts = np.quantile([10, 20, 30, 40, 10, 20], 0.75, method="linear")
        assert d == 28 and counts == 27.5
        assert m == pytest.approx(27.5)

    def test_empty_list_rejected(self):
        with pytest.raises(DataError):
            fit_grid([], "infer")


class TestViewGrid:
    def test_basis_is_right_handed_orthonormal(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.standard_normal(3)
            u, v, nn = view_basis(n)
            assert abs(np.linalg.norm(u) - 1) < 1e-12
            assert abs(u @ v) < 1e-12 and abs(u @ nn) < 1e-12 and abs(v @ nn) < 1e-12
            assert np.allclose(np.cross(u, v), nn, atol=1e-12)

    def test_mapping_invertible(self):
        grid = ViewGrid.from_normal((0.3, -0.5, 0.8), (10.0, -4.0, 7.0), 50.0, 32)
        rng = np.random.default_rng(1)
        abk = rng.uniform(0, 31, (100, 3))
        back = grid.physical_to_grid(grid.grid_to_physical(abk))
        assert np.abs(back - abk).max() < 1e-9


class TestExtractSlices:
    def test_canonical_alignment_matches_raw_planes(self):
        rng = np.random.default_rng(2)
        n = 16
        vol = make_volume(rng.uniform(0, 1, (n, n, n)))
        batch = extract_slices(vol, (0, 0, 1), n, float(n))
        # sampled grid coincides with voxel centers: pixel (a, b) of slice k
        # lands on voxel (n-1-b, a, k) for this normal's derived basis
        for k in (0, n // 2, n - 1):
            expected = vol.data[::-1, :, k].T
            assert np.abs(batch.images[k] - expected).max() < 1e-6

    def test_fully_outside_slice_is_fill(self):
        vol = make_volume(np.full((8, 8, 8), 5.0))
        batch = extract_slices(vol, (0, 0, 1), 8, 8.0, center_mm=(3.5, 3.5, 100.0))
        assert np.all(batch.images[0] == 0.0)
        lab = make_labels(np.ones((8, 8, 8), np.int32), 2)
        batch = extract_slices(vol, (0, 0, 1), 8, 8.0, center_mm=(3.5, 3.5, 100.0),
                               labels=lab)
        assert np.all(batch.labels[0] == 0)

    def test_label_channel_closed_under_classes(self):
        rng = np.random.default_rng(3)
        vol = make_volume(rng.uniform(0, 1, (12, 12, 12)))
        lab = make_labels(rng.integers(0, 4, (12, 12, 12)), 4)
        batch = extract_slices(vol, rng.standard_normal(3), 16, 18.0, labels=lab)
        assert batch.labels.max() < 4
        assert batch.num_classes == 4

    def test_weight_fill_is_one(self):
        vol = make_volume(np.zeros((6, 6, 6)))
        weights = make_volume(np.full((6, 6, 6), 3.0))
        batch = extract_slices(vol, (0, 0, 1), 6, 12.0, weights=weights)
        assert batch.weights.max() == 3.0
        assert batch.weights.min() == 1.0  # outside fill


class TestReconstruct:
    def test_identity_on_aligned_view(self):
        rng = np.random.default_rng(4)
        n = 12
        g = VolumeGeometry((n, n, n))
        vol = make_volume(rng.uniform(0, 1, (n, n, n)))
        batch = extract_slices(vol, (0, 0, 1), n, float(n))
        probs = rng.uniform(0, 1, (n, n, n, 3)).astype(np.float32)
        recon = reconstruct_view(probs, batch.grid, g)
        # voxel centers coincide with grid points: value must round-trip
        ijk = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), -1).reshape(-1, 3)
        abk = batch.grid.physical_to_grid(g.index_to_physical(ijk))
        r = np.round(abk).astype(int)
        assert np.abs(abk - r).max() < 1e-9
        expected = probs[r[:, 2], r[:, 0], r[:, 1], :]
        assert np.abs(recon.probs.reshape(-1, 3) - expected).max() < 1e-5

    def test_constant_field_reconstructs_constant_inside(self):
        g = VolumeGeometry((10, 10, 10))
        vol = make_volume(np.zeros((10, 10, 10)))
        batch = extract_slices(vol, (0.3, 0.4, 0.86), 14, 16.0)
        probs = np.full((14, 14, 14, 2), 0.5, np.float32)
        recon = reconstruct_view(probs, batch.grid, g)
        inside = recon.probs.sum(-1) > 0
        assert inside.any()
        assert np.allclose(recon.probs[inside], 0.5, atol=1e-6)

    def test_one_hot_interior_argmax(self):
        g = VolumeGeometry((10, 10, 10))
        vol = make_volume(np.zeros((10, 10, 10)))
        batch = extract_slices(vol, (0, 0, 1), 10, 10.0)
        probs = np.zeros((10, 10, 10, 3), np.float32)
        probs[..., 2] = 1.0
        recon = reconstruct_view(probs, batch.grid, g)
        assert np.all(np.argmax(recon.probs, -1) == 2)

    def test_outside_cube_is_zero_and_unnormalized(self):
        g = VolumeGeometry((20, 20, 20))
        vol = make_volume(np.zeros((6, 6, 6)), origin=(7, 7, 7))
        batch = extract_slices(vol, (0, 0, 1), 6, 6.0)
        probs = np.full((6, 6, 6, 2), 0.5, np.float32)
        recon = reconstruct_view(probs, batch.grid, g)
        assert not recon.normalized
        assert np.all(recon.probs[0, 0, 0] == 0.0)

    def test_shape_mismatch(self):
        grid = ViewGrid.from_normal((0, 0, 1), (0, 0, 0), 8.0, 8)
        with pytest.raises(DataError):
            reconstruct_view(np.zeros((4, 8, 8, 2), np.float32), grid,
                             VolumeGeometry((8, 8, 8)))


class TestFuse:
    def _pv(self, probs):
        probs = np.asarray(probs, np.float32)
        return ProbabilityVolume(VolumeGeometry(probs.shape[:3]), probs)

    def test_single_one_hot_view(self):
        probs = np.zeros((2, 2, 2, 3), np.float32)
        probs[..., 1] = 1.0
        assert np.all(fuse([self._pv(probs)]).labels == 1)

    def test_two_view_vote(self):
        a = np.zeros((1, 1, 1, 2), np.float32)
        b = np.zeros((1, 1, 1, 2), np.float32)
        a[0, 0, 0] = [0.6, 0.4]
        b[0, 0, 0] = [0.1, 0.9]
        fused = fuse([self._pv(a), self._pv(b)])
        assert fused.labels[0, 0, 0] == 1  # sums 0.7 vs 1.3

    def test_duplicate_views_scale_invariant(self):
        rng = np.random.default_rng(5)
        probs = rng.uniform(0, 1, (4, 4, 4, 3)).astype(np.float32)
        once = fuse([self._pv(probs)])
        thrice = fuse([self._pv(probs)] * 3)
        assert np.array_equal(once.labels, thrice.labels)

    def test_all_zero_goes_background(self):
        probs = np.zeros((2, 2, 2, 4), np.float32)
        assert np.all(fuse([self._pv(probs)]).labels == 0)

    def test_tie_breaks_low(self):
        probs = np.zeros((1, 1, 1, 3), np.float32)
        probs[0, 0, 0] = [0.5, 0.5, 0.0]
        assert fuse([self._pv(probs)]).labels[0, 0, 0] == 0

    def test_order_invariance_away_from_ties(self):
        rng = np.random.default_rng(6)
        pvs = [self._pv(rng.uniform(0, 1, (5, 5, 5, 3)).astype(np.float32))
               for _ in range(4)]
        a = fuse(pvs)
        b = fuse(pvs[::-1])
        total = np.zeros((5, 5, 5, 3))
        for pv in pvs:
            total += pv.probs.astype(np.float64)
        sorted_sums = np.sort(total, axis=-1)
        safe = (sorted_sums[..., -1] - sorted_sums[..., -2]) > 1e-6
        assert np.array_equal(a.labels[safe], b.labels[safe])

    def test_mismatch_errors(self):
        a = self._pv(np.zeros((2, 2, 2, 3), np.float32))
        b = ProbabilityVolume(VolumeGeometry((2, 2, 2), (2, 2, 2)),
                              np.zeros((2, 2, 2, 3), np.float32))
        with pytest.raises(DataError):
            fuse([a, b])
        c = self._pv(np.zeros((2, 2, 2, 4), np.float32))
        with pytest.raises(DataError):
            fuse([a, c])
        with pytest.raises(DataError):
            fuse([])
