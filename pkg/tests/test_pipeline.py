import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from ratspn_ad.autoencoders import AEConfig, build_ae
from ratspn_ad.circuit import rat_spn
from ratspn_ad.pipeline import (
    LabeledImage,
    PatchSet,
    extract_dataset_patches,
    extract_patches,
    make_synthetic_dataset,
    read_dataset,
    score_image,
    split_dataset,
    threshold_heatmap,
    upsample_nearest,
    write_dataset,
)
from ratspn_ad.pipeline.patches import InsufficientCandidatesError, patch_at
from ratspn_ad.pipeline.scoring import HeatmapResult, grid_centers, grid_shape, valid_positions


@pytest.fixture(scope="module")
def mixed():
    return make_synthetic_dataset(4, 6, 4, 128, seed=5)


def full_tissue_image(size=256, seed=0):
    rng = np.random.default_rng(seed)
    img = (rng.random((size, size)) * 255).astype(np.uint8)
    full = np.ones((size, size), bool)
    return LabeledImage(img, full, np.zeros_like(full), "s", "img")


class DownsampleAE:
    """Fixed encoder: 8x8 block means of the patch, 64 features."""

    latent_dim = 64

    def encode(self, patches):
        p = np.asarray(patches, dtype=np.float64)
        return p.reshape(len(p), 8, 8, 8, 8).mean(axis=(2, 4)).reshape(len(p), 64)


class TestSynthetic:
    def test_healthy_only_masks_empty(self):
        assert all(not im.anomaly_mask.any() for im in make_synthetic_dataset(5, 0, 0, 128, seed=1))

    def test_deterministic(self):
        a = make_synthetic_dataset(2, 2, 2, 128, seed=3)
        b = make_synthetic_dataset(2, 2, 2, 128, seed=3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.anomaly_mask, y.anomaly_mask)

    def test_seed_changes_images(self):
        a = make_synthetic_dataset(1, 0, 0, 128, seed=0)[0]
        b = make_synthetic_dataset(1, 0, 0, 128, seed=1)[0]
        assert not np.array_equal(a.image, b.image)

    def test_labels_and_subjects(self, mixed):
        assert [im.label for im in mixed].count("mass") == 6
        assert len({im.image_id for im in mixed}) == len(mixed)
        assert mixed[0].subject_id == mixed[1].subject_id
        assert all(im.anomaly_mask.any() for im in mixed if im.label != "healthy")
        assert all(not (im.anomaly_mask & ~im.tissue_mask).any() for im in mixed)

    def test_mass_brighter_than_annulus(self, mixed):
        for im in (m for m in mixed if m.label == "mass"):
            labels, n = ndimage.label(im.anomaly_mask)
            inside = im.anomaly_mask
            ring = ndimage.binary_dilation(inside, iterations=10) & ~ndimage.binary_dilation(inside, iterations=4)
            ring &= im.tissue_mask
            assert im.pixels[inside].mean() - im.pixels[ring].mean() >= 0.1

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_synthetic_dataset(1, image_size=96)

    def test_subset_invariant(self):
        with pytest.raises(ValueError):
            LabeledImage(np.zeros((4, 4), np.uint8), np.zeros((4, 4)), np.ones((4, 4)), "s", "i")

    def test_dataset_round_trip(self, mixed, tmp_path):
        manifest = write_dataset(mixed[:3], tmp_path)
        back = read_dataset(manifest)
        for a, b in zip(mixed[:3], back):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.tissue_mask, b.tissue_mask)
            assert (a.subject_id, a.image_id, a.label) == (b.subject_id, b.image_id, b.label)


class TestPatches:
    def test_default_count_and_shape(self, mixed):
        ps = extract_patches(mixed[0], rng=np.random.default_rng(0))
        assert ps.patches.shape == (120, 64, 64)

    @pytest.mark.parametrize("n", [1, 7, 120])
    def test_tag_balance(self, mixed, n):
        ps = extract_patches(mixed[0], n, np.random.default_rng(1))
        tags = [p.region for p in ps.provenance]
        assert tags.count("interior") == -(-n // 2) and tags.count("contour") == n // 2

    def test_in_bounds_and_content(self, mixed):
        img = mixed[2]
        ps = extract_patches(img, 40, np.random.default_rng(2))
        for patch, p in zip(ps.patches, ps.provenance):
            assert 32 <= p.row <= 96 and 32 <= p.col <= 96
            np.testing.assert_array_equal(patch, img.pixels[p.row - 32 : p.row + 32, p.col - 32 : p.col + 32])

    def test_regions_against_brute_force_distance(self, mixed):
        img = mixed[1]
        ps = extract_patches(img, 60, np.random.default_rng(3))
        boundary = np.argwhere(img.tissue_mask ^ ndimage.binary_erosion(img.tissue_mask, border_value=1))
        outside = np.argwhere(~img.tissue_mask)
        for p in ps.provenance:
            if p.region == "contour":
                # distance from the center to the nearest pixel of the other class
                other = outside if img.tissue_mask[p.row, p.col] else np.argwhere(img.tissue_mask)
                d = np.sqrt(((other - [p.row, p.col]) ** 2).sum(1)).min()
                assert d <= 8
            else:
                assert img.tissue_mask[p.row, p.col]
                assert np.sqrt(((outside - [p.row, p.col]) ** 2).sum(1)).min() > 8
        assert len(boundary)

    def test_no_anomaly_overlap(self):
        big = make_synthetic_dataset(0, 2, 2, 256, seed=4)
        for img in big:
            ps = extract_patches(img, 30, np.random.default_rng(4))
            for p in ps.provenance:
                assert not img.anomaly_mask[p.row - 32 : p.row + 32, p.col - 32 : p.col + 32].any()

    def test_insufficient_candidates(self):
        tissue = np.ones((128, 128), bool)
        anomaly = tissue.copy()
        img = LabeledImage(np.zeros((128, 128), np.uint8), tissue, anomaly, "s", "x")
        with pytest.raises(InsufficientCandidatesError):
            extract_patches(img, 4, np.random.default_rng(0))

    def test_dataset_deterministic_and_save(self, mixed, tmp_path):
        a = extract_dataset_patches(mixed[:3], 6, seed=9)
        b = extract_dataset_patches(mixed[:3], 6, seed=9)
        np.testing.assert_array_equal(a.patches, b.patches)
        a.save(tmp_path / "p.aetn", tmp_path / "p.csv")
        back = PatchSet.load(tmp_path / "p.aetn", tmp_path / "p.csv")
        np.testing.assert_allclose(back.patches, a.patches, atol=1e-7)
        assert back.provenance == a.provenance


class TestSplit:
    def _images(self, subjects):
        ims = []
        for s in range(subjects):
            for k in range(2):
                ims.append(LabeledImage(np.zeros((2, 2), np.uint8), np.ones((2, 2)), np.zeros((2, 2)), f"S{s}", f"I{s}{k}"))
        return ims

    def test_ninety_ten(self):
        train, val = split_dataset(self._images(10), 0.9, seed=0)
        assert len({i.subject_id for i in train}) == 9 and len({i.subject_id for i in val}) == 1

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(2, 40), seed=st.integers(0, 1000))
    def test_no_subject_overlap(self, n, seed):
        train, val = split_dataset(self._images(n), 0.9, seed)
        assert train and val
        assert not {i.subject_id for i in train} & {i.subject_id for i in val}
        assert len(train) + len(val) == 2 * n

    def test_seeded(self):
        a = split_dataset(self._images(8), 0.5, seed=3)
        b = split_dataset(self._images(8), 0.5, seed=3)
        assert [i.image_id for i in a[0]] == [i.image_id for i in b[0]]

    def test_too_few_subjects(self):
        with pytest.raises(ValueError):
            split_dataset(self._images(1))


class TestGrid:
    def test_256_full_tissue_13x13(self):
        img = full_tissue_image()
        hm = score_image(img, DownsampleAE(), rat_spn(64, 1, 1, 2, seed=0))
        assert hm.grid_shape == (13, 13) and hm.valid.all()
        assert hm.image_shape == (256, 256)

    @pytest.mark.parametrize("h,w,stride", [(128, 128, 16), (200, 130, 16), (100, 90, 7)])
    def test_grid_shape_formula(self, h, w, stride):
        assert grid_shape((h, w), stride) == ((h - 64) // stride + 1, (w - 64) // stride + 1)

    def test_valid_mask_brute_force(self, mixed):
        for img in mixed[:4]:
            v = valid_positions(img.tissue_mask)
            expected = np.zeros_like(v)
            for i in range(v.shape[0]):
                for j in range(v.shape[1]):
                    expected[i, j] = img.tissue_mask[i * 16 + 32, j * 16 + 32]
            np.testing.assert_array_equal(v, expected)

    def test_upsample_nearest_center(self):
        grid = np.arange(4.0).reshape(2, 2)
        up = upsample_nearest(grid, (80, 80), 16)
        assert up[32, 32] == 0 and up[48, 48] == 3 and up[0, 79] == 1
        assert up[39, 39] == 0 and up[40, 40] == 3


class TestScoring:
    def test_cae_scores_equal_mse(self, mixed):
        ae = build_ae("CAE", AEConfig(channels=(2, 2, 2), latent_dim=4, seed=0))
        img = mixed[0]
        hm = score_image(img, ae)
        rows, cols = grid_centers(img.shape)
        for i, j in zip(*np.nonzero(hm.valid)):
            p = patch_at(img.pixels, rows[i], cols[j])
            mse = np.mean((ae.reconstruct(p[None])[0] - p) ** 2)
            assert hm.scores[i, j] == pytest.approx(mse, rel=1e-12)
        assert np.all(hm.scores[~hm.valid] == hm.valid_scores().min())

    def test_composition_with_projection_fixture(self, mixed):
        img = mixed[3]
        ae = DownsampleAE()
        rows, cols = grid_centers(img.shape)
        vr, vc = np.nonzero(valid_positions(img.tissue_mask))
        patches = np.stack([patch_at(img.pixels, rows[i], cols[j]) for i, j in zip(vr, vc)])
        c = rat_spn(64, 1, 2, 2, seed=1, leaf_init=ae.encode(patches))
        c.set_standardization(ae.encode(patches))
        hm = score_image(img, ae, c)
        np.testing.assert_allclose(hm.scores[vr, vc], -c.log_likelihood(c.standardize(ae.encode(patches))), rtol=1e-13)

    def test_dimension_mismatch(self, mixed):
        with pytest.raises(ValueError):
            score_image(mixed[0], DownsampleAE(), rat_spn(16, 1, 1, 2))

    def test_bvae_scoring_deterministic(self, mixed):
        ae = build_ae("BVAE", AEConfig(channels=(2, 2, 2), latent_dim=4, seed=0))
        a = score_image(mixed[0], ae, seed=4)
        b = score_image(mixed[0], ae, seed=4)
        np.testing.assert_array_equal(a.scores, b.scores)


def heatmap_from(scores, valid=None):
    scores = np.asarray(scores, dtype=np.float64)
    valid = np.ones(scores.shape, bool) if valid is None else valid
    h, w = (np.array(scores.shape) - 1) * 16 + 64
    return HeatmapResult(scores, valid, upsample_nearest(scores, (h, w)), 16)


class TestThreshold:
    def test_constant_map_empty(self):
        assert not threshold_heatmap(heatmap_from(np.full((5, 5), 3.0))).any()

    def test_one_to_hundred(self):
        hm = heatmap_from(np.arange(1.0, 101.0).reshape(10, 10))
        threshold_heatmap(hm, 99)
        seg_grid = hm.segmentation[np.ix_(*hm.centers())]
        assert seg_grid.sum() == 1 and seg_grid[9, 9]

    def test_area_about_one_percent(self):
        rng = np.random.default_rng(0)
        hm = heatmap_from(rng.random((100, 100)))
        threshold_heatmap(hm, 99)
        frac = hm.segmentation[np.ix_(*hm.centers())].mean()
        assert abs(frac - 0.01) < 0.002

    def test_only_valid_positions(self):
        scores = np.arange(25.0).reshape(5, 5)
        valid = np.ones((5, 5), bool)
        valid[4, 4] = False
        hm = heatmap_from(scores, valid)
        threshold_heatmap(hm, 50)
        assert not hm.segmentation[np.ix_(*hm.centers())][4, 4]

    def test_invalid_percentile_and_empty(self):
        with pytest.raises(ValueError):
            threshold_heatmap(heatmap_from(np.ones((2, 2))), 100)
        with pytest.raises(ValueError):
            threshold_heatmap(heatmap_from(np.ones((2, 2)), np.zeros((2, 2), bool)))
