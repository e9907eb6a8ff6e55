import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratspn_ad.evaluation import (
    MetricError,
    ScoredPixelSet,
    auc,
    evaluate,
    export_score_histograms,
    gap_statistic,
    hausdorff,
    hausdorff_or_diagonal,
    imagewise_auc,
    pixelwise_auc,
)

from oracles import brute_hausdorff, pair_count_auc


def random_scores(rng, n, tie_levels=None):
    s = rng.standard_normal(n) if tie_levels is None else rng.integers(0, tie_levels, n).astype(float)
    y = rng.integers(0, 2, n)
    y[0], y[-1] = 0, 1
    return s, y


def random_mask(rng, shape, p):
    m = rng.random(shape) < p
    if not m.any():
        m[rng.integers(shape[0]), rng.integers(shape[1])] = True
    return m


class TestAuc:
    def test_perfect(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc(np.ones(6), [0, 1, 0, 1, 1, 0]) == 0.5

    def test_worked_example(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1, 1])

    def test_bad_labels(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [0, 2])

    @pytest.mark.parametrize("tie_levels", [None, 3, 10])
    def test_matches_pair_counting(self, tie_levels):
        rng = np.random.default_rng(tie_levels or 0)
        for _ in range(30):
            s, y = random_scores(rng, int(rng.integers(2, 200)), tie_levels)
            assert auc(s, y) == pair_count_auc(s, y)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 80))
    def test_monotone_invariance_and_flip(self, seed, n):
        rng = np.random.default_rng(seed)
        s, y = random_scores(rng, n)
        a = auc(s, y)
        assert auc(np.exp(s) * 3 + 1, y) == a
        assert a + auc(-s, y) == pytest.approx(1.0, abs=1e-12)


class TestPooledAndImagewise:
    def test_pixelwise_one_image(self):
        s = ScoredPixelSet("a", [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert pixelwise_auc([s]) == 0.75

    def test_pixelwise_pooled_oracle_and_order(self):
        a = ScoredPixelSet("a", [0.1, 0.9, 0.5], [0, 1, 0])
        b = ScoredPixelSet("b", [0.3, 0.2, 0.7, 0.5], [1, 0, 1, 0])
        pooled = pair_count_auc([0.1, 0.9, 0.5, 0.3, 0.2, 0.7, 0.5], [0, 1, 0, 1, 0, 1, 0])
        assert pixelwise_auc([a, b]) == pooled == pixelwise_auc([b, a])

    def test_two_images_mean_std(self):
        a = ScoredPixelSet("a", [0, 1], [0, 1])
        b = ScoredPixelSet("b", [1, 1], [0, 1])
        mean, std = imagewise_auc([a, b])
        assert (mean, std) == (0.75, 0.25)

    def test_identical_images_zero_std(self):
        sets = [ScoredPixelSet(str(i), [0.2, 0.5, 0.1], [0, 1, 1]) for i in range(4)]
        assert imagewise_auc(sets).std == 0.0

    def test_single_class_skipped(self, caplog):
        sets = [ScoredPixelSet("a", [0, 1], [0, 1]), ScoredPixelSet("b", [0, 1], [0, 0])]
        res = imagewise_auc(sets)
        assert res.skipped == 1 and list(res.per_image) == ["a"]
        assert "b" in caplog.text

    def test_all_single_class(self):
        with pytest.raises(MetricError):
            imagewise_auc([ScoredPixelSet("a", [0, 1], [1, 1])])

    def test_matches_per_image_oracle(self):
        rng = np.random.default_rng(4)
        sets, vals = [], []
        for i in range(6):
            s, y = random_scores(rng, 30, 5)
            sets.append(ScoredPixelSet(str(i), s, y))
            vals.append(pair_count_auc(s, y))
        res = imagewise_auc(sets)
        assert res.mean == pytest.approx(np.mean(vals), abs=1e-15)
        assert res.std == pytest.approx(np.std(vals), abs=1e-15)

    def test_empty_set_rejected(self):
        with pytest.raises(MetricError):
            ScoredPixelSet("a", [], [])


class TestHausdorff:
    def test_identical(self):
        m = random_mask(np.random.default_rng(0), (16, 16), 0.2)
        assert hausdorff(m, m) == 0.0

    def test_points_3_4_5(self):
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[0, 0] = True
        b[3, 4] = True
        assert hausdorff(a, b) == 5.0

    def test_empty_raises_and_fallback(self):
        a = np.zeros((30, 40), bool)
        b = a.copy()
        b[3, 3] = True
        with pytest.raises(MetricError):
            hausdorff(a, b)
        assert hausdorff_or_diagonal(a, b) == (50.0, True)
        assert hausdorff_or_diagonal(b, b) == (0.0, False)

    @pytest.mark.parametrize("size,p", [(32, 0.05), (64, 0.01), (17, 0.3)])
    def test_matches_brute_force(self, size, p):
        rng = np.random.default_rng(size)
        for _ in range(10):
            a, b = random_mask(rng, (size, size), p), random_mask(rng, (size, size), p)
            assert hausdorff(a, b) == brute_hausdorff(a, b)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_mask(rng, (20, 20), 0.05) for _ in range(3))
        assert hausdorff(a, b) == hausdorff(b, a)
        assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-12
        assert (hausdorff(a, b) == 0) == bool(np.array_equal(a, b))


class TestHistograms:
    def test_disjoint_supports(self, tmp_path):
        h = np.random.default_rng(0).uniform(0, 1, 200)
        a = np.random.default_rng(1).uniform(2, 3, 50)
        hist = export_score_histograms(h, a, bins=20, path=tmp_path / "h.csv")
        assert not np.any((hist.healthy_counts > 0) & (hist.anomalous_counts > 0))
        assert hist.healthy_counts.sum() == 200 and hist.anomalous_counts.sum() == 50

    def test_csv_layout(self, tmp_path):
        export_score_histograms([0.0, 1.0], [2.0], bins=4, path=tmp_path / "h.csv")
        rows = list(csv.reader(open(tmp_path / "h.csv")))
        assert rows[0] == ["bin_left", "bin_right", "healthy_count", "anomalous_count"]
        assert len(rows) == 1 + 4 + 2
        assert rows[-1][0] == "gap_statistic"
        assert float(rows[1][0]) == 0.0 and float(rows[4][1]) == 2.0

    def test_gap_separation_ordering(self):
        base = np.linspace(0, 1, 201)
        separated = gap_statistic(base, base + 2.0)
        overlapping = gap_statistic(base, base + 0.5)
        assert separated > overlapping > 0

    def test_gap_value(self):
        # medians 0.5 and 1.0; pooled IQR of {0, .5, 1} U {.5, 1, 1.5}
        pooled = np.r_[0, 0.5, 1, 0.5, 1, 1.5]
        iqr = np.percentile(pooled, 75) - np.percentile(pooled, 25)
        assert gap_statistic([0, 0.5, 1], [0.5, 1, 1.5]) == pytest.approx(0.5 / iqr)

    def test_empty_class(self):
        with pytest.raises(MetricError):
            export_score_histograms([], [1.0])


class TestReport:
    def test_evaluate_and_write(self, tmp_path):
        sets = [ScoredPixelSet("a", [0, 1], [0, 1]), ScoredPixelSet("b", [0, 1], [0, 0])]
        gt = np.zeros((4, 4), bool)
        gt[1, 1] = True
        pred_a = gt.copy()
        report = evaluate(sets, [pred_a, np.zeros((4, 4), bool)], [gt, gt], model="CAE")
        assert report.imagewise_auc_mean == 1.0
        assert report.skipped_images == 1
        assert report.fallback_images == 1
        assert report.hausdorff_mean == pytest.approx(math.hypot(4, 4) / 2)
        report.write(tmp_path / "m.txt", tmp_path / "p.csv")
        text = (tmp_path / "m.txt").read_text()
        assert "model = CAE" in text and "imagewise_auc_mean = 1.000000" in text
        rows = list(csv.reader(open(tmp_path / "p.csv")))
        assert rows[2] == ["b", "", f"{math.hypot(4, 4):.6f}", "1"]
