import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ratspn_ad.circuit import (
    LEAF,
    MARGINALIZED,
    PRODUCT,
    SUM,
    VARIANCE_FLOOR,
    CircuitBuilder,
    CircuitError,
    build_region_graph,
    load_circuit,
    materialize,
    rat_spn,
    save_circuit,
    validate_structure,
)

from oracles import linear_domain_likelihood


def expected_counts(rg, num_roots, num_sums, num_inputs):
    """Node counts by walking the region graph independently of materialize."""
    leaf_regions = set(rg.leaf_regions)
    parents = {}
    for parent, kids in rg.partitions:
        parents.setdefault(parent, []).append(kids)
    counts = {"leaf": 0, "product": 0, "sum": 0}
    width = {}
    for region in sorted(range(len(rg.scopes)), key=lambda r: -rg.region_depth[r]):
        if region in leaf_regions:
            counts["leaf"] += num_inputs * len(rg.scopes[region])
            counts["product"] += num_inputs
            width[region] = num_inputs
            if region != 0:
                continue
        else:
            for left, right in parents[region]:
                counts["product"] += width[left] * width[right]
        k = num_roots if region == 0 else num_sums
        counts["sum"] += k
        width[region] = k
    return counts


def two_var_circuit():
    b = CircuitBuilder(2)
    comps = []
    for m0, m1, v0, v1 in [(0.0, 1.0, 1.0, 0.5), (2.0, -1.0, 0.3, 2.0), (-1.5, 0.5, 0.7, 0.9)]:
        comps.append(b.product([b.leaf(0, m0, v0), b.leaf(1, m1, v1)]))
    root = b.sum(comps, [0.5, 0.3, 0.2])
    return b.build(root)


class TestRegionGraph:
    def test_four_vars_one_split(self):
        rg = build_region_graph(4, 1, 1, seed=3)
        assert len(rg.partitions) == 1
        left, right = rg.partitions[0][1]
        assert len(rg.scopes[left]) == len(rg.scopes[right]) == 2
        assert set(rg.scopes[left]) | set(rg.scopes[right]) == {0, 1, 2, 3}

    def test_depth_zero(self):
        rg = build_region_graph(5, 0, 3)
        assert rg.scopes == [(0, 1, 2, 3, 4)] and rg.partitions == []

    def test_counts_depth2_three_replicas(self):
        rg = build_region_graph(8, 2, 3, seed=0)
        assert len(rg.partitions) == 3 * (1 + 2)
        assert len(rg.scopes) == 1 + 3 * (2 + 4)
        assert sorted(rg.region_depth).count(2) == 12

    def test_balanced_disjoint_splits(self):
        rg = build_region_graph(11, 3, 4, seed=9)
        for parent, (a, b) in rg.partitions:
            sa, sb = set(rg.scopes[a]), set(rg.scopes[b])
            assert not sa & sb
            assert sa | sb == set(rg.scopes[parent])
            assert abs(len(sa) - len(sb)) <= 1
        assert all(rg.region_depth[r] == 3 for r in rg.leaf_regions)

    def test_seeded(self):
        a = build_region_graph(9, 2, 2, seed=4)
        b = build_region_graph(9, 2, 2, seed=4)
        assert a.scopes == b.scopes and a.partitions == b.partitions

    def test_too_deep(self):
        with pytest.raises(ValueError):
            build_region_graph(3, 2)


class TestMaterialize:
    def test_fig1_root_has_four_children(self):
        c = materialize(build_region_graph(4, 1, 1, seed=0), num_roots=1, num_inputs=2)
        root = int(c.roots[0])
        assert c.kind[root] == SUM
        assert len(c.children(root)) == 4
        assert validate_structure(c).ok

    def test_depth0_is_factorised_mixture(self):
        c = rat_spn(3, depth=0, replicas=1, num_inputs=5)
        root = int(c.roots[0])
        kids = c.children(root)
        assert len(kids) == 5
        for k in kids:
            assert c.kind[k] == PRODUCT
            assert sorted(c.leaf_var[c.children(k)]) == [0, 1, 2]

    def test_reference_scale_counts(self):
        rg = build_region_graph(6, 1, 50, seed=2)
        c = materialize(rg, num_roots=1, num_inputs=45)
        assert validate_structure(c).ok
        assert c.node_counts() == expected_counts(rg, 1, 45, 45)
        assert c.node_counts()["leaf"] == 50 * 45 * 6

    @pytest.mark.parametrize("d,depth,r,cr,s,i", [(8, 2, 3, 2, 3, 4), (5, 1, 2, 1, 2, 3), (7, 0, 1, 3, 1, 2)])
    def test_counts_match_walk(self, d, depth, r, cr, s, i):
        rg = build_region_graph(d, depth, r, seed=1)
        c = materialize(rg, cr, s, i)
        assert c.node_counts() == expected_counts(rg, cr, s, i)

    def test_leaf_init_from_data(self):
        data = np.random.default_rng(0).normal(3.0, 2.0, (500, 4))
        c = rat_spn(4, 1, 2, 3, leaf_init=data)
        assert np.all(np.isin(c.leaf_mean[c.leaves], data))
        np.testing.assert_allclose(c.leaf_variance[c.leaves], data.var(axis=0)[c.leaf_var[c.leaves]])

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            rat_spn(4, 1, 1, num_inputs=0)


class TestValidate:
    def test_smoothness_violation(self):
        b = CircuitBuilder(2)
        root = b.sum([b.leaf(0), b.leaf(1)])
        report = validate_structure(b.build(root))
        assert report.by_kind("smoothness") and report.by_kind("smoothness")[0].node == root

    def test_decomposability_violation(self):
        b = CircuitBuilder(1)
        root = b.product([b.leaf(0), b.leaf(0)])
        assert validate_structure(b.build(root)).by_kind("decomposability")

    def test_weights_violation(self):
        b = CircuitBuilder(1)
        root = b.sum([b.leaf(0), b.leaf(0, 1.0)], [0.5, 0.6])
        assert validate_structure(b.build(root)).by_kind("weights")

    def test_root_scope_violation(self):
        b = CircuitBuilder(2)
        assert validate_structure(b.build(b.leaf(0))).by_kind("root_scope")

    def test_cycle_detected(self):
        from ratspn_ad.circuit import Circuit

        # node 1 and 2 are products pointing at each other
        c = Circuit([LEAF, PRODUCT, PRODUCT], [0, 0, 2, 3], [0, 2, 1], [0.0, 0.0, 0.0], [0, -1, -1],
                    [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1], 1)
        assert validate_structure(c).by_kind("cycle")

    def test_variance_floor(self):
        b = CircuitBuilder(1)
        assert validate_structure(b.build(b.leaf(0, 0.0, VARIANCE_FLOOR / 2))).by_kind("leaf")

    @settings(max_examples=30, deadline=None)
    @given(
        d=st.integers(2, 12), depth=st.integers(0, 3), r=st.integers(1, 4), cr=st.integers(1, 3),
        s=st.integers(1, 4), i=st.integers(1, 4), seed=st.integers(0, 10**6),
    )
    def test_random_configs_valid_and_normalised(self, d, depth, r, cr, s, i, seed):
        if 2**depth > d:
            depth = int(math.log2(d))
        c = rat_spn(d, depth, r, i, cr, s, seed=seed)
        assert validate_structure(c).ok
        assert abs(c.marginal_log_likelihood(np.full(d, MARGINALIZED))) <= 1e-12


class TestInference:
    def test_standard_normal_at_zero(self):
        b = CircuitBuilder(1)
        c = b.build(b.leaf(0))
        assert c.log_likelihood(np.zeros((1, 1)))[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_mixture_of_identical_leaves(self):
        b = CircuitBuilder(1)
        c = b.build(b.sum([b.leaf(0, 0.3, 2.0), b.leaf(0, 0.3, 2.0)], [0.5, 0.5]))
        b2 = CircuitBuilder(1)
        single = b2.build(b2.leaf(0, 0.3, 2.0))
        x = np.linspace(-3, 3, 7)[:, None]
        np.testing.assert_allclose(c.log_likelihood(x), single.log_likelihood(x), rtol=1e-14)

    def test_matches_linear_oracle_small(self):
        c = rat_spn(4, 1, 2, 2, seed=5)
        x = np.random.default_rng(0).standard_normal((100, 4))
        ll = c.log_likelihood(x)
        ref = [linear_domain_likelihood(c, row) for row in x]
        np.testing.assert_allclose(ll, ref, rtol=1e-10)

    def test_multiple_roots_uniform_mixture(self):
        c = rat_spn(4, 1, 2, 2, num_roots=3, seed=2)
        x = np.random.default_rng(1).standard_normal((20, 4))
        vals = c.node_log_values(x)[:, c.roots]
        expected = np.log(np.exp(vals).mean(axis=1))
        np.testing.assert_allclose(c.log_likelihood(x), expected, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(CircuitError):
            rat_spn(4, 1, 1, 2).log_likelihood(np.zeros((2, 3)))

    def test_batch_size_independent(self):
        c = rat_spn(6, 1, 3, 3, seed=0)
        x = np.random.default_rng(2).standard_normal((50, 6))
        np.testing.assert_array_equal(c.log_likelihood(x, batch_size=7), c.log_likelihood(x, batch_size=512))

    def test_extreme_inputs_stay_finite(self):
        c = rat_spn(4, 1, 2, 3, seed=1)
        assert np.all(np.isfinite(c.log_likelihood(np.full((1, 4), 1e3))))


class TestMarginals:
    def test_all_marginalised(self):
        c = rat_spn(5, 2, 2, 3, seed=0)
        assert abs(c.marginal_log_likelihood(np.full(5, np.nan))) <= 1e-12

    def test_product_marginal_is_other_leaf(self):
        b = CircuitBuilder(2)
        c = b.build(b.product([b.leaf(0, 1.0, 2.0), b.leaf(1, -1.0, 0.5)]))
        b2 = CircuitBuilder(1)
        single = b2.build(b2.leaf(0, 1.0, 2.0))
        assert c.marginal_log_likelihood([0.4, MARGINALIZED]) == pytest.approx(single.log_likelihood([[0.4]])[0])

    def test_quadrature(self):
        c = two_var_circuit()
        for z0 in np.linspace(-4, 4, 50):
            joint = lambda z1: math.exp(c.log_likelihood([[z0, z1]])[0])
            integral, _ = integrate.quad(joint, -np.inf, np.inf, epsabs=1e-12)
            marginal = math.exp(c.marginal_log_likelihood([z0, MARGINALIZED]))
            assert abs(marginal - integral) <= 1e-6


class TestSampling:
    def test_moments_single_leaf(self):
        b = CircuitBuilder(1)
        c = b.build(b.leaf(0, 2.0, 0.25))
        s = c.sample(np.random.default_rng(0), 100_000)[:, 0]
        assert abs(s.mean() - 2.0) < 0.01
        assert abs(s.var() - 0.25) < 0.05 * 0.25

    def test_degenerate_weights(self):
        b = CircuitBuilder(1)
        c = b.build(b.sum([b.leaf(0, -5.0, 0.01), b.leaf(0, 5.0, 0.01)], [1.0, 0.0]))
        assert np.all(c.sample(np.random.default_rng(1), 500) < 0)

    def test_seeded(self):
        c = rat_spn(4, 1, 2, 2, seed=0)
        a = c.sample(np.random.default_rng(3), 10)
        b = c.sample(np.random.default_rng(3), 10)
        np.testing.assert_array_equal(a, b)

    def test_mean_matches_analytic(self):
        c = rat_spn(3, 1, 2, 3, seed=4)
        s = c.sample(np.random.default_rng(2), 40_000)
        assert not np.isnan(s).any()
        np.testing.assert_allclose(s.mean(axis=0), c.mean(), atol=0.05)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        c = rat_spn(5, 2, 3, 2, num_roots=2, seed=8)
        c.set_standardization(np.random.default_rng(0).normal(1.0, 3.0, (20, 5)))
        save_circuit(c, tmp_path / "c.rspn")
        d = load_circuit(tmp_path / "c.rspn")
        for name in ("kind", "child_ptr", "child_idx", "log_weights", "leaf_var", "leaf_mean", "leaf_variance", "roots"):
            np.testing.assert_array_equal(getattr(d, name), getattr(c, name))
        np.testing.assert_array_equal(d.standardization[0], c.standardization[0])
        np.testing.assert_array_equal(d.standardization[1], c.standardization[1])
        assert d.meta == c.meta
        x = np.random.default_rng(1).standard_normal((10, 5))
        np.testing.assert_array_equal(d.log_likelihood(x), c.log_likelihood(x))

    def test_wrong_magic(self, tmp_path):
        from ratspn_ad.autoencoders import build_ae, AEConfig
        from ratspn_ad.tensorio import FormatError

        build_ae("CAE", AEConfig(patch_size=8, channels=(1,), latent_dim=1)).save(tmp_path / "m")
        with pytest.raises(FormatError):
            load_circuit(tmp_path / "m")
