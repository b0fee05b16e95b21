import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calcium_ensembles.ingest import Region, WindowSpec
from calcium_ensembles.metrics import adjusted_rand_index
from calcium_ensembles.summaries import (
    arena_bounds, canonical_labels, cross_window_coclustering, effective_sample_size,
    expected_vi, kernel_smooth, make_grid, num_clusters_summary, pairs_above,
    read_partition_csv, similarity_matrix, spatial_complexity_map, spatial_firing_map,
    vi_point_estimate, write_firing_maps_csv, write_histogram_csv, write_matrix_csv,
    write_partition_csv,
)


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        yield [[first]] + part


def as_labels(blocks, n):
    lab = np.empty(n, dtype=int)
    for k, block in enumerate(blocks):
        lab[block] = k
    return lab


def direct_vi(a, b):
    """VI from the joint label distribution, natural log."""
    n = len(a)
    h = lambda p: -sum(x * math.log(x) for x in p if x > 0)
    pa = [np.mean(a == u) for u in np.unique(a)]
    pb = [np.mean(b == v) for v in np.unique(b)]
    joint = [np.mean((a == u) & (b == v)) for u in np.unique(a) for v in np.unique(b)]
    return 2 * h(joint) - h(pa) - h(pb)


def direct_expected_vi(labels, draws):
    return float(np.mean([direct_vi(np.asarray(labels), d) for d in draws]))


class TestCanonical:
    def test_first_occurrence_order(self):
        np.testing.assert_array_equal(canonical_labels([7, 7, 2, 9, 2]), [1, 1, 2, 3, 2])


class TestSimilarity:
    def test_identical_draws(self):
        P = np.array([[0, 0, 1, 2]] * 3)
        S = similarity_matrix(P).probs
        assert set(np.unique(S)) <= {0.0, 1.0}
        assert S[0, 1] == 1 and S[0, 2] == 0

    def test_half(self):
        S = similarity_matrix(np.array([[0, 0], [0, 1]])).probs
        assert S[0, 1] == 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_brute_force_counting(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.integers(0, 4, size=(int(rng.integers(1, 15)), 7))
        S = similarity_matrix(P).probs
        D = len(P)
        for i in range(7):
            for j in range(7):
                assert S[i, j] == sum(P[d, i] == P[d, j] for d in range(D)) / D
        np.testing.assert_array_equal(S, S.T)
        np.testing.assert_array_equal(np.diag(S), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_relabeling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.integers(0, 4, size=(10, 6))
        relabeled = rng.permutation(9)[P] + 100
        np.testing.assert_array_equal(similarity_matrix(P).probs,
                                      similarity_matrix(relabeled).probs)


class TestVIPointEstimate:
    def test_expected_vi_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        P = rng.integers(0, 3, size=(12, 8))
        lab = rng.integers(0, 3, size=8)
        assert expected_vi(lab, P) == pytest.approx(direct_expected_vi(lab, P), abs=1e-12)

    def test_single_partition_mass(self):
        P = np.array([[3, 3, 1, 1, 0, 0]] * 5)
        np.testing.assert_array_equal(vi_point_estimate(P, rng=0), [1, 1, 2, 2, 3, 3])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_search(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 3, size=6)
        P = np.where(rng.random((20, 6)) < 0.35, rng.integers(0, 4, size=(20, 6)), truth)
        best = min(direct_expected_vi(as_labels(b, 6), P) for b in set_partitions(list(range(6))))
        assert sum(1 for _ in set_partitions(list(range(6)))) == 203
        est = vi_point_estimate(P, rng=seed)
        assert direct_expected_vi(est, P) <= best + 1e-12

    def test_never_worse_than_best_draw(self):
        rng = np.random.default_rng(3)
        P = rng.integers(0, 5, size=(30, 15))
        est = vi_point_estimate(P, restarts=2, rng=1)
        assert expected_vi(est, P) <= min(expected_vi(d, P) for d in P) + 1e-12

    def test_deterministic_given_seed(self):
        P = np.random.default_rng(4).integers(0, 4, size=(25, 12))
        a = vi_point_estimate(P, rng=7)
        b = vi_point_estimate(P, rng=7)
        assert adjusted_rand_index(a, b) == 1.0
        np.testing.assert_array_equal(a, b)

    def test_relabeled_draws_give_same_partition(self):
        P = np.random.default_rng(5).integers(0, 4, size=(25, 10))
        relabeled = np.array([9, 4, 7, 1])[P]
        np.testing.assert_array_equal(vi_point_estimate(P, rng=3),
                                      vi_point_estimate(relabeled, rng=3))

    def test_zero_restarts_rejected(self):
        with pytest.raises(ValueError):
            vi_point_estimate(np.zeros((2, 3), dtype=int), restarts=0)


class TestClusterCounts:
    def test_mode_and_population_variance(self):
        P = np.array([[0, 1, 2, 2], [0, 1, 2, 0], [0, 1, 2, 3]])
        s = num_clusters_summary(P)
        assert (s.mode, s.histogram) == (3, {3: 2, 4: 1})
        assert s.variance == pytest.approx(2 / 9)

    def test_three_three_four(self):
        P = [[0, 1, 2, 0], [0, 1, 2, 2], [0, 1, 2, 3]]
        s = num_clusters_summary(P)
        assert s.mode == 3 and s.variance == pytest.approx(2 / 9)

    def test_constant_counts(self):
        assert num_clusters_summary(np.array([[0, 1], [1, 0]])).variance == 0.0

    def test_ties_go_to_smaller(self):
        assert num_clusters_summary([[0, 1, 2], [0, 0, 0], [0, 1, 1], [0, 1, 2]]).mode == 3
        assert num_clusters_summary([[0, 1, 2], [0, 0, 1]]).mode == 2

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_hand_counting(self, seed):
        P = np.random.default_rng(seed).integers(0, 5, size=(9, 6))
        counts = [len(set(row)) for row in P.tolist()]
        s = num_clusters_summary(P)
        assert s.histogram == {k: counts.count(k) for k in set(counts)}
        assert s.variance == pytest.approx(np.var(counts))


class TestCrossWindow:
    def test_thirty_five_of_thirty_eight(self):
        parts = [np.array([0, 0, 1])] * 35 + [np.array([0, 1, 1])] * 3
        M, frac = cross_window_coclustering(parts)
        assert M[0, 1] == pytest.approx(35 / 38) and round(M[0, 1], 3) == 0.921
        assert frac == pytest.approx(1 / 3)

    def test_single_window_binary(self):
        M, _ = cross_window_coclustering([np.array([1, 2, 1, 3])])
        assert set(np.unique(M)) <= {0.0, 1.0}

    def test_counting_oracle(self):
        rng = np.random.default_rng(6)
        parts = [rng.integers(1, 4, size=5) for _ in range(11)]
        M, frac = cross_window_coclustering(parts)
        for i, j in itertools.combinations(range(5), 2):
            assert M[i, j] == np.mean([p[i] == p[j] for p in parts])
        assert pairs_above(M) == (int(round(frac * 10)), 10)

    def test_inconsistent_sizes(self):
        with pytest.raises(ValueError):
            cross_window_coclustering([np.array([1, 2]), np.array([1, 2, 3])])


class TestSpatialMaps:
    def test_zero_probs_zero_map(self):
        grid = make_grid(arena_bounds((0, 0), 1), 4)
        track = np.random.default_rng(7).uniform(-1, 1, size=(20, 2))
        w = [WindowSpec(0, 20, Region.CENTER)]
        maps = spatial_firing_map(w, [np.zeros((3, 20))], track, grid)
        assert np.all(maps[~np.isnan(maps)] == 0)

    def test_single_cell_track(self):
        grid = make_grid(((0, 1), (0, 1)), 5)
        track = np.full((10, 2), 0.33)
        maps = spatial_firing_map([WindowSpec(0, 10, Region.CENTER)], [np.ones((2, 10))],
                                  track, grid)
        assert np.sum(~np.isnan(maps[0])) == 1

    def test_two_cell_averages(self):
        grid = make_grid(((0, 2), (0, 1)), 2)
        grid = type(grid)(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]))
        track = np.array([[0.5, 0.5], [1.5, 0.5], [0.5, 0.5], [1.5, 0.5], [0.2, 0.2]])
        windows = [WindowSpec(0, 2, Region.CENTER), WindowSpec(2, 5, Region.OUTER_RING)]
        probs = [np.array([[0.1, 0.8]]), np.array([[0.3, 0.4, 0.5]])]
        maps = spatial_firing_map(windows, probs, track, grid)
        assert maps[0, 0, 0] == pytest.approx((0.1 + 0.3 + 0.5) / 3)
        assert maps[0, 1, 0] == pytest.approx((0.8 + 0.4) / 2)

    def test_firing_map_csv(self, tmp_path):
        maps = np.full((1, 2, 2), np.nan)
        maps[0, 1, 0] = 0.25
        write_firing_maps_csv(maps, tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines() == [
            "neuron,cell_x,cell_y,value", "0,1,0,0.25"]

    def test_constant_mode_on_support(self):
        grid = make_grid(arena_bounds((0, 0), 1), 10)
        track = np.random.default_rng(8).uniform(-0.5, 0.5, size=(30, 2))
        maps = spatial_complexity_map([(4, 0.5)], track, [WindowSpec(0, 30, Region.CENTER)],
                                      0.1, grid)
        np.testing.assert_allclose(maps.mode_grid[maps.support], 4.0)
        np.testing.assert_allclose(maps.variance_grid[maps.support], 0.5)
        assert maps.points.shape == (30, 2) and np.all(maps.point_mode == 4)

    def test_vanishing_bandwidth_takes_nearest(self):
        out = kernel_smooth(np.array([[0, 0], [1, 0]]), np.array([2.0, 6.0]),
                            np.array([[0.2, 0.0], [0.9, 0.1]]), 1e-6)
        np.testing.assert_allclose(out, [2.0, 6.0])

    def test_midpoint_is_mean(self):
        out = kernel_smooth(np.array([[0, 0], [1, 1]]), np.array([2.0, 6.0]),
                            np.array([[0.5, 0.5]]), 0.3)
        assert out[0] == pytest.approx(4.0, abs=1e-12)

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            kernel_smooth(np.zeros((1, 2)), np.zeros(1), np.zeros((1, 2)), 0.0)


class TestESS:
    def test_independent_draws(self):
        x = np.random.default_rng(9).normal(size=20000)
        assert 0.9 * 20000 < effective_sample_size(x) < 1.1 * 20000

    def test_ar1_draws(self):
        rng = np.random.default_rng(10)
        x = np.empty(100000)
        x[0] = 0
        for t in range(1, len(x)):
            x[t] = 0.9 * x[t - 1] + rng.normal()
        expected = len(x) * 0.1 / 1.9
        assert 0.8 * expected < effective_sample_size(x) < 1.2 * expected


class TestCSV:
    def test_partition_round_trip(self, tmp_path):
        write_partition_csv([1, 2, 1], tmp_path / "p.csv", ids=["a", "b", "c"])
        ids, labels = read_partition_csv(tmp_path / "p.csv")
        assert ids == ["a", "b", "c"] and labels.tolist() == [1, 2, 1]

    def test_matrix_and_histogram_headers(self, tmp_path):
        write_matrix_csv(np.eye(2), tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "id,0,1"
        write_histogram_csv([num_clusters_summary([[0, 1], [0, 0]])], tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "window,n_clusters,frequency,mode,variance_population"
        assert len(lines) == 3
