import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from circle import autoencoder as A
from circle.alignment import (
    AlignmentResult,
    align_representations,
    alignment_rates,
    assignment_cost,
    baseline_realign,
    concatenate,
    encode_all,
    hungarian,
    infer_alignment,
    instance_alignment_rate,
    save_alignment_csv,
)
from circle.dataset import MultiViewDataset, SynthSpec, apply_misalignment, generate_synthetic
from circle.errors import PreconditionError, ShapeError


def brute_force_min(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


class TestHungarian:
    def test_identity_dominant(self):
        cost = 1.0 - np.eye(5)
        np.testing.assert_array_equal(hungarian(cost), np.arange(5))

    def test_3x3(self):
        cost = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]], dtype=float)
        cols = hungarian(cost)
        assert assignment_cost(cost, cols) == brute_force_min(cost) == 5

    @pytest.mark.parametrize("seed", range(40))
    def test_random_against_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        cost = rng.normal(size=(n, n)) if seed % 2 else rng.integers(0, 4, size=(n, n)).astype(float)
        cols = hungarian(cost)
        assert sorted(cols) == list(range(n))
        assert assignment_cost(cost, cols) == pytest.approx(brute_force_min(cost), abs=1e-12)

    def test_large_against_scipy(self, rng):
        cost = rng.random((120, 120))
        r, c = linear_sum_assignment(cost)
        assert assignment_cost(cost, hungarian(cost)) == pytest.approx(cost[r, c].sum(), abs=1e-10)

    def test_not_square(self):
        with pytest.raises(ShapeError):
            hungarian(np.ones((2, 3)))

    def test_never_worse_than_greedy(self, rng):
        cost = rng.random((30, 30))
        greedy = cost[np.arange(30), np.argmin(cost, axis=1)].sum()
        assert assignment_cost(cost, hungarian(cost)) >= greedy - 1e-12  # greedy may be non-injective
        # restricted to permutations, greedy-by-row with removal is an upper bound
        remaining = list(range(30))
        total = 0.0
        for i in range(30):
            j = min(remaining, key=lambda c: cost[i, c])
            total += cost[i, j]
            remaining.remove(j)
        assert assignment_cost(cost, hungarian(cost)) <= total + 1e-12


@pytest.fixture(scope="module")
def shuffled():
    base = generate_synthetic(SynthSpec(samples_per_cluster=30, dims=(10, 6, 8), seed=6))
    return apply_misalignment(base, 0.5, seed=4)


class TestAlignRepresentations:
    def test_fully_aligned_keep_known_is_identity(self, rng):
        reps = [rng.normal(size=(10, 3)) for _ in range(3)]
        res = align_representations(reps, np.ones(10), "bijective", keep_known=True)
        np.testing.assert_array_equal(res.mapping, np.tile(np.arange(10), (3, 1)))

    def test_copied_representations_bijective(self, rng):
        z = rng.normal(size=(12, 4))
        perm = rng.permutation(12)
        res = align_representations([z, z[perm]], np.zeros(12), "bijective", keep_known=False)
        assert sorted(res.mapping[1]) == list(range(12))
        assert res.pair_distance[1].sum() == 0.0
        np.testing.assert_array_equal(perm[res.mapping[1]], np.arange(12))

    def test_bijective_is_invertible(self, rng):
        reps = [rng.normal(size=(15, 3)), rng.normal(size=(15, 3))]
        m = align_representations(reps, np.zeros(15), "bijective", keep_known=False).mapping[1]
        inverse = np.argsort(m)
        np.testing.assert_array_equal(m[inverse], np.arange(15))
        np.testing.assert_array_equal(inverse[m], np.arange(15))

    def test_greedy_picks_nearest(self, rng):
        reps = [rng.normal(size=(8, 2)), rng.normal(size=(8, 2))]
        res = align_representations(reps, np.zeros(8), "greedy", keep_known=False)
        for n in range(8):
            d = np.linalg.norm(reps[1] - reps[0][n], axis=1)
            assert res.mapping[1, n] == np.argmin(d)

    def test_keep_known_pins_aligned(self, rng):
        mask = rng.integers(0, 2, size=20)
        reps = [rng.normal(size=(20, 3)) for _ in range(3)]
        for mode in ("greedy", "bijective"):
            res = align_representations(reps, mask, mode, keep_known=True)
            keep = mask == 1
            np.testing.assert_array_equal(res.mapping[:, keep], np.tile(np.flatnonzero(keep), (3, 1)))
            for v in (1, 2):
                assert set(res.mapping[v, ~keep]) <= set(np.flatnonzero(~keep))

    def test_hungarian_total_not_above_greedy(self, rng):
        reps = [rng.normal(size=(25, 3)), rng.normal(size=(25, 3))]
        g = align_representations(reps, np.zeros(25), "greedy", keep_known=False)
        b = align_representations(reps, np.zeros(25), "bijective", keep_known=False)
        assert b.pair_distance.sum() >= g.pair_distance.sum() - 1e-12

    def test_bad_mode(self, rng):
        with pytest.raises(PreconditionError):
            align_representations([np.ones((2, 2))] * 2, np.ones(2), "nearest")


class TestModelAlignment:
    def test_infer_and_concatenate(self, shuffled):
        m = A.init(shuffled.dims, (8, 8, 8), 4, seed=0)
        res = infer_alignment(m, shuffled)
        z = concatenate(m, shuffled, res)
        assert z.shape == (shuffled.n_samples, 12)
        reps = encode_all(m, shuffled)
        np.testing.assert_array_equal(z[:, :4], reps[0])
        np.testing.assert_array_equal(z[:, 4:8], reps[1][res.mapping[1]])

    def test_single_view_concatenation(self):
        d = MultiViewDataset(views=[np.random.default_rng(0).normal(size=(6, 3))])
        m = A.init(d.dims, (4, 4, 4), 2, seed=0)
        res = infer_alignment(m, d)
        np.testing.assert_array_equal(concatenate(m, d, res), encode_all(m, d)[0])

    def test_identity_alignment_is_plain_concatenation(self, small_synth):
        m = A.init(small_synth.dims, (8, 8, 8), 4, seed=0)
        res = infer_alignment(m, small_synth, keep_known=True)
        np.testing.assert_array_equal(concatenate(m, small_synth, res), np.hstack(encode_all(m, small_synth)))


class TestBaseline:
    def test_duplicated_view(self, small_synth):
        d = MultiViewDataset(views=[small_synth.views[0], small_synth.views[0].copy()])
        res = baseline_realign(d, 4)
        np.testing.assert_array_equal(res.mapping[1], np.arange(d.n_samples))

    def test_deterministic(self, shuffled):
        a = baseline_realign(shuffled, 5)
        b = baseline_realign(shuffled, 5)
        np.testing.assert_array_equal(a.mapping, b.mapping)

    def test_above_chance(self):
        # two noisy copies of one view: PCA spaces agree, so matching beats chance
        base = generate_synthetic(SynthSpec(num_views=2, dims=(10, 10), samples_per_cluster=40, seed=2))
        rng = np.random.default_rng(0)
        x = base.views[0]
        d = MultiViewDataset(views=[x, x + 0.05 * rng.normal(size=x.shape)], labels=base.labels)
        d = apply_misalignment(d, 0.5, seed=1)
        rate = instance_alignment_rate(baseline_realign(d, 4), d)
        # chance level of a random permutation over the shuffled rows, by simulation
        rows = d.unaligned_indices
        sims = []
        for s in range(200):
            perm = np.random.default_rng(s).permutation(rows.size)
            sims.append(np.mean(d.true_correspondence[1][rows[perm]] == rows))
        assert rate > np.mean(sims) + 5 * np.std(sims)

    def test_too_many_dims(self, shuffled):
        with pytest.raises(ShapeError):
            baseline_realign(shuffled, 7)


class TestRates:
    def test_fully_aligned_vacuous(self, small_synth):
        res = align_representations([v[:, :2] for v in small_synth.views], small_synth.aligned_mask)
        assert alignment_rates(res, small_synth) == (1.0, 1.0)

    def test_true_counterparts(self, shuffled):
        n = shuffled.n_samples
        mapping = np.stack([np.argsort(c) for c in shuffled.true_correspondence])
        res = AlignmentResult(mapping, "bijective", False, np.zeros((3, n)))
        assert alignment_rates(res, shuffled) == (1.0, 1.0)

    def test_hand_case(self):
        views = [np.eye(4), np.eye(4)]
        labels = np.array([0, 0, 1, 1])
        # view 2 swaps rows 0 and 1 (same class)
        corr = [np.arange(4), np.array([1, 0, 2, 3])]
        d = MultiViewDataset(views=views, labels=labels, aligned_mask=[0, 0, 1, 1], true_correspondence=corr)
        # row 0 -> view-2 row 1 (true instance), row 1 -> view-2 row 0 would be true; map it to row 1 instead
        res = AlignmentResult(np.array([[0, 1, 2, 3], [1, 1, 2, 3]]), "greedy", True, np.zeros((2, 4)))
        assert alignment_rates(res, d) == (0.5, 1.0)

    def test_cluster_rate_dominates(self, shuffled, rng):
        for s in range(10):
            mapping = np.stack([np.arange(shuffled.n_samples)] + [rng.permutation(shuffled.n_samples) for _ in range(2)])
            res = AlignmentResult(mapping, "bijective", False, np.zeros(mapping.shape))
            inst, clus = alignment_rates(res, shuffled)
            assert clus >= inst

    def test_missing_labels(self, shuffled):
        d = MultiViewDataset(views=shuffled.views, aligned_mask=shuffled.aligned_mask,
                             true_correspondence=shuffled.true_correspondence)
        res = align_representations([v[:, :2] for v in d.views], d.aligned_mask)
        instance_alignment_rate(res, d)
        with pytest.raises(PreconditionError):
            alignment_rates(res, d)


def test_alignment_dump(tmp_path, shuffled):
    res = baseline_realign(shuffled, 3)
    paths = save_alignment_csv(res, tmp_path)
    assert [p.name for p in paths] == ["alignment_2.csv", "alignment_3.csv"]
    np.testing.assert_array_equal(np.loadtxt(paths[0], dtype=int), res.mapping[1])
