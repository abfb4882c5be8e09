import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gca.errors import EmptyInput, KTooSmall
from gca.grid import make_state
from gca.metrics import (
    PointSet,
    chamfer,
    chamfer_matrix,
    cov,
    directed_hausdorff,
    mmd,
    one_nna,
    tmd,
    tmd_per_partial,
    uhd,
    uhd_mean,
    voxels_to_points,
)


# Plain-Python double loops, written independently of the library.
def oracle_chamfer(X, Y):
    def d2(p, q):
        return sum((a - b) ** 2 for a, b in zip(p, q))
    X, Y = [tuple(p) for p in np.asarray(X, float)], [tuple(p) for p in np.asarray(Y, float)]
    return sum(min(d2(x, y) for y in Y) for x in X) + sum(min(d2(x, y) for x in X) for y in Y)


def oracle_one_nna(gen, ref):
    items = [(g, 0) for g in gen] + [(r, 1) for r in ref]
    right = 0
    for i, (a, la) in enumerate(items):
        best = None
        for j, (b, lb) in enumerate(items):
            if i == j:
                continue
            key = (oracle_chamfer(a, b), lb, j)
            if best is None or key < best[0]:
                best = (key, lb)
        right += best[1] == la
    return 100.0 * right / len(items)


def rand_sets(rng, n, max_pts=12, lo=-3, hi=4):
    return [rng.integers(lo, hi, size=(int(rng.integers(1, max_pts + 1)), 3)).astype(float) for _ in range(n)]


pts = st.lists(st.tuples(*[st.integers(-5, 5)] * 3), min_size=1, max_size=12).map(lambda l: np.array(l, float))


class TestChamfer:
    def test_hand_example(self):
        assert chamfer([[0, 0, 0]], [[3, 4, 0]]) == 50.0

    def test_identity(self, rng):
        X = rng.normal(size=(20, 3))
        assert chamfer(X, X) == 0.0

    def test_matches_double_loop(self, rng):
        for _ in range(30):
            X, Y = rand_sets(rng, 2, 20)
            assert abs(chamfer(X, Y) - oracle_chamfer(X, Y)) <= 1e-12

    def test_real_valued_points(self, rng):
        X, Y = rng.normal(size=(15, 3)), rng.normal(size=(9, 3))
        np.testing.assert_allclose(chamfer(X, Y), oracle_chamfer(X, Y), rtol=0, atol=1e-12)

    def test_matrix(self, rng):
        A, B = rand_sets(rng, 4), rand_sets(rng, 3)
        M = chamfer_matrix(A, B)
        for i, j in itertools.product(range(4), range(3)):
            assert M[i, j] == chamfer(A[i], B[j])

    @given(pts, pts)
    def test_symmetric_nonnegative(self, X, Y):
        assert chamfer(X, Y) == chamfer(Y, X) >= 0

    @given(pts, pts, st.tuples(*[st.integers(-9, 9)] * 3))
    def test_translation_invariant(self, X, Y, t):
        t = np.array(t, float)
        assert chamfer(X + t, Y + t) == chamfer(X, Y)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            chamfer(np.zeros((0, 3)), [[0, 0, 0]])

    def test_pointset_rejects_empty_and_nan(self):
        with pytest.raises(EmptyInput):
            PointSet(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointSet([[np.nan, 0, 0]])


class TestVoxelsToPoints:
    def test_centered(self):
        p = voxels_to_points(make_state([(0, 0, 0), (2, 0, 0)], 8), center=True)
        np.testing.assert_array_equal(p.points, [[-1, 0, 0], [1, 0, 0]])

    def test_plain(self):
        s = make_state([(1, 2, 3), (4, 5, 6)], 8)
        np.testing.assert_array_equal(voxels_to_points(s).points, s.cells)

    def test_sampling_membership(self, rng):
        cells = rng.choice(32 ** 3, size=500, replace=False)
        s = make_state(np.stack(np.unravel_index(cells, (32,) * 3), axis=1), 32)
        p = voxels_to_points(s, sample_k=2048, rng=rng)
        assert len(p) == 2048
        members = {tuple(c) for c in s.cells.tolist()}
        assert all(tuple(int(v) for v in q) in members for q in p.points)

    def test_sampling_needs_rng(self):
        with pytest.raises(ValueError):
            voxels_to_points(make_state([(0, 0, 0)], 8), sample_k=3)


class TestMMDCov:
    def test_single_reference(self, rng):
        A, B, C = rand_sets(rng, 3)
        assert mmd([B, C], [A]) == min(oracle_chamfer(B, A), oracle_chamfer(C, A))

    def test_copies_give_zero(self, rng):
        ref = rand_sets(rng, 4)
        assert mmd(ref + rand_sets(rng, 2), ref) == 0.0

    def test_cov_identity(self):
        ref = [np.array([[i * 10.0, 0, 0]]) for i in range(5)]
        assert cov(ref, ref) == 1.0

    def test_cov_single_target(self):
        ref = [np.array([[i * 10.0, 0, 0]]) for i in range(4)]
        gen = [np.array([[0.5, 0, 0]]), np.array([[-1.0, 0, 0]])]
        assert cov(gen, ref) == 0.25

    def test_cov_tie_goes_to_lowest_index(self):
        ref = [np.array([[-1.0, 0, 0]]), np.array([[1.0, 0, 0]])]
        assert cov([np.zeros((1, 3))], ref) == 0.5

    def test_random_against_oracle(self, rng):
        for _ in range(10):
            gen, ref = rand_sets(rng, 5, 8), rand_sets(rng, 4, 8)
            M = np.array([[oracle_chamfer(g, r) for r in ref] for g in gen])
            assert mmd(gen, ref) == pytest.approx(M.min(axis=0).mean(), abs=1e-12)
            assert cov(gen, ref) == len(set(np.argmin(M, axis=1).tolist())) / len(ref)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mmd([], [np.zeros((1, 3))])


class TestOneNNA:
    def test_separated_clusters(self):
        gen = [np.array([[0.0, 0, 0]]), np.array([[0.1, 0, 0]])]
        ref = [np.array([[100.0, 0, 0]]), np.array([[100.1, 0, 0]])]
        assert one_nna(gen, ref) == 100.0

    def test_interleaved(self):
        # g0 r0 g1 r1 on a line with spacing growing so each NN is the other set
        gen = [np.array([[0.0, 0, 0]]), np.array([[10.0, 0, 0]])]
        ref = [np.array([[1.0, 0, 0]]), np.array([[11.0, 0, 0]])]
        assert one_nna(gen, ref) == 0.0

    def test_random_against_oracle(self, rng):
        for _ in range(5):
            gen, ref = rand_sets(rng, 4, 6, 0, 3), rand_sets(rng, 3, 6, 0, 3)
            assert one_nna(gen, ref) == oracle_one_nna(gen, ref)

    def test_duplicates_allowed(self):
        a = np.zeros((1, 3))
        assert one_nna([a, a], [a, a]) == 50.0  # ties: gen before ref, then index


class TestTMD:
    def test_identical(self, rng):
        X = rand_sets(rng, 1)[0]
        assert tmd([[X, X, X]]) == 0.0

    def test_single_pair(self):
        C1 = np.array([[0.0, 0, 0]])
        C2 = np.array([[1.0, 1, 1]])  # chamfer = 3 + 3
        assert tmd([[C1, C2]]) == 6.0

    def test_random_against_oracle(self, rng):
        groups = [rand_sets(rng, 4) for _ in range(3)]
        want = np.mean([np.mean([oracle_chamfer(a, b) for a, b in itertools.combinations(g, 2)]) for g in groups])
        assert tmd(groups) == pytest.approx(want, abs=1e-12)
        assert tmd_per_partial(groups) == [tmd([g]) for g in groups]

    def test_k_too_small(self):
        with pytest.raises(KTooSmall):
            tmd([[np.zeros((1, 3))]])


class TestUHD:
    def test_hand_example(self):
        assert uhd([[0, 0, 0], [2, 0, 0]], [[[0, 0, 0]]]) == 2.0

    def test_subset_gives_zero(self, rng):
        P = rng.integers(0, 5, size=(6, 3))
        C = [np.vstack([P, rng.integers(0, 5, size=(4, 3))]) for _ in range(3)]
        assert uhd(P, C) == 0.0

    def test_unsquared(self):
        assert directed_hausdorff([[3, 4, 0]], [[0, 0, 0]]) == 5.0

    def test_random_against_oracle(self, rng):
        P = rand_sets(rng, 1)[0]
        C = rand_sets(rng, 3)
        want = np.mean([max(min(math.dist(p, c) for c in Ci) for p in P) for Ci in C])
        assert uhd(P, C) == pytest.approx(want, abs=1e-12)
        assert uhd_mean([P, P], [C, C]) == uhd(P, C)

    def test_needs_completion(self):
        with pytest.raises(KTooSmall):
            uhd(np.zeros((1, 3)), [])
