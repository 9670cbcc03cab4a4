import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lowbias.empirical import (
    BatchMoments,
    JointMomentSet,
    MomentSet,
    MultiSample,
    Sample,
    canonical_index,
    central_moments,
    empirical_probability,
    joint_central_moments,
    read_sample,
)
from lowbias.errors import DataError, DegenerateError, InvalidArgument

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


class TestSample:
    def test_univariate_shape(self):
        s = Sample([1.0, 2.0, 3.0])
        assert (s.n, s.d) == (3, 1)
        np.testing.assert_array_equal(s.values, [1.0, 2.0, 3.0])

    def test_vector_shape(self):
        s = Sample([[1, 2], [3, 4], [5, 7]])
        assert (s.n, s.d) == (3, 2)
        np.testing.assert_array_equal(s.column(2), [2, 4, 7])

    def test_read_only(self):
        s = Sample([1.0, 2.0])
        with pytest.raises(ValueError):
            s.observations[0, 0] = 5.0

    @pytest.mark.parametrize("bad, exc", [([], InvalidArgument), ([1.0, np.nan], DataError),
                                          ([[[1.0]]], InvalidArgument), ([1.0, np.inf], DataError)])
    def test_invalid(self, bad, exc):
        with pytest.raises(exc):
            Sample(bad)

    def test_multisample(self):
        ms = MultiSample([Sample([1.0, 2.0]), Sample([3.0, 4.0, 5.0])])
        assert ms.k == 2
        assert ms[1].n == 3


class TestCentralMoments:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_against_scipy(self, seed):
        x = np.random.default_rng(seed).gamma(2.0, size=57)
        m = central_moments(x, R=6)
        np.testing.assert_allclose(m.mean, x.mean(), rtol=1e-14)
        for r in range(2, 7):
            np.testing.assert_allclose(m[r], stats.moment(x, moment=r), rtol=1e-12)

    def test_divisor_is_n(self):
        m = central_moments([0.0, 2.0])
        assert m[2] == 1.0

    def test_low_orders(self):
        m = central_moments([1.0, 5.0, 9.0], R=3)
        assert (m[0], m[1], m[-1]) == (1.0, 0.0, 0.0)
        with pytest.raises(InvalidArgument):
            m[4]

    def test_large_offset(self):
        # two-pass moments stay exact under a large location shift
        x = np.array([1e9 + 1, 1e9 + 2, 1e9 + 3])
        np.testing.assert_allclose(central_moments(x)[2], 2 / 3, rtol=1e-12)

    def test_bad_order(self):
        with pytest.raises(InvalidArgument):
            central_moments([1.0, 2.0], R=1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=2, max_size=30), finite)
    def test_shift_invariance(self, xs, shift):
        a = central_moments(xs, R=4)
        b = central_moments(np.asarray(xs) + shift, R=4)
        scale = max(1.0, max(abs(v) for v in xs) + abs(shift))
        for r in range(2, 5):
            np.testing.assert_allclose(b[r], a[r], atol=1e-9 * scale**r)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=2, max_size=30), st.floats(min_value=-10, max_value=10))
    def test_scaling_matches_scaled(self, xs, c):
        got = central_moments(c * np.asarray(xs), R=4)
        want = central_moments(xs, R=4).scaled(c)
        scale = max(1.0, max(abs(v) for v in xs) * max(abs(c), 1.0))
        np.testing.assert_allclose(got.mean, want.mean, atol=1e-12 * scale)
        for r in range(2, 5):
            np.testing.assert_allclose(got[r], want[r], atol=1e-9 * scale**r)


class TestMomentSet:
    def test_from_values(self):
        m = MomentSet.from_values(1.5, [2.0, 0.5, 12.0])
        assert m.max_order == 4 and m[3] == 0.5

    @pytest.mark.parametrize("central", [{}, {3: 1.0}, {2: 1.0, 4: 3.0}, {2: -1.0}])
    def test_invalid(self, central):
        with pytest.raises(InvalidArgument):
            MomentSet(0.0, central)

    def test_beta(self):
        m = MomentSet.from_values(0.0, [4.0, 8.0, 48.0])
        assert m.beta(3) == 1.0 and m.beta(4) == 3.0

    def test_beta_degenerate(self):
        with pytest.raises(DegenerateError):
            MomentSet.from_values(0.0, [0.0, 0.0]).beta(3)

    def test_array_values(self):
        m = MomentSet(np.zeros(3), {2: np.array([1.0, 2.0, 3.0])})
        np.testing.assert_array_equal(m[2], [1.0, 2.0, 3.0])


class TestJointMoments:
    def test_canonical_index(self):
        assert canonical_index("2112") == canonical_index((1, 2, 2, 1)) == (1, 1, 2, 2)
        assert canonical_index(3) == (3,)

    def test_against_numpy(self, rng):
        x = rng.normal(size=(40, 3)) @ np.array([[1, 0.5, 0], [0, 1, 0.3], [0, 0, 1]])
        jm = joint_central_moments(x, max_order=4)
        c = x - x.mean(axis=0)
        np.testing.assert_allclose(jm[(1, 2)], np.mean(c[:, 0] * c[:, 1]), rtol=1e-12)
        np.testing.assert_allclose(jm["1123"], np.mean(c[:, 0] ** 2 * c[:, 1] * c[:, 2]), rtol=1e-12)
        np.testing.assert_allclose(jm[(3, 2, 1)], jm[(1, 2, 3)])
        np.testing.assert_allclose(np.array([[jm[(i, j)] for j in (1, 2, 3)] for i in (1, 2, 3)]),
                                   np.cov(x.T, bias=True), rtol=1e-12)

    def test_marginal(self, rng):
        x = rng.exponential(size=(25, 2))
        m = joint_central_moments(x, 4).marginal(2)
        ref = central_moments(x[:, 1], 4)
        for r in range(2, 5):
            np.testing.assert_allclose(m[r], ref[r], rtol=1e-12)

    def test_out_of_range(self, rng):
        jm = joint_central_moments(rng.normal(size=(5, 2)), 3)
        with pytest.raises(InvalidArgument):
            jm[(1, 3)]
        with pytest.raises(InvalidArgument):
            jm[(1, 1, 2, 2)]
        assert jm[()] == 1.0 and jm[(2,)] == 0.0

    def test_from_moment_set(self):
        m = MomentSet.from_values(2.0, [1.0, 0.3, 3.5])
        jm = JointMomentSet.from_moment_set(m)
        assert jm.d == 1 and jm[(1, 1, 1, 1)] == 3.5


class TestBatchMoments:
    def test_rows_match_single(self, rng):
        x = rng.gamma(3.0, size=(4, 11))
        bm = BatchMoments.from_samples(x)
        for i in range(4):
            ref = central_moments(x[i], 5)
            np.testing.assert_allclose(bm.mean[i, 0], ref.mean, rtol=1e-13)
            for r in range(2, 6):
                np.testing.assert_allclose(bm.central(r)[i], ref[r], rtol=1e-11, atol=1e-14)

    def test_counts_match_expanded(self):
        atoms = np.array([0.0, 1.0, 3.0])
        counts = np.array([[2, 1, 1], [0, 0, 4]])
        bm = BatchMoments.from_counts(atoms, counts)
        assert bm.n == 4
        for i, c in enumerate(counts):
            ref = central_moments(np.repeat(atoms, c), 4)
            np.testing.assert_allclose(bm.moment_set(4)[4][i], ref[4], atol=1e-14)

    def test_joint_set_and_expect(self, rng):
        x = rng.normal(size=(3, 9, 2))
        bm = BatchMoments.from_samples(x)
        js = bm.joint_set(3)
        ref = joint_central_moments(x[1], 3)
        np.testing.assert_allclose(js[(1, 2, 2)][1], ref[(1, 2, 2)], rtol=1e-12)
        np.testing.assert_allclose(bm.expect(lambda p: p[..., 0] ** 2), np.mean(x[..., 0] ** 2, axis=1))
        assert bm.joint(()).shape == (3,) and not bm.joint((1,)).any()


class TestEmpiricalProbability:
    def test_univariate(self):
        assert empirical_probability([1.0, 2.0, 3.0, 4.0], lambda v: v <= 2.5) == 0.5

    def test_vector(self):
        assert empirical_probability([[0, 1], [2, 2], [3, -1]], lambda v: v[0] < v[1]) == pytest.approx(1 / 3)


class TestReadSample:
    def test_comments_and_delimiters(self, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("# header\n1, 2\n\n3 4\n5\t6\n")
        s = read_sample(path)
        np.testing.assert_array_equal(s.observations, [[1, 2], [3, 4], [5, 6]])

    @pytest.mark.parametrize("text, msg", [("", "no observations"), ("# only\n", "no observations"),
                                           ("1\nx\n", "not numeric"), ("1 2\n3\n", "differing length")])
    def test_errors(self, tmp_path, text, msg):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(DataError, match=msg):
            read_sample(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            read_sample(tmp_path / "nope.txt")
