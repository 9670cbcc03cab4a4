import math
from itertools import permutations, product

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_joint_set, random_moment_set
from lowbias.derivatives import (
    CentralMoment,
    Engine,
    ExplicitSMoments,
    G_bracket,
    H_bracket,
    Mean,
    PartialDerivativeTable,
    SDerivativeMoments,
    appendix_d_value,
    bracket_1_12sq,
    bracket_11,
    bracket_12_1_2,
    bracket_12_12,
    bracket_21,
    bracket_111,
    cdf_derivative,
    chain_bundle,
    chain_terms,
    falling,
    first_derivative,
    gateaux_numeric,
    mu_r_bracket,
    mu_r_derivative,
)
from lowbias.empirical import JointMomentSet, MomentSet
from lowbias.errors import InvalidArgument, Unavailable
from lowbias.oracle import DiscreteDistribution

ATOMS = np.array([-1.0, 0.5, 2.0, 3.5])
PROBS = np.array([0.3, 0.4, 0.2, 0.1])
LAW = DiscreteDistribution(ATOMS, PROBS)
NORMAL = MomentSet.from_values(0.0, [1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0])


def law_moments(R=14):
    return MomentSet.from_values(float(PROBS @ ATOMS), [LAW.central(r) for r in range(2, R + 1)])


def integrate(f, k):
    """Sum of f over k independent atoms, weighted by the law."""
    return math.fsum(math.prod(PROBS[list(ix)]) * f(*ATOMS[list(ix)]) for ix in product(range(len(ATOMS)), repeat=k))


def D(r, *pts, m):
    return mu_r_derivative(r, list(pts), m)


class TestMuRDerivative:
    def test_first_derivative_of_variance(self):
        m = law_moments()
        for x in ATOMS:
            np.testing.assert_allclose(D(2, x, m=m), (x - m.mean) ** 2 - m[2], rtol=1e-12)

    def test_second_derivative_of_variance(self):
        m = law_moments()
        np.testing.assert_allclose(D(2, 0.3, 1.7, m=m), -2 * (0.3 - m.mean) * (1.7 - m.mean), rtol=1e-12)

    @pytest.mark.parametrize("r", [2, 3, 4, 6])
    def test_beyond_degree_is_zero(self, r):
        assert mu_r_derivative(r, [0.1] * (r + 1), law_moments()) == 0.0

    def test_regular_at_the_mean(self):
        m = law_moments()
        val = mu_r_derivative(4, [m.mean, 1.0, m.mean], m)
        assert math.isfinite(val)

    def test_r_too_small(self):
        with pytest.raises(InvalidArgument):
            mu_r_derivative(1, [0.0], law_moments())
        with pytest.raises(InvalidArgument):
            mu_r_derivative(3, [], law_moments())

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 7), st.lists(st.floats(-3, 3), min_size=1, max_size=5))
    def test_symmetric_in_points(self, r, pts):
        m = law_moments()
        base = mu_r_derivative(r, pts, m)
        for perm in list(permutations(pts))[:6]:
            np.testing.assert_allclose(mu_r_derivative(r, list(perm), m), base, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("r,p", [(r, p) for r in range(2, 8) for p in range(1, r + 1)])
    def test_integrates_to_zero(self, r, p):
        m = law_moments()
        rest = [0.7, -0.4, 1.9, 0.2, 1.1, -0.8][: p - 1]
        total = math.fsum(pr * mu_r_derivative(r, [x, *rest], m) for x, pr in zip(ATOMS, PROBS))
        assert abs(total) < 1e-10

    @pytest.mark.parametrize("r", [2, 3, 4, 5])
    def test_matches_engine(self, r):
        m = law_moments()
        eng = Engine([CentralMoment((1,) * r)], lambda idx: 1.0 if idx == (1,) else 0.0, {0: m})
        pts = [0.4, -1.2, 2.5][: min(r, 3)]
        poly = eng.s_poly(1, tuple((0, i) for i in range(len(pts))))
        h = {(0, i): x - m.mean for i, x in enumerate(pts)}
        val = sum(c * math.prod(h[pt] ** pw for (pt, _), pw in mono) for mono, c in poly.items())
        np.testing.assert_allclose(val, mu_r_derivative(r, pts, m), rtol=1e-12)


class TestTabulatedDerivatives:
    def test_random_draws_agree(self):
        rng = np.random.default_rng(500)
        worst = 0.0
        for _ in range(500):
            r = int(rng.integers(2, 7))
            p = int(rng.integers(1, r + 1))
            m = random_moment_set(rng, R=8)
            pts = list(rng.normal(float(m.mean), 1.5, size=p))
            a, b = appendix_d_value(r, p, pts, m), mu_r_derivative(r, pts, m)
            worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
        assert worst < 1e-12

    def test_third_moment_pair(self):
        m = law_moments()
        h1, h2 = 0.9 - m.mean, -0.2 - m.mean
        want = -3 * (h1**2 - m[2]) * h2 - 3 * h1 * (h2**2 - m[2])
        np.testing.assert_allclose(appendix_d_value(3, 2, [0.9, -0.2], m), want, rtol=1e-12)

    def test_fifth_moment_top_order(self):
        m = law_moments()
        pts = [0.1, 0.2, 0.4, 1.0, 2.0]
        np.testing.assert_allclose(appendix_d_value(5, 5, pts, m), 480 * math.prod(x - m.mean for x in pts),
                                   rtol=1e-12)

    @pytest.mark.parametrize("r,p,k", [(7, 1, 1), (3, 4, 4), (4, 2, 3), (1, 1, 1)])
    def test_out_of_range(self, r, p, k):
        with pytest.raises(InvalidArgument):
            appendix_d_value(r, p, [0.0] * k, law_moments())


class TestBrackets:
    def test_variance_repeated(self):
        m = law_moments()
        for r in range(2, 8):
            want = falling(r, 2) * m[r - 2] * m[2] - 2 * r * m[r]
            np.testing.assert_allclose(mu_r_bracket(r, [2], m), want, rtol=1e-12, atol=1e-12)

    def test_third_moment_triple(self):
        m = law_moments()
        np.testing.assert_allclose(mu_r_bracket(3, [3], m), 12 * m[3], rtol=1e-12)

    def test_q_above_r(self):
        assert mu_r_bracket(4, [2, 2, 2], law_moments()) == 0

    @pytest.mark.parametrize("parts", [[2, 2], [3], [4], [2, 3], [2, 1], [1, 2, 1]])
    def test_q_equals_r(self, parts):
        # the general formula at q = r reduces to (-1)^(r-1) (r-1) r! prod mu_i, which gives 12 mu_3 for [3]
        m = law_moments()
        r = sum(parts)
        want = (-1) ** (r - 1) * (r - 1) * math.factorial(r) * math.prod(m[i] for i in parts)
        np.testing.assert_allclose(mu_r_bracket(r, parts, m), want, rtol=1e-12, atol=1e-12)
        short = (-1) ** (r - 1) * math.factorial(r - 1) * math.prod(m[i] for i in parts)
        assert short == 0 or not np.isclose(short, want)

    @pytest.mark.parametrize("r,parts", [(r, parts) for r in range(2, 8)
                                         for parts in ([2], [3], [4], [2, 2], [2, 3], [2, 2, 2], [2, 1])])
    def test_matches_enumeration(self, r, parts):
        m = law_moments()

        def f(*xs):
            pts = [x for x, i in zip(xs, parts) for _ in range(i)]
            return mu_r_derivative(r, pts, m)

        np.testing.assert_allclose(mu_r_bracket(r, parts, m), integrate(f, len(parts)), rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("parts", [[], [0], [1.5], [-1]])
    def test_invalid_partition(self, parts):
        with pytest.raises(InvalidArgument):
            mu_r_bracket(4, parts, law_moments())

    def test_pair_at_normal(self):
        assert bracket_11(2, 2, NORMAL) == pytest.approx(2.0)

    @pytest.mark.parametrize("i,j", [(2, 3), (3, 5), (4, 2)])
    def test_pair_symmetry(self, i, j):
        m = law_moments()
        np.testing.assert_allclose(bracket_11(i, j, m), bracket_11(j, i, m), rtol=1e-12)

    IJ = [(2, 2), (2, 3), (3, 4), (4, 2), (5, 3)]

    @pytest.mark.parametrize("i,j", IJ)
    def test_pair_enumeration(self, i, j):
        m = law_moments()
        want = integrate(lambda x: D(i, x, m=m) * D(j, x, m=m), 1)
        np.testing.assert_allclose(bracket_11(i, j, m), want, rtol=1e-10)

    @pytest.mark.parametrize("i,j,k", [(2, 2, 2), (2, 3, 4), (3, 3, 2), (4, 2, 3)])
    def test_triple_enumeration(self, i, j, k):
        m = law_moments()
        want = integrate(lambda x: D(i, x, m=m) * D(j, x, m=m) * D(k, x, m=m), 1)
        np.testing.assert_allclose(bracket_111(i, j, k, m), want, rtol=1e-10)

    @pytest.mark.parametrize("i,j", IJ)
    def test_21_enumeration(self, i, j):
        m = law_moments()
        want = integrate(lambda x: D(i, x, x, m=m) * D(j, x, m=m), 1)
        np.testing.assert_allclose(bracket_21(i, j, m), want, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("i,j", IJ)
    def test_1_12sq_enumeration(self, i, j):
        m = law_moments()
        want = integrate(lambda x, y: D(i, x, m=m) * D(j, x, y, y, m=m), 2)
        np.testing.assert_allclose(bracket_1_12sq(i, j, m), want, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("i,j", IJ)
    def test_12_12_enumeration(self, i, j):
        m = law_moments()
        want = integrate(lambda x, y: D(i, x, y, m=m) * D(j, x, y, m=m), 2)
        np.testing.assert_allclose(bracket_12_12(i, j, m), want, rtol=1e-10)

    @pytest.mark.parametrize("i,j,k", [(2, 2, 2), (2, 3, 4), (3, 3, 2), (4, 2, 3)])
    def test_12_1_2_enumeration(self, i, j, k):
        m = law_moments()
        want = integrate(lambda x, y: D(i, x, y, m=m) * D(j, x, m=m) * D(k, y, m=m), 2)
        np.testing.assert_allclose(bracket_12_1_2(i, j, k, m), want, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("i,j,k", [(2, 3, 2), (3, 2, 4)])
    def test_G_and_H(self, i, j, k):
        m = law_moments()
        G = 2 * integrate(lambda x: D(i, x, m=m) * D(j, x, m=m), 1) * integrate(lambda y: D(k, y, y, m=m), 1) \
            + 4 * integrate(lambda x, y: D(i, x, y, m=m) * D(j, x, m=m) * D(k, y, m=m), 2)
        np.testing.assert_allclose(G_bracket(i, j, k, m), G, rtol=1e-10)
        H = 4 * integrate(lambda x, y: D(i, x, m=m) * D(j, x, y, y, m=m), 2) \
            + mu_r_bracket(i, [2], m) * mu_r_bracket(j, [2], m) \
            + 2 * integrate(lambda x, y: D(i, x, y, m=m) * D(j, x, y, m=m), 2)
        np.testing.assert_allclose(H_bracket(i, j, m), H, rtol=1e-10)


class TestPartialDerivativeTable:
    def test_symmetric_keys(self):
        g = PartialDerivativeTable(2, {(2, 1): 5.0})
        assert g((1, 2)) == g((2, 1)) == 5.0
        assert g((1, 1)) == 0.0

    def test_univariate(self):
        g = PartialDerivativeTable.univariate([1.0, 2.0, 3.0])
        assert (g.value, g((1,)), g((1, 1))) == (1.0, 2.0, 3.0)
        with pytest.raises(Unavailable):
            g((1, 1, 1))

    def test_index_range(self):
        with pytest.raises(InvalidArgument):
            PartialDerivativeTable(2, {})((3,))

    @pytest.mark.parametrize("powers", [(2, -1), (0.5, 3), (-2, -0.5)])
    def test_power_product_matches_sympy(self, powers):
        s1, s2 = sympy.symbols("s1 s2")
        point = (1.7, 0.6)
        expr = 1.5 * s1 ** sympy.nsimplify(powers[0]) * s2 ** sympy.nsimplify(powers[1])
        ref = PartialDerivativeTable.from_sympy(expr, (s1, s2), point, max_order=4)
        got = PartialDerivativeTable.power_product(point, powers, coef=1.5)
        for k in range(5):
            for idx in product((1, 2), repeat=k):
                np.testing.assert_allclose(got(idx), ref(idx), rtol=1e-10, atol=1e-12)

    def test_linear_ratio_matches_sympy(self):
        s = sympy.symbols("s1:4")
        alpha, beta, mu = (1.0, -2.0, 0.5), (0.3, 1.0, 2.0), (1.2, 0.7, 2.2)
        expr = sum(a * v for a, v in zip(alpha, s)) / sum(b * v for b, v in zip(beta, s))
        ref = PartialDerivativeTable.from_sympy(expr, s, mu, max_order=4)
        got = PartialDerivativeTable.linear_ratio(alpha, beta, mu)
        for k in range(5):
            for idx in product((1, 2, 3), repeat=k):
                np.testing.assert_allclose(got(idx), ref(idx), rtol=1e-10, atol=1e-12)

    def test_zero_coordinate_integer_power(self):
        g = PartialDerivativeTable.power_product([0.0, 2.0], [2, 1])
        assert g((1, 1, 1)) == 0.0
        assert g((1, 1)) == pytest.approx(4.0)


class TestChainBundle:
    def test_identity_gives_statistic_moment(self):
        m = law_moments()
        s = SDerivativeMoments([CentralMoment((1, 1, 1))], {0: m})
        g = PartialDerivativeTable(1, {(1,): 1.0})
        np.testing.assert_allclose(chain_bundle(g, s, (2,)), s.value((1,), ("a2",), {"a": 0}), rtol=1e-12)
        np.testing.assert_allclose(chain_bundle(g, s, (2,)), mu_r_bracket(3, [2], m), rtol=1e-12)

    def test_function_of_variance(self):
        m = law_moments()
        g1, g2 = 0.8, -0.3
        g = PartialDerivativeTable.univariate([1.0, g1, g2, 0.0, 0.0])
        s = SDerivativeMoments([CentralMoment((1, 1))], {0: m})
        want = g2 * (m[4] - m[2] ** 2) + g1 * (-2 * m[2])
        np.testing.assert_allclose(chain_bundle(g, s, (2,)), want, rtol=1e-12)

    def test_mean_over_sd(self):
        m = law_moments()
        mu, s2 = m.mean, m[2]
        beta, b3, b4 = mu / math.sqrt(s2), m[3] / s2**1.5, m[4] / s2**2
        g = PartialDerivativeTable.power_product([mu, s2], [1, -0.5])
        s = SDerivativeMoments([Mean(), CentralMoment((1, 1))], {0: m})
        # derivative moments of (mean, mu_2) give -beta_3 for the cross term
        want = -b3 + beta * (3 * b4 + 1) / 4
        np.testing.assert_allclose(chain_bundle(g, s, (2,)), want, rtol=1e-10)

    @pytest.mark.parametrize("pattern", [(2,), (3,), (4,), (2, 2), (2, 3), (2, 2, 2)])
    def test_templates_match_engine(self, pattern):
        rng = np.random.default_rng(7)
        jm = random_joint_set(rng, d=2, order=12)
        stats = [Mean(1), CentralMoment((1, 2)), CentralMoment((2, 2))]
        g = PartialDerivativeTable.power_product([float(jm.mean[0]), jm[(1, 2)], jm[(2, 2)]], [1, 1, -1.5])
        s = SDerivativeMoments(stats, {0: jm})
        eng = Engine(stats, g, {0: jm})
        want = eng.bundle_value(tuple((0, e) for e in pattern))
        np.testing.assert_allclose(chain_bundle(g, s, pattern), want, rtol=1e-9)

    @pytest.mark.parametrize("pattern", [((0, 2), (1, 2)), ((1, 2), (0, 3)), ((0, 2), (1, 2), (0, 2))])
    def test_tagged_patterns_match_engine(self, pattern):
        rng = np.random.default_rng(8)
        m0, m1 = random_moment_set(rng, R=12), random_moment_set(rng, R=12)
        stats = [Mean(1, 0), Mean(1, 1), CentralMoment((1, 1), 1)]
        g = PartialDerivativeTable.power_product([float(m0.mean), float(m1.mean), m1[2]], [2, -1, 0.5])
        s = SDerivativeMoments(stats, {0: m0, 1: m1})
        eng = Engine(stats, g, {0: m0, 1: m1})
        np.testing.assert_allclose(chain_bundle(g, s, pattern), eng.bundle_value(pattern), rtol=1e-9)

    def test_missing_moment(self):
        g = PartialDerivativeTable(1, {(1,): 1.0, (1, 1): 1.0})
        s = ExplicitSMoments(1, {((1,), ("a2",)): 2.0})
        with pytest.raises(Unavailable, match="S_11"):
            chain_bundle(g, s, (2,))

    def test_missing_g_order(self):
        g = PartialDerivativeTable.univariate([1.0, 1.0])
        s = SDerivativeMoments([CentralMoment((1, 1))], {0: law_moments()})
        with pytest.raises(Unavailable):
            chain_bundle(g, s, (2,))

    def test_unknown_pattern(self):
        with pytest.raises(InvalidArgument):
            chain_terms((5,))

    def test_first_order_moments_vanish(self):
        m = law_moments()
        s = SDerivativeMoments([Mean(), CentralMoment((1, 1)), CentralMoment((1, 1, 1))], {0: m})
        for i in (1, 2, 3):
            assert abs(s.value((i,), ("a",), {"a": 0})) < 1e-12


def law_central(r):
    def T(atoms, probs):
        mu = probs @ atoms
        return probs @ (atoms - mu) ** r

    return T


class TestGateaux:
    @pytest.mark.parametrize("x", [0.5, 1.3, -2.0])
    def test_mean(self, x):
        got = gateaux_numeric(lambda a, p: p @ a, ATOMS, PROBS, x)
        np.testing.assert_allclose(got, x - PROBS @ ATOMS, rtol=1e-10)

    @pytest.mark.parametrize("r", [2, 3])
    @pytest.mark.parametrize("x", [0.5, 1.3, -2.0, 4.0])
    def test_central_moments(self, r, x):
        m = law_moments()
        got = gateaux_numeric(law_central(r), ATOMS, PROBS, x, eps=1e-4)
        np.testing.assert_allclose(got, mu_r_derivative(r, [x], m), atol=1e-6)
        g = PartialDerivativeTable(1, {(1,): 1.0})
        np.testing.assert_allclose(got, first_derivative([CentralMoment((1,) * r)], g, m, x), atol=1e-6)

    @pytest.mark.parametrize("x,y", [(0.5, 1.0), (2.0, 1.0), (-3.0, 0.5), (0.5, 0.5)])
    def test_distribution_function(self, x, y):
        T = lambda a, p: p @ (a <= y)  # noqa: E731
        got = gateaux_numeric(T, ATOMS, PROBS, x, eps=1e-4)
        np.testing.assert_allclose(got, cdf_derivative(x, y, float(PROBS @ (ATOMS <= y))), atol=1e-6)

    @pytest.mark.parametrize("x", [(0.0, 1.0), (2.0, -1.0), (1.0, 3.0)])
    def test_correlation(self, x):
        atoms = np.array([[0.0, 1.0], [1.0, 0.5], [2.0, 2.5], [-1.0, 0.0]])
        probs = np.array([0.25, 0.35, 0.25, 0.15])

        def corr(a, p):
            c = a - p @ a
            cov = p @ (c[:, 0] * c[:, 1])
            return cov / math.sqrt((p @ c[:, 0] ** 2) * (p @ c[:, 1] ** 2))

        law = DiscreteDistribution(atoms, probs)
        jm = JointMomentSet(law.mean(), {k: law.joint(k) for k in [(1, 1), (1, 2), (2, 2)]}, 2)
        g = PartialDerivativeTable.power_product([jm[(1, 2)], jm[(1, 1)], jm[(2, 2)]], [1, -0.5, -0.5])
        stats = [CentralMoment((1, 2)), CentralMoment((1, 1)), CentralMoment((2, 2))]
        analytic = first_derivative(stats, g, jm, x)
        np.testing.assert_allclose(gateaux_numeric(corr, atoms, probs, x, eps=1e-4), analytic, atol=1e-6)

    def test_bad_eps(self):
        with pytest.raises(InvalidArgument):
            gateaux_numeric(lambda a, p: p @ a, ATOMS, PROBS, 0.0, eps=0.0)
