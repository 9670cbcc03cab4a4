"""Acceptance criteria, one test per criterion (or per sub-case).

Every test records a PASS/FAIL line shown in the "acceptance criteria"
section of the pytest summary.  Run alone with ``python tests/test_acceptance.py``.
Sub-cases whose stated targets are not reproducible are strict xfails; the
check itself is not loosened.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_joint_set, random_moment_set
from lowbias.cli import run
from lowbias.corrections import UEMatrixProblem, assemble_estimate, ue_matrix
from lowbias.covariance import inverse_mean_variance, k1, ratio_cov_bundle, ratio_gamma_forms
from lowbias.derivatives import (
    CentralMoment,
    PartialDerivativeTable,
    appendix_d_value,
    cdf_derivative,
    first_derivative,
    gateaux_numeric,
    mu_r_derivative,
)
from lowbias.empirical import JointMomentSet, MomentSet, central_moments
from lowbias.functionals import (
    A_I7_PRINTED,
    central_moment,
    central_moment_ue,
    estimate,
    mu3mu2_ue,
    mu4_mu2sq_ue,
    multivariate_moment_ue,
    power_of_mean,
    resolve,
)
from lowbias.montecarlo import Exponential, Normal, jackknife_baseline, plan_simulations, run_bias_experiment
from lowbias.oracle import BiasCurve, DiscreteDistribution, exact_bias_curve, exact_expectation, exact_moments

THREE = DiscreteDistribution([0.0, 1.0, 3.0], [0.5, 0.3, 0.2])
THREE_2D = DiscreteDistribution([[0.0, 1.0], [1.0, 0.0], [2.0, 3.0]], [0.3, 0.3, 0.4])
THREE_3D = DiscreteDistribution([[0.0, 1.0, 2.0], [1.0, 0.0, 0.0], [2.0, 3.0, 1.0]], [0.3, 0.3, 0.4])
RATIO_LAW = DiscreteDistribution([[1.0, 2.0], [2.0, 1.0], [3.0, 4.0]], [0.5, 0.3, 0.2])
POSITIVE = DiscreteDistribution([1.0, 2.0, 5.0], [0.2, 0.5, 0.3])


def s_series(forms_of, p, R):
    def stat(b):
        return assemble_estimate(forms_of(b.moment_set(R)).series("S"), b.n, p)

    return stat


def ue_cases():
    mu = THREE.central
    mean = float(THREE.mean())
    cases = [(f"mu_{r}", s_series(lambda m, r=r: central_moment(r, m), 4, r), mu(r)) for r in (2, 3, 4)]
    cases.append(("mu_5", lambda b: central_moment_ue(5, b.moment_set(5), b.n), mu(5)))
    cases.append(("mu_2^2", lambda b: mu4_mu2sq_ue(b.moment_set(4), b.n)[1], mu(2) ** 2))
    cases.append(("mu_3 mu_2", lambda b: mu3mu2_ue(b.moment_set(5), b.n)[1], mu(3) * mu(2)))
    for p in (2, 3, 4):
        cases.append((f"mu^{p}", s_series(lambda m, p=p: power_of_mean(p, m), p, 4), mean**p))
    return cases


class TestCriterion1:
    def test_exact_unbiasedness(self, acceptance):
        start = time.perf_counter()
        worst, failures = 0.0, []
        for n in (6, 8):
            for name, stat, truth in ue_cases():
                err = abs(exact_expectation(stat, THREE, n) - truth) / abs(truth)
                worst = max(worst, err)
                if err > 1e-9:
                    failures.append(f"{name} n={n}")
            for index, law in (((1, 2), THREE_2D), ((1, 2, 3), THREE_3D)):
                truth = law.joint(index)
                e = exact_expectation(lambda b, i=index: multivariate_moment_ue(i, b.joint_set(len(i)), b.n), law, n)
                err = abs(e - truth) / abs(truth)
                worst = max(worst, err)
                if err > 1e-9:
                    failures.append(f"mu{''.join(map(str, index))} n={n}")
        elapsed = time.perf_counter() - start
        ok = not failures and elapsed < 10
        acceptance(1, "designated UEs exact under enumeration", ok,
                   f"worst relative bias {worst:.1e}, {elapsed:.1f} s" + (f"; failing {failures}" if failures else ""))
        assert ok


class TestCriterion2:
    def test_third_moment_closed_form(self, acceptance):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(3, 40))
            x = rng.gamma(2.0, size=n) * rng.uniform(0.1, 10)
            m = central_moments(x, 3)
            got = assemble_estimate(central_moment(3, m).series("S"), n, 3)
            want = m[3] * n**2 / ((n - 1) * (n - 2))
            worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
        ok = worst <= 1e-12
        acceptance(2, "mu_3 UE equals n^2 mu3_hat / ((n-1)(n-2))", ok, f"worst relative error {worst:.1e}")
        assert ok

    def test_matrix_method_degree_four(self, acceptance):
        res = ue_matrix(UEMatrixProblem(4, [[-4, 6], [1, -3]], [[6, -15], [-2, 5]]))
        ok = np.array_equal(res.B[1], [[-2, -6], [-1, -3]]) and np.array_equal(res.B[2], [[3, 9], [1, 3]])
        acceptance(2, "ue_matrix p=4 B_1, B_2", ok, f"B_1={res.B[1].tolist()}, B_2={res.B[2].tolist()}")
        assert ok

    def test_a_i7(self, acceptance):
        rng = np.random.default_rng(7)
        exact = True
        for _ in range(50):
            # integer-valued moments keep every product exact in floating point
            m = MomentSet(0.0, {r: float(rng.integers(-20, 21)) if r % 2 else float(rng.integers(1, 40))
                                for r in range(2, 17)})
            exact &= all(a == f(m) for a, f in zip(central_moment(7, m).extra["a"], A_I7_PRINTED))
        m = random_moment_set(rng)
        a = central_moment(7, m).extra["a"]
        close = all(abs(x - f(m)) <= 1e-12 * max(abs(f(m)), 1e-300) for x, f in zip(a, A_I7_PRINTED))
        ok = exact and close
        acceptance(2, "a_i7 coefficients from the S/T machinery", ok)
        assert ok


STOCHASTIC = [
    ("central_moment:4", Normal(0, 1), "S", 60000, {1: (-0.19, 0.02), 2: (-0.05, 0.02)}),
    ("sd", Exponential(1), "S", 30000, {1: (-0.123, 0.015), 2: (-0.042, 0.015)}),
    ("mean_pow:-1", Exponential(1), "truncated-S", 5000, {1: (0.11, 0.02), 2: (0.015, 0.015)}),
]


class TestCriterion3:
    @pytest.mark.parametrize("functional, dist, family, N, targets", STOCHASTIC,
                             ids=["mu4-normal", "sd-exp", "inverse-mean-exp"])
    def test_table_cells(self, acceptance, functional, dist, family, N, targets):
        ok_all = True
        for p, (target, tol) in targets.items():
            start = time.perf_counter()
            rep = run_bias_experiment(functional, dist, 10, p, N, seed=2024, family=family)
            elapsed = time.perf_counter() - start
            ok = abs(rep.relative_bias - target) <= tol and elapsed < 60
            acceptance(3, f"{functional} {dist.label} n=10 p={p}", ok,
                       f"relative bias {rep.relative_bias:+.4f} vs {target:+.3f} +- {tol}, {elapsed:.1f} s")
            ok_all &= ok
        assert ok_all


PLANNER = [
    ("central_moment:2", Normal(0, 1), 1, 8.0, 1e-12, "mu_2 normal phi_1"),
    ("central_moment:4", Normal(0, 1), 1, 32 / 3, 1e-12, "mu_4 normal phi_1"),
    ("central_moment:4", Normal(0, 1), 2, 128 / 75, 1e-12, "mu_4 normal phi_2"),
    pytest.param("central_moment:4", Exponential(1), 1, 62.44, 0.01, "mu_4 exp phi_1",
                 marks=pytest.mark.xfail(strict=True, reason="target V_T omits 16 mu_2 mu_3^2; correct phi_1 = 62.72")),
    ("sd", Normal(0, 1), 1, 32 / 9, 1e-12, "sd normal phi_1"),
    pytest.param("sd", Normal(0, 1), 2, 2048.0, 1e-12, "sd normal phi_2",
                 marks=pytest.mark.xfail(strict=True, reason="target uses S_2 = 1/32; correct S_2 = 25/32 gives 3.2768")),
    pytest.param("sd", Exponential(1), 2, 0.01129, 1e-4, "sd exp phi_2",
                 marks=pytest.mark.xfail(strict=True, reason="target uses S_2 = 213/8; correct S_2 = 23.125 gives 0.01496")),
]


class TestCriterion4:
    @pytest.mark.parametrize("functional, dist, p, target, tol, label", PLANNER)
    def test_phi(self, acceptance, functional, dist, p, target, tol, label):
        phi = plan_simulations(functional, dist, 10, p, 0.1).phi
        # exact fractions are checked at relative 1e-12, quoted decimals at their absolute tolerance
        ok = abs(phi - target) <= (tol * abs(target) if tol < 1e-9 else tol)
        acceptance(4, label, ok, f"phi = {phi:.6g}, target {target:.6g}")
        assert ok


class TestCriterion5:
    @pytest.mark.parametrize("functional, law", [("ratio_means", RATIO_LAW), ("sd", THREE)])
    def test_bias_order(self, acceptance, functional, law):
        spec = resolve(functional)
        truth = spec.truth(law)
        curves = {}
        for p in (1, 2):
            stat = lambda b, p=p: estimate(spec, spec.extract(b), b.n, p)  # noqa: E731
            curves[p] = exact_bias_curve(lambda n, stat=stat: stat, law, range(4, 13), truth)
        bounded = all(curves[p].bounded(p) for p in (1, 2))
        smaller = abs(curves[2].biases[-1]) < abs(curves[1].biases[-1])
        ok = bounded and smaller
        acceptance(5, f"{functional}: |bias| n^p bounded for p=1,2; p=2 below p=1 at n=12", ok,
                   f"sup n|bias| {curves[1].sup_scaled(1):.4g}, sup n^2|bias| {curves[2].sup_scaled(2):.4g}")
        assert ok


ATOMS = np.array([-1.0, 0.5, 2.0, 3.5])
PROBS = np.array([0.3, 0.4, 0.2, 0.1])


class TestCriterion6:
    def test_appendix_tables(self, acceptance):
        rng = np.random.default_rng(500)
        worst = 0.0
        for _ in range(500):
            r = int(rng.integers(2, 7))
            p = int(rng.integers(1, r + 1))
            m = random_moment_set(rng, R=8)
            pts = list(rng.normal(float(m.mean), 1.5, size=p))
            a, b = appendix_d_value(r, p, pts, m), mu_r_derivative(r, pts, m)
            worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
        ok = worst <= 1e-12
        acceptance(6, "general mu_r derivative vs tabulated forms, 500 draws", ok, f"worst {worst:.1e}")
        assert ok

    def test_gateaux(self, acceptance):
        law = DiscreteDistribution(ATOMS, PROBS)
        R = 6
        m = MomentSet(float(law.mean()), {r: law.central(r) for r in range(2, R + 1)})
        worst = 0.0
        for r in (2, 3):
            def T(a, p, r=r):
                return p @ (a - p @ a) ** r

            for x in (0.5, 1.3, -2.0, 4.0):
                worst = max(worst, abs(gateaux_numeric(T, ATOMS, PROBS, x, eps=1e-4) - mu_r_derivative(r, [x], m)))
        for x, y in ((0.5, 1.0), (2.0, 1.0), (-3.0, 0.5)):
            got = gateaux_numeric(lambda a, p: p @ (a <= y), ATOMS, PROBS, x, eps=1e-4)
            worst = max(worst, abs(got - cdf_derivative(x, y, float(PROBS @ (ATOMS <= y)))))
        atoms2 = np.array([[0.0, 1.0], [1.0, 0.5], [2.0, 2.5], [-1.0, 0.0]])
        probs2 = np.array([0.25, 0.35, 0.25, 0.15])
        law2 = DiscreteDistribution(atoms2, probs2)
        jm = JointMomentSet(law2.mean(), {k: law2.joint(k) for k in [(1, 1), (1, 2), (2, 2)]}, 2)
        g = PartialDerivativeTable.power_product([jm[(1, 2)], jm[(1, 1)], jm[(2, 2)]], [1, -0.5, -0.5])
        stats = [CentralMoment((1, 2)), CentralMoment((1, 1)), CentralMoment((2, 2))]

        def corr(a, p):
            c = a - p @ a
            return p @ (c[:, 0] * c[:, 1]) / math.sqrt((p @ c[:, 0] ** 2) * (p @ c[:, 1] ** 2))

        for x in ((0.0, 1.0), (2.0, -1.0), (1.0, 3.0)):
            worst = max(worst, abs(gateaux_numeric(corr, atoms2, probs2, x, eps=1e-4)
                                   - first_derivative(stats, g, jm, x)))
        ok = worst <= 1e-6
        acceptance(6, "Gateaux finite differences vs analytic first derivatives", ok, f"worst abs {worst:.1e}")
        assert ok


class TestCriterion7:
    def test_k1_gamma_form(self, acceptance):
        rng = np.random.default_rng(62)
        worst = 0.0
        for _ in range(200):
            jm = random_joint_set(rng, d=2, order=4)
            m1, m2 = jm.mean
            g11, g12, g22 = jm[(1, 1)] / m1**2, jm[(1, 2)] / (m1 * m2), jm[(2, 2)] / m2**2
            gamma = (m1 / m2) ** 2 * (g11 - 2 * g12 + g22)
            for got in (k1(ratio_cov_bundle([1.0, 0.0], [0.0, 1.0], jm)), k1(ratio_gamma_forms(jm))):
                worst = max(worst, abs(float(np.ravel(got)[0]) - gamma) / abs(gamma))
        ok = worst <= 1e-12
        acceptance(7, "ratio K_1 equals the gamma form", ok, f"worst relative {worst:.1e}")
        assert ok

    def test_inverse_mean_variance(self, acceptance):
        ns = tuple(range(6, 13))
        errors = []
        for n in ns:
            _, var = exact_moments(lambda b: 1 / b.mean[:, 0], POSITIVE, n)
            e = exact_expectation(lambda b: inverse_mean_variance(b.moment_set(3), n), POSITIVE, n)
            errors.append(e - var)
        curve = BiasCurve(ns, tuple(errors))
        ok = curve.bounded(3)
        acceptance(7, "mu^-1 variance estimate T*_n2 error O(n^-3)", ok,
                   f"n^3|error| from {curve.scaled(3)[0]:.4g} to {curve.scaled(3)[-1]:.4g}")
        assert ok


def _best_time(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


class TestCriterion8:
    def test_cost_scaling(self, acceptance):
        spec = resolve("mean_pow:-1")
        rng = np.random.default_rng(8)
        data = {n: rng.exponential(size=n) + 1.0 for n in (100_000, 200_000)}

        def analytic(x):
            return estimate(spec, central_moments(x, spec.order), len(x), 4)

        def jackknife(x):
            return jackknife_baseline(x, lambda a: 1.0 / np.mean(a))

        t_an = {n: _best_time(lambda x=x: analytic(x), 15) for n, x in data.items()}
        t_jk = {n: _best_time(lambda x=x: jackknife(x), 1) for n, x in data.items()}
        r_an = t_an[200_000] / t_an[100_000]
        r_jk = t_jk[200_000] / t_jk[100_000]
        ok = r_an <= 2.5 and r_jk >= 3.5
        acceptance(8, "analytic S_n4 grows <= 2.5x, jackknife >= 3.5x when n doubles", ok,
                   f"analytic {t_an[100_000] * 1e3:.1f} -> {t_an[200_000] * 1e3:.1f} ms ({r_an:.2f}x), "
                   f"jackknife {t_jk[100_000]:.1f} -> {t_jk[200_000]:.1f} s ({r_jk:.2f}x)")
        assert ok


class TestCriterion9:
    def test_byte_identical_csv(self, acceptance):
        base = ["simulate", "--functional", "sd", "--dist", "exp:1", "--n", "10,20", "--p", "1,2", "--N", "5000",
                "--seed", "99", "--runs", "2", "--baselines", "jackknife,bootstrap", "--B", "20", "--format", "csv"]
        outs = [run(base + ["--workers", w]) for w in ("1", "4", "4")]
        ok = all(code == 0 for code, _, _ in outs) and outs[0][1] == outs[1][1] == outs[2][1]
        acceptance(9, "identical seeds, 1 vs 4 workers: byte-identical CSV", ok,
                   f"{len(outs[0][1].encode())} bytes")
        assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
