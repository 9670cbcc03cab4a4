"""Catalog of concrete functionals with their correction terms.

Every entry returns a :class:`Forms`: the value ``T(F)``, the T-family and
S-family correction series, bias coefficients where known, and (when one
exists) the generic :class:`DerivativeBundle` that produced or checks them.
Closed forms are written in terms of central moments ``mu_r`` (``m[r]``)
and work elementwise on numpy arrays, so one call can correct many Monte
Carlo replicates at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np

from ._poly import CentralMoment, Engine, Mean, p_mul
from .corrections import (
    CORE_KEYS,
    EXTENDED_KEYS,
    CorrectionSeries,
    DerivativeBundle,
    UEMatrixProblem,
    assemble_estimate,
    bias_coeffs_one_sample,
    corrections_one_sample,
    plus_estimate,
    product_form_coefficients,
    product_form_estimate,
    simpler_one_sample,
    t_to_s,
    ue_matrix,
)
from .derivatives import (
    G_bracket,
    H_bracket,
    PartialDerivativeTable,
    bracket_11,
    bracket_111,
    bracket_21,
    falling,
    mu_r_bracket,
)
from .empirical import BatchMoments, JointMomentSet, MomentSet
from .errors import DegenerateError, InvalidArgument, Unavailable

__all__ = [
    "Forms",
    "engine_bundle",
    "influence_variance",
    "mean_function",
    "linear_ratio",
    "ratio_of_means",
    "power_of_mean",
    "means_of_k_samples",
    "ratio_of_two_means",
    "central_moment",
    "central_moment_ue",
    "central_moment_influence_variance",
    "moment_product",
    "mu_r_power",
    "g_of_mu2",
    "mu2_power",
    "sd",
    "mean_over_sd",
    "MU3MU2_A",
    "MU4_MU2SQ_A",
    "mu3mu2_ue",
    "mu4_mu2sq_ue",
    "return_period",
    "return_period_terms",
    "conditional_mean",
    "conditional_mean_printed",
    "ExceedanceEstimate",
    "exceedance_estimators",
    "exceedance_derivative",
    "multivariate_moment_ue",
    "CorrelationEstimate",
    "correlation_estimators",
    "FunctionalSpec",
    "CATALOG_IDS",
    "resolve",
    "estimate",
]


@dataclass(frozen=True)
class Forms:
    """Value, correction series and bias coefficients of one functional."""

    value: object
    T: CorrectionSeries | None = None
    S: CorrectionSeries | None = None
    C: tuple = ()
    bundle: DerivativeBundle | None = None
    extra: Mapping = field(default_factory=dict)

    def series(self, family: str = "S") -> CorrectionSeries:
        s = {"S": self.S, "T": self.T}.get(family)
        if family not in ("S", "T"):
            raise InvalidArgument(f"unknown family {family!r}")
        if s is None:
            raise Unavailable(f"{family}-family series")
        return s


def _series(base, terms, family, name) -> CorrectionSeries:
    return CorrectionSeries(base, tuple(terms), "power" if family == "T" else "falling", family, name)


def _nonzero(x, what: str) -> None:
    if np.any(np.asarray(x) == 0):
        raise DegenerateError(f"{what} is zero")


def _positive(x, what: str) -> None:
    if np.any(np.asarray(x) <= 0):
        raise DegenerateError(f"{what} must be positive")


# Generic paths.


def engine_bundle(stats, g: PartialDerivativeTable, moments: Mapping, extended: bool = False,
                  lambdas: Sequence[float] | None = None) -> DerivativeBundle:
    """Bundle of ``T(F) = g(S(F))`` from the exact polynomial engine.

    ``moments`` maps sample number to MomentSet / JointMomentSet; with
    ``lambdas`` the tagged multisample keys are filled in.
    """
    eng = Engine(stats, g, moments)
    if lambdas is None:
        keys = list(CORE_KEYS) + (list(EXTENDED_KEYS) if extended else [])
        fn = lambda k: eng.bundle_value(tuple((0, e) for e in k))  # noqa: E731
    else:
        keys = DerivativeBundle.multisample_keys(len(lambdas), extended)
        fn = eng.bundle_value
    return DerivativeBundle.from_function(fn, keys, lambdas, g(()))


def influence_variance(stats, g: PartialDerivativeTable, moments: Mapping,
                       lambdas: Sequence[float] | None = None):
    """``V_T = sum_a lambda_a integral T_F(x_a)^2 dF_a``."""
    eng = Engine(stats, g, moments)
    samples = sorted(moments)
    lam = (1.0,) * len(samples) if lambdas is None else tuple(lambdas)
    total = 0.0
    for a, la in zip(samples, lam):
        t = eng.t_poly(((a, 0),))
        total = total + la * eng.integrate(p_mul(t, t))
    return total


def mean_function(g: PartialDerivativeTable, jm: JointMomentSet, extended: bool = False) -> DerivativeBundle:
    """Bundle of ``g(mean vector)``: each exponent group contracts against one joint moment."""
    s = g.q
    if jm.d != s:
        raise InvalidArgument(f"g has {s} arguments but the moments are {jm.d}-variate")

    def value(key):
        total = 0.0
        for idx in product(range(1, s + 1), repeat=sum(key)):
            gv = g(idx)
            if np.ndim(gv) == 0 and gv == 0:
                continue
            term, pos = gv, 0
            for e in key:
                term = term * jm[idx[pos : pos + e]]
                pos += e
            total = total + term
        return total

    keys = list(CORE_KEYS) + (list(EXTENDED_KEYS) if extended else [])
    return DerivativeBundle.from_function(value, keys, None, g(()))


def _forms_from_bundle(b: DerivativeBundle, name: str, terms: int = 3, **extra) -> Forms:
    T = corrections_one_sample(b, terms=terms)
    S = simpler_one_sample(b, terms=terms)
    T = CorrectionSeries(T.base, T.terms, T.scheme, "T", name)
    S = CorrectionSeries(S.base, S.terms, S.scheme, "S", name)
    order = 4 if all(k in b for k in EXTENDED_KEYS) else terms
    return Forms(b.base, T, S, bias_coeffs_one_sample(b, order), b, dict(extra))


# Ratios and powers of means.


def linear_ratio(alpha: Sequence[float], beta: Sequence[float], jm: JointMomentSet, tol: float = 1e-12) -> Forms:
    """``T = alpha'mu / beta'mu`` for a multivariate mean ``mu``."""
    mu = np.asarray(jm.mean, dtype=float)
    D = float(np.asarray(beta, dtype=float) @ mu)
    if abs(D) <= tol:
        raise DegenerateError(f"denominator beta'mu = {D:g} is zero")
    g = PartialDerivativeTable.linear_ratio(alpha, beta, mu)
    return _forms_from_bundle(mean_function(g, jm, extended=True), "linear_ratio")


def ratio_of_means(jm: JointMomentSet) -> Forms:
    """``mu_1 / mu_2`` for one bivariate sample, in closed form (arrays allowed)."""
    M1, M2 = jm.mean[0], jm.mean[1]
    _nonzero(M2, "mean of the second coordinate")
    T = M1 / M2
    r = jm[(2, 2)] / M2**2
    w = jm[(2, 2, 2)] / M2**3
    A = jm[(1, 2)] - T * jm[(2, 2)]
    B = jm[(1, 2, 2)] - T * jm[(2, 2, 2)]
    Cc = jm[(1, 2, 2, 2)] - T * jm[(2, 2, 2, 2)]
    S1 = A / M2**2
    S2 = 2 * B / M2**3 - 3 * S1 * r
    S3 = S1 * (-9 * r - 8 * w + 15 * r**2) - 12 * B * r / M2**3 + 6 * Cc / M2**4
    T2 = 2 * B / M2**3 - S1 * (-1 + 3 * r)
    T3 = S1 * (1 - 18 * r - 8 * w + 15 * r**2) + 6 * B / M2**3 * (1 - 2 * r) + 6 * Cc / M2**4
    return Forms(T, _series(T, (S1, T2, T3), "T", "ratio"), _series(T, (S1, S2, S3), "S", "ratio"), (-S1,))


def power_of_mean(p: float, m: MomentSet) -> Forms:
    """``mu^p`` for real ``p``."""
    mu = m.mean
    if (p < 0 or p != int(p)) and np.any(np.asarray(mu) == 0):
        raise DegenerateError("mu^p with mu = 0 needs a truncated estimate")
    f = [falling(p, i) * mu ** (p - i) if falling(p, i) != 0 else 0.0 * mu for i in range(7)]
    m2, m3, m4 = m[2], m[3], m[4]
    T1 = -f[2] * m2 / 2
    S2 = f[3] * m3 / 3 + f[4] * m2**2 / 8
    S3 = -f[4] * (2 * m4 - 3 * m2**2) / 8 - f[5] * m3 * m2 / 6 - f[6] * m2**3 / 48
    T3 = -f[2] * m2 / 2 + f[3] * m3 - f[4] * (m4 - 3 * m2**2) / 4 - f[5] * m3 * m2 / 6 - f[6] * m2**3 / 48
    C = (
        f[2] * m2 / 2,
        f[3] * m3 / 6 + f[4] * m2**2 / 8,
        f[4] * (m4 - 3 * m2**2) / 24 + f[5] * m2 * m3 / 12 + f[6] * m2**3 / 48,
    )
    bundle = DerivativeBundle(
        {(2,): f[2] * m2, (3,): f[3] * m3, (4,): f[4] * m4, (2, 2): f[4] * m2**2,
         (2, 3): f[5] * m2 * m3, (2, 2, 2): f[6] * m2**3},
        base=f[0],
    )
    extra = {}
    if p == -1:
        g2, g3, g4 = m2 / mu**2, m3 / mu**3, m4 / mu**4
        extra["s_gamma"] = (-g2, -2 * g3 + 3 * g2**2, -3 * (2 * g4 - 3 * g2**2) + 20 * g3 * g2 - 15 * g2**3)
    name = f"mean^{p:g}"
    return Forms(f[0], _series(f[0], (T1, T1 + S2, T3), "T", name), _series(f[0], (T1, S2, S3), "S", name),
                 C, bundle, extra)


def means_of_k_samples(g: PartialDerivativeTable, moments: Sequence[MomentSet], lambdas: Sequence[float]) -> Forms:
    """``g(mu[1], ..., mu[k])`` for ``k`` independent univariate samples."""
    k = len(moments)
    if g.q != k or len(lambdas) != k:
        raise InvalidArgument("g, moments and lambdas must all have k entries")
    lam = [float(v) for v in lambdas]
    A = range(k)
    mu = lambda i, a: moments[a][i]  # noqa: E731

    def gg(*tags):
        return g(tuple(a + 1 for a in tags))

    def direct(key):
        idx, val = [], 1.0
        for a, e in key:
            idx += [a] * e
            val = val * mu(e, a)
        return gg(*idx) * val

    bundle = DerivativeBundle.from_function(direct, DerivativeBundle.multisample_keys(k, extended=True), lam, g(()))
    two = sum(lam[a] * gg(a, a) * mu(2, a) for a in A)
    three = sum(lam[a] ** 2 * gg(a, a, a) * mu(3, a) for a in A)
    two2 = sum(lam[a] * lam[b] * gg(a, a, b, b) * mu(2, a) * mu(2, b) for a in A for b in A)
    four = sum(lam[a] ** 3 * gg(a, a, a, a) * (mu(4, a) - 3 * mu(2, a) ** 2) for a in A)
    t23 = sum(lam[a] * lam[b] ** 2 * gg(a, a, b, b, b) * mu(2, a) * mu(3, b) for a in A for b in A)
    t222 = sum(
        lam[a] * lam[b] * lam[c] * gg(a, a, b, b, c, c) * mu(2, a) * mu(2, b) * mu(2, c)
        for a in A for b in A for c in A
    )
    C = (two / 2, three / 6 + two2 / 8, four / 24 + t23 / 12 + t222 / 48)
    T1 = -two / 2
    T2 = three / 3 + two2 / 8 - sum(lam[a] ** 2 * gg(a, a) * mu(2, a) for a in A) / 2
    T3 = (
        -sum(lam[a] ** 3 * gg(a, a) * mu(2, a) for a in A) / 2
        + sum(lam[a] ** 3 * gg(a, a, a) * mu(3, a) for a in A)
        - sum(lam[a] ** 3 * gg(a, a, a, a) * (mu(4, a) / 4 - mu(2, a) ** 2 / 2) for a in A)
        + sum(lam[a] ** 2 * lam[b] * gg(a, a, b, b) * mu(2, a) * mu(2, b) for a in A for b in A) / 4
        - t23 / 6
        - t222 / 48
    )
    return Forms(g(()), _series(g(()), (T1, T2, T3), "T", "k-sample"), None, C, bundle)


def ratio_of_two_means(m1: MomentSet, m2: MomentSet, lam2: float = 1.0) -> Forms:
    """``mu(F_1) / mu(F_2)`` in the standardized ``nu_k = mu_k[2] / mu[2]^k`` form."""
    _nonzero(m2.mean, "mean of the second sample")
    R = m1.mean / m2.mean
    nu = {j: m2[j] / m2.mean**j for j in (2, 3, 4)}
    l, n2, n3, n4 = lam2, nu[2], nu[3], nu[4]
    C = (
        l * n2 * R,
        l**2 * (-n3 + 3 * n2**2) * R,
        l**3 * (n4 - 3 * n2**2 - 10 * n2 * n3 + 15 * n2**3) * R,
    )
    T = (
        -l * n2 * R,
        l**2 * (-2 * n3 - n2 + 3 * n2**2) * R,
        l**3 * (-6 * n4 - 6 * n3 - n2 - 15 * n2**3 + 20 * n3 * n2 + 18 * n2**2) * R,
    )
    return Forms(R, _series(R, T, "T", "two-sample ratio"), None, C, extra={"nu": nu})


# Central moments.

A_I7_PRINTED = (
    lambda m: m[7],
    lambda m: -7 * (2 * m[7] + 3 * m[5] * m[2]),
    lambda m: 7 * (11 * m[7] + 39 * m[5] * m[2] - 10 * m[4] * m[3] + 15 * m[3] * m[2] ** 2),
    lambda m: -7 * (28 * m[7] + 192 * m[5] * m[2] - 80 * m[4] * m[3] + 60 * m[3] * m[2] ** 2),
)


def _cm_terms(r: int, m: MomentSet) -> dict:
    f = lambda i: falling(r, i)  # noqa: E731
    # every term has total order r, so higher moments only meet zero coefficients
    mu = lambda k: m[k] if k <= r else 0.0  # noqa: E731
    m2, m3, m4, m5 = mu(2), mu(3), mu(4), mu(5)
    C1 = -(r * mu(r) - f(2) * mu(r - 2) * m2 / 2)
    C2 = f(2) * mu(r) / 2 - f(2) * (r - 1) * mu(r - 2) * m2 / 2 - f(3) * mu(r - 3) * m3 / 6 + f(4) * mu(r - 4) * m2**2 / 8
    C3 = (
        -f(3) * mu(r) / 6
        + f(3) * (r - 1) * mu(r - 2) * m2 / 4
        + f(3) * (r - 2) * mu(r - 3) * m3 / 6
        + f(4) * mu(r - 4) * (m4 - 3 * (r - 1) * m2**2) / 24
        - f(5) * mu(r - 5) * m3 * m2 / 12
        + f(6) * mu(r - 6) * m2**3 / 48
    )
    C4 = (
        f(4) * mu(r) / 24
        - f(4) * (r - 1) * mu(r - 2) * m2 / 12
        - f(4) * (r - 2) * mu(r - 3) * m3 / 12
        + f(4) * r * (r - 3) * mu(r - 4) * m2**2 / 16
        - f(4) * (r - 3) * mu(r - 4) * m4 / 24
        - f(5) * mu(r - 5) * m5 / 120
        + f(5) * (r - 2) * mu(r - 5) * m3 * m2 / 12
        + f(6) * mu(r - 6) * (m4 * m2 / 48 + m3**2 / 72 - r * m2**3 / 48)
        - f(7) * mu(r - 7) * m3 * m2**2 / 48
        + f(8) * mu(r - 8) * m2**4 / 384
    )
    T1 = r * mu(r) - f(2) * mu(r - 2) * m2 / 2
    T2 = r**2 * mu(r) - (r**3 - r) * mu(r - 2) * m2 / 2 - f(3) * mu(r - 3) * m3 / 3 + f(4) * mu(r - 4) * m2**2 / 8
    T3 = (
        r**3 * mu(r)
        - (r**4 - r) * mu(r - 2) * m2 / 2
        - f(3) * (r + 3) * mu(r - 3) * m3 / 3
        + f(4) * mu(r - 4) * (-2 * m4 + (r + 6) * m2**2) / 8
        + f(5) * mu(r - 5) * m3 * m2 / 6
        - f(6) * mu(r - 6) * m2**3 / 48
    )
    S2 = f(2) * mu(r) - r**2 * (r - 1) * mu(r - 2) * m2 / 2 - f(3) * mu(r - 3) * m3 / 3 + f(4) * mu(r - 4) * m2**2 / 8
    S3 = (
        f(3) * mu(r)
        - r * f(3) * mu(r - 2) * m2 / 2
        - r * f(3) * mu(r - 3) * m3 / 3
        - f(4) * mu(r - 4) * m4 / 4
        + (r + 3) * f(4) * mu(r - 4) * m2**2 / 8
        + f(5) * mu(r - 5) * m3 * m2 / 6
        - f(6) * mu(r - 6) * m2**3 / 48
    )
    return {"C": (C1, C2, C3, C4), "T": (T1, T2, T3), "S": (T1, S2, S3)}


def central_moment(r: int, m: MomentSet) -> Forms:
    """``mu_r`` for ``2 <= r <= 8``: C_1..C_4, both families and the James coefficients ``a_i``.

    ``extra["exact"]`` records whether the four-term S / James form is an
    exact unbiased estimate (true for ``r <= 5``).
    """
    if not 2 <= r <= 8 or int(r) != r:
        raise InvalidArgument(f"central moment order must be an integer in 2..8, got {r}")
    r = int(r)
    terms = _cm_terms(r, m)
    name = f"mu_{r}"
    T = _series(m[r], terms["T"], "T", name)
    S = _series(m[r], terms["S"], "S", name)
    extra = {"exact": r <= 5}
    if r <= 7:
        extra["a"] = product_form_coefficients(T, r)
    return Forms(m[r], T, S, terms["C"], extra=extra)


def central_moment_ue(r: int, m: MomentSet, n):
    """James-form estimate ``sum a_i n^-i / prod_{j<r}(1 - j/n)`` of ``mu_r`` (r <= 7)."""
    forms = central_moment(r, m)
    if "a" not in forms.extra:
        raise Unavailable(f"James form for mu_{r}")
    return product_form_estimate(forms.extra["a"], r, n)


def central_moment_influence_variance(r: int, m: MomentSet):
    """``integral mu_rF(x)^2 dF``."""
    mu = m.__getitem__
    return mu(2 * r) - mu(r) ** 2 - 2 * r * mu(r - 1) * mu(r + 1) + r**2 * mu(r - 1) ** 2 * mu(2)


# Products of central moments.


def moment_product(exponents: Mapping[int, float], m: MomentSet, coef: float = 1.0) -> Forms:
    """``coef * prod_j mu_j^{p_j}`` via the bracket sums (second-order terms)."""
    orders = sorted(int(j) for j in exponents)
    if not orders or orders[0] < 2:
        raise InvalidArgument("exponents must be keyed by moment orders >= 2")
    powers = [exponents[j] for j in orders]
    point = [m[j] for j in orders]
    for s, p in zip(point, powers):
        if p < 0 or p != int(p):
            _nonzero(s, "a moment raised to a negative or fractional power")
    g = PartialDerivativeTable.power_product(point, powers, coef)
    q = len(orders)
    Q = range(1, q + 1)
    o = lambda i: orders[i - 1]  # noqa: E731
    t2 = sum(g((i, j)) * bracket_11(o(i), o(j), m) for i in Q for j in Q) + sum(
        g((i,)) * mu_r_bracket(o(i), [2], m) for i in Q
    )
    t3 = (
        sum(g((i, j, k)) * bracket_111(o(i), o(j), o(k), m) for i in Q for j in Q for k in Q)
        + 3 * sum(g((i, j)) * bracket_21(o(i), o(j), m) for i in Q for j in Q)
        + sum(g((i,)) * mu_r_bracket(o(i), [3], m) for i in Q)
    )
    t22 = (
        sum(
            g((i, j, k, l)) * bracket_11(o(i), o(j), m) * bracket_11(o(k), o(l), m)
            for i in Q for j in Q for k in Q for l in Q
        )
        + sum(g((i, j, k)) * G_bracket(o(i), o(j), o(k), m) for i in Q for j in Q for k in Q)
        + sum(g((i, j)) * H_bracket(o(i), o(j), m) for i in Q for j in Q)
        + sum(g((i,)) * mu_r_bracket(o(i), [2, 2], m) for i in Q)
    )
    b = DerivativeBundle({(2,): t2, (3,): t3, (2, 2): t22}, base=g(()))
    return _forms_from_bundle(b, "moment product", terms=2)


def mu_r_power(r: int, p: float, m: MomentSet) -> Forms:
    """``mu_r^p``."""
    return moment_product({r: p}, m)


_MU2_TABLES = {
    "C1": {1: lambda m: -m[2], 2: lambda m: (m[4] - m[2] ** 2) / 2},
    "C2": {
        2: lambda m: 5 * m[2] ** 2 / 2 - m[4],
        3: lambda m: m[6] / 6 - m[3] ** 2 - m[4] * m[2] + 5 * m[2] ** 3 / 6,
        4: lambda m: (m[4] - m[2] ** 2) ** 2 / 8,
    },
    "C3": {
        2: lambda m: m[4] / 2 - 3 * m[2] ** 2 / 2,
        3: lambda m: -m[6] / 2 + 9 * m[4] * m[2] / 2 + 3 * m[3] ** 2 - 13 * m[2] ** 3 / 2,
        4: lambda m: (m[8] / 24 - m[6] * m[2] / 3 - m[5] * m[3] - 5 * m[4] ** 2 / 8 + 11 * m[4] * m[2] ** 2 / 4
                      + 5 * m[3] ** 2 * m[2] - 11 * m[2] ** 4 / 6),
        5: lambda m: (m[4] - m[2] ** 2) * (2 * m[6] - 9 * m[4] * m[2] - 12 * m[3] ** 2 + 7 * m[2] ** 3) / 24,
        6: lambda m: (m[4] - m[2] ** 2) ** 3 / 48,
    },
    "T1": {1: lambda m: m[2], 2: lambda m: -(m[4] - m[2] ** 2) / 2},
    "T2": {
        1: lambda m: m[2],
        2: lambda m: -5 * m[4] / 2 + 4 * m[2] ** 2,
        3: lambda m: m[6] / 3 - m[3] ** 2 - 3 * m[4] * m[2] / 2 + 7 * m[2] ** 3 / 6,
        4: lambda m: (m[4] - m[2] ** 2) ** 2 / 8,
    },
    "T3": {
        1: lambda m: m[2],
        2: lambda m: -19 * m[4] / 2 + 31 * m[2] ** 2 / 2,
        3: lambda m: 4 * m[6] - 18 * m[4] * m[2] + 33 * m[2] ** 3 / 2 - 10 * m[3] ** 2,
        4: lambda m: (-m[8] / 4 + 4 * m[6] * m[2] / 3 + 2 * m[5] * m[3] + 7 * m[4] ** 2 / 4
                      - 27 * m[4] * m[2] ** 2 / 4 - 7 * m[3] ** 2 * m[2] + 47 * m[2] ** 4 / 12),
        5: lambda m: (m[4] - m[2] ** 2) * (-4 * m[6] + 15 * m[4] * m[2] + 12 * m[3] ** 2 - 11 * m[2] ** 3) / 24,
        6: lambda m: -(m[4] - m[2] ** 2) ** 3 / 48,
    },
    "S2": {
        2: lambda m: -2 * m[4] + 7 * m[2] ** 2 / 2,
        3: lambda m: m[6] / 3 - m[3] ** 2 - 3 * m[4] * m[2] / 2 + 7 * m[2] ** 3 / 6,
        4: lambda m: (m[4] - m[2] ** 2) ** 2 / 8,
    },
    "S3": {
        2: lambda m: -3 * m[4] + 9 * m[2] ** 2 / 2,
        3: lambda m: 3 * m[6] - 27 * m[4] * m[2] / 2 - 7 * m[3] ** 2 + 13 * m[2] ** 3,
        4: lambda m: (-m[8] / 4 + 4 * m[6] * m[2] / 3 + 2 * m[5] * m[3] + 11 * m[4] ** 2 / 8
                      - 6 * m[4] * m[2] ** 2 - 7 * m[3] ** 2 * m[2] + 85 * m[2] ** 4 / 24),
        5: lambda m: (m[4] - m[2] ** 2) * (-4 * m[6] + 15 * m[4] * m[2] + 12 * m[3] ** 2 - 11 * m[2] ** 3) / 24,
        6: lambda m: -(m[4] - m[2] ** 2) ** 3 / 48,
    },
}


def g_of_mu2(derivs: Sequence, m: MomentSet, name: str = "g(mu_2)") -> Forms:
    """``g(mu_2)`` from ``derivs[i] = g^{(i)}(mu_2)``, ``i = 0..6``.

    Terms of order 3 use moments through ``mu_8``; with fewer moments (or
    fewer derivatives) the third-order entries are left out.
    """
    derivs = list(derivs)

    def combo(key):
        tab = _MU2_TABLES[key]
        if max(tab) >= len(derivs):
            raise Unavailable(f"{name} {key}", "needs more derivatives of g")
        return sum(derivs[i] * f(m) for i, f in tab.items())

    def maybe(key):
        try:
            return combo(key)
        except (Unavailable, InvalidArgument):
            return None

    g0 = derivs[0]
    T = tuple(v for v in (combo("T1"), combo("T2"), maybe("T3")) if v is not None)
    S = tuple(v for v in (combo("T1"), combo("S2"), maybe("S3")) if v is not None)
    C = tuple(v for v in (combo("C1"), combo("C2"), maybe("C3")) if v is not None)
    return Forms(g0, _series(g0, T, "T", name), _series(g0, S, "S", name), C)


def mu2_power(q: float, m: MomentSet) -> Forms:
    """``mu_2^q`` with standardized ``t_i = T_i / mu_2^q`` and ``s_i``.

    For ``q = 2`` the James coefficients ``a_0..a_2`` of the unbiased
    estimate of ``mu_2^2`` are included.
    """
    mu2 = m[2]
    if q < 0 or q != int(q):
        _positive(mu2, "mu_2")
    derivs = [falling(q, i) * mu2 ** (q - i) if falling(q, i) != 0 else 0.0 * mu2 for i in range(7)]
    forms = g_of_mu2(derivs, m, f"mu_2^{q:g}")
    extra = {}
    if np.all(np.asarray(mu2) != 0):
        extra["t"] = tuple(t / forms.value for t in forms.T.terms)
        extra["s"] = tuple(s / forms.value for s in forms.S.terms)
    if q == 2:
        extra["a"] = (mu2**2, -m[4] - 3 * mu2**2, m[4] + 3 * mu2**2)
    return Forms(forms.value, forms.T, forms.S, forms.C, extra=extra)


def sd(m: MomentSet) -> Forms:
    """``sigma = mu_2^{1/2}`` with closed standardized ``s_1..s_3`` and the lambda ratios."""
    _positive(m[2], "mu_2")
    forms = mu2_power(0.5, m)
    b = m.beta
    b3, b4, b5, b6 = b(3), b(4), b(5), b(6)
    s1 = (b4 + 3) / 8
    s2 = (16 * b6 + 22 * b4 - 71 - 15 * b4**2 - 48 * b3**2) / 128
    extra = dict(forms.extra)
    closed = [s1, s2]
    if m.max_order >= 8:
        b8 = b(8)
        closed.append(
            (1665 - 1351 * b4 + 432 * b6 + 2352 * b3**2 + 240 * b8 - 1920 * b5 * b3 - 165 * b4**2
             - 560 * b6 * b4 + 1680 * b4 * b3**2 + 315 * b4**3) / 1024
        )
    extra["s_closed"] = tuple(closed)
    t1_star = (b4 - 1) / 8
    extra["lambda1"] = (b4 - 1) / (b4 + 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        extra["lambda2"] = s2 / t1_star
    return Forms(forms.value, forms.T, forms.S, forms.C, extra=extra)


def mean_over_sd(m: MomentSet) -> Forms:
    """``mu / sigma`` to second order (S_1, S_2; T_1, T_2)."""
    _positive(m[2], "mu_2")
    b = m.beta
    beta = m.mean / m[2] ** 0.5
    b3, b4, b5, b6 = b(3), b(4), b(5), b(6)
    t2_ = -b3 + beta * (3 * b4 + 1) / 4
    t3_ = 3 * ((3 * b5 - 2 * b3) / 4 + beta * (-5 * b6 + 3 * b4 + 2) / 8)
    t22 = -3 * (5 * b4 + 7) * b3 / 2 + 3 * beta * (35 * b4**2 - 30 * b4 + 80 * b3**2 + 43) / 16
    vals = {(2,): t2_, (3,): t3_, (2, 2): t22}
    if m.max_order >= 8:
        b7, b8 = b(7), b(8)
        vals[(4,)] = 3 * (-5 * b7 + 3 * b5 - 3 * b3) / 2 + 3 * beta * (35 * b8 - 20 * b6 + 18 * b4 + 15) / 16
    bundle = DerivativeBundle(vals, base=beta)
    S1 = b3 / 2 - beta * (3 * b4 + 1) / 8
    S2 = (48 * b5 - 60 * b4 * b3 - 116 * b3) / 64 + beta * (105 * b4**2 - 80 * b6 - 42 * b4 + 240 * b3**2 + 161) / 128
    C = (t2_ / 2, t3_ / 6 + t22 / 8)
    return Forms(beta, _series(beta, (S1, S1 + S2), "T", "mean/sd"), _series(beta, (S1, S2), "S", "mean/sd"),
                 C, bundle)


# Matrix unbiased estimates for products of moments of equal total degree.

MU3MU2_A = (np.array([[-5.0, 10.0], [1.0, -8.0]]), np.array([[10.0, -50.0], [-4.0, 27.0]]))
MU4_MU2SQ_A = (np.array([[-4.0, 6.0], [1.0, -3.0]]), np.array([[6.0, -15.0], [-2.0, 5.0]]))


def mu3mu2_ue(m: MomentSet, n):
    """Unbiased estimates of ``(mu_5, mu_3 mu_2)`` from plug-in moments."""
    res = ue_matrix(UEMatrixProblem(5, *MU3MU2_A))
    return res.evaluate(np.array([m[5], m[3] * m[2]]), n)


def mu4_mu2sq_ue(m: MomentSet, n):
    """Unbiased estimates of ``(mu_4, mu_2^2)`` from plug-in moments."""
    res = ue_matrix(UEMatrixProblem(4, *MU4_MU2SQ_A))
    return res.evaluate(np.array([m[4], m[2] ** 2]), n)


# Event probabilities, return periods and exceedances.


def return_period_terms(p):
    """``S_1, S_2, S_3`` of ``1/p`` for a Bernoulli probability ``p``."""
    return (1 / p - 1 / p**2, -1 / p + 1 / p**3, 2 / p + 1 / p**2 - 2 / p**3 - 1 / p**4)


def return_period(p_hat, n: int, lower: float, p: int = 4):
    """Order-``p`` estimate of ``1/p`` from the empirical frequency; ``1/lower`` when ``p_hat <= lower``."""
    if not 0 < lower < 1:
        raise InvalidArgument("the lower bound must lie in (0, 1)")
    p_hat = np.asarray(p_hat, dtype=float)
    safe = np.where(p_hat > lower, p_hat, 1.0)
    series = _series(1 / safe, return_period_terms(safe), "S", "return period")
    val = assemble_estimate(series, n, p)
    out = np.where(p_hat > lower, val, 1 / lower)
    return float(out) if out.ndim == 0 else out


def conditional_mean(mu1_hat, p_hat, constant: float = 0.0):
    """``mu_1 / p`` estimated by ``mu1_hat / p_hat`` (``constant`` when ``p_hat = 0``).

    ``mu_1 = E r(X) I(X in A)`` and ``p = P(X in A)``.  Given ``p_hat > 0``
    this ratio is exactly unbiased, so every correction term vanishes.
    """
    mu1_hat, p_hat = np.asarray(mu1_hat, dtype=float), np.asarray(p_hat, dtype=float)
    out = np.where(p_hat > 0, mu1_hat / np.where(p_hat > 0, p_hat, 1.0), constant)
    return float(out) if out.ndim == 0 else out


def conditional_mean_printed(mu1_hat, p_hat, n: int, constant: float = 0.0):
    """The printed fourth-order factor ``1 - q^2/(p(n-1)) + q^3/(p^2 (n-1)_2) + q^3 (2p-1)/(p^3 (n-1)_3)``.

    Kept for comparison only; it does not reduce the bias (see
    :func:`conditional_mean`).
    """
    if n < 4:
        raise InvalidArgument("n must be at least 4")
    mu1_hat, p_hat = np.asarray(mu1_hat, dtype=float), np.asarray(p_hat, dtype=float)
    p = np.where(p_hat > 0, p_hat, 1.0)
    q = 1 - p
    factor = 1 - q**2 / p / (n - 1) + q**3 / p**2 / ((n - 1) * (n - 2)) + q**3 * (2 * p - 1) / p**3 / (
        (n - 1) * (n - 2) * (n - 3)
    )
    out = np.where(p_hat > 0, mu1_hat / p * factor, constant)
    return float(out) if out.ndim == 0 else out


def _region_moments(values: np.ndarray, inside: np.ndarray, payoff: np.ndarray):
    w = inside.astype(float)
    return float(np.mean(payoff * w)), float(np.mean(w))


@dataclass(frozen=True)
class ExceedanceEstimate:
    p_hat: float
    plugin: float
    corrected: float
    printed: float


def exceedance_estimators(sample, u: float, x: float | None = None, constant: float = 0.0) -> ExceedanceEstimate:
    """Mean exceedance over ``u`` or, with ``x``, the exceedance cdf ``F_u(x)``.

    Both are conditional means over ``A = (u, inf)`` with payoff
    ``(y - u)`` or ``I(u < y < x + u)``.
    """
    y = np.asarray(getattr(sample, "values", sample), dtype=float).ravel()
    n = len(y)
    if n < 4:
        raise InvalidArgument("n must be at least 4")
    inside = y > u
    payoff = (y - u) if x is None else ((y > u) & (y < x + u)).astype(float)
    mu1, p = _region_moments(y, inside, payoff)
    plug = conditional_mean(mu1, p, constant)
    return ExceedanceEstimate(p, plug, plug, conditional_mean_printed(mu1, p, n, constant))


def exceedance_derivative(s_derivative: Callable[[float], float], x: float, u: float, p: float) -> float:
    """First derivative of ``S(F_u)`` as a functional of ``F``: ``S_{F_u}(x - u) / p`` for ``x > u``, else 0."""
    if not p > 0:
        raise DegenerateError("P(X > u) must be positive")
    return s_derivative(x - u) / p if x > u else 0.0


# Multivariate moments and correlation.


def multivariate_moment_ue(index, jm: JointMomentSet, n: int):
    """Unbiased estimate of ``mu[index]`` (order 2 or 3) from the plug-in joint moment."""
    idx = tuple(sorted(index))
    if n < 3:
        raise InvalidArgument("n must be at least 3")
    if len(idx) == 2:
        return jm[idx] / (1 - 1 / n)
    if len(idx) == 3:
        return jm[idx] / ((1 - 1 / n) * (1 - 2 / n))
    raise InvalidArgument("only second and third order joint moments are supported")


@dataclass(frozen=True)
class CorrelationEstimate:
    plugin: object
    T11: object
    corrected_n: object
    corrected_n1: object


def _nus(jm: JointMomentSet) -> dict:
    s1, s2 = jm[(1, 1)] ** 0.5, jm[(2, 2)] ** 0.5
    sig = {1: s1, 2: s2}
    out = {}
    for idx in ((1, 2), (1, 1, 1, 1), (2, 2, 2, 2), (1, 1, 2, 2), (1, 1, 1, 2), (1, 2, 2, 2)):
        out[idx] = jm[idx] / math.prod(sig[j] for j in idx)
    return out


def correlation_estimators(jm: JointMomentSet, n: int) -> dict:
    """Second-order estimates of ``rho`` and ``rho^2``: ``T - T(1^2)/(2n)`` and ``/(2n-2)``."""
    _positive(jm[(1, 1)], "variance of coordinate 1")
    _positive(jm[(2, 2)], "variance of coordinate 2")
    v = _nus(jm)
    rho, a, b, c = v[(1, 2)], v[(1, 1, 1, 1)], v[(2, 2, 2, 2)], v[(1, 1, 2, 2)]
    d, e = v[(1, 1, 1, 2)], v[(1, 2, 2, 2)]
    t_rho = rho * (3 * a + 3 * b + 2 * c) / 4 - d - e
    t_rho2 = 2 * rho**2 * (a + b + c) - 4 * rho * (d + e) + 2 * c
    out = {}
    for name, val, t in (("rho", rho, t_rho), ("rho2", rho**2, t_rho2)):
        out[name] = CorrelationEstimate(val, t, val - t / (2 * n), val - t / (2 * n - 2))
    out["influence_variance_rho"] = rho**2 * (a + b + 2 * c) / 4 - rho * (d + e) + c
    return out


# String-addressable catalog.


@dataclass(frozen=True)
class FunctionalSpec:
    """A catalog entry: how to read moments and how to correct the plug-in.

    ``extract`` maps a :class:`BatchMoments` to the moment container that
    ``evaluate`` turns into :class:`Forms`; ``population`` does the same
    for a law (anything with ``population()``, ``moment_set`` or
    ``joint_set``).
    """

    identifier: str
    params: tuple
    dim: int
    order: int
    max_p: int
    evaluate: Callable[[object], Forms]
    extract: Callable[[BatchMoments], object]
    population: Callable[[object], object]
    influence: Callable[[object], object] | None = None
    vt_order: int = 0
    valid: Callable[[object], object] | None = None
    fallback: Callable[[object], object] | None = None

    def forms(self, moments) -> Forms:
        return self.evaluate(moments)

    def plugin(self, batch: BatchMoments):
        return self.evaluate(self.extract(batch)).value

    def truth(self, dist) -> float:
        return float(np.asarray(self.evaluate(self.population(dist)).value).ravel()[0])

    def influence_variance(self, dist) -> float:
        if self.influence is None:
            raise Unavailable(f"V_T for {self.identifier}")
        return float(np.asarray(self.influence(self.population(dist, self.vt_order))).ravel()[0])


def _pop_moments(R: int):
    def f(dist, order: int = 0):
        R_ = max(R, order)
        if hasattr(dist, "population"):
            return dist.population().moment_set(R_)
        return dist.moment_set(R_)

    return f


def _pop_joint(R: int):
    def f(dist, order: int = 0):
        R_ = max(R, order)
        if hasattr(dist, "population"):
            return dist.population().joint_set(R_)
        return dist.joint_set(R_)

    return f


def _one_sample(identifier, params, R, max_p, evaluate, influence=None, vt_order=0, valid=None, fallback=None):
    return FunctionalSpec(identifier, params, 1, R, max_p, evaluate, lambda b: b.moment_set(R),
                          _pop_moments(R), influence, vt_order, valid, fallback)


def _bivariate(identifier, R, max_p, evaluate, valid=None, fallback=None):
    return FunctionalSpec(identifier, (), 2, R, max_p, evaluate, lambda b: b.joint_set(R), _pop_joint(R),
                          valid=valid, fallback=fallback)


def _normal_moment(r: int) -> float:
    return float(math.prod(range(r - 1, 0, -2))) if r % 2 == 0 else 0.0


def _substitute(moments, mask):
    """Replace the rows outside ``mask`` with standard normal moments (mean 1)."""
    pick = lambda v, safe: np.where(mask, v, safe)  # noqa: E731
    if isinstance(moments, MomentSet):
        return MomentSet(pick(moments.mean, 1.0), {r: pick(v, _normal_moment(r)) for r, v in moments.central.items()})
    if isinstance(moments, JointMomentSet):
        mean = np.where(mask, moments.mean, 1.0)
        mom = {}
        for idx, v in moments.moments.items():
            safe = math.prod(_normal_moment(idx.count(j)) for j in set(idx))
            mom[idx] = pick(v, safe)
        return JointMomentSet(mean, mom, moments.max_order)
    return pick(moments, 0.5)


def _mu2_positive(m):
    return np.asarray(m[2]) > 0


def _both_variances(jm):
    return (np.asarray(jm[(1, 1)]) > 0) & (np.asarray(jm[(2, 2)]) > 0)


def _correlation_forms(name):
    def ev(jm):
        _positive(jm[(1, 1)], "variance of coordinate 1")
        _positive(jm[(2, 2)], "variance of coordinate 2")
        est = correlation_estimators(jm, 2)[name]
        # T-family weight n^-1 times -T(1^2)/2; S-family weight (n-1)^-1 (the 2n-2 divisor).
        t1 = -est.T11 / 2
        return Forms(est.plugin, _series(est.plugin, (t1,), "T", name), _series(est.plugin, (t1,), "S", name),
                     (est.T11 / 2,))

    return ev


def _event_probability(a: float):
    def extract(b: BatchMoments):
        return b.expect(lambda x: (x[..., 0] > a).astype(float))

    def population(dist, order: int = 0):
        if hasattr(dist, "population"):
            return extract(dist.population())
        return 1.0 - dist.cdf(a)

    return extract, population


def _return_period_forms(p):
    _positive(p, "event probability")
    return Forms(1 / p, None, _series(1 / p, return_period_terms(p), "S", "return period"))


CATALOG_IDS = ("mean_pow:p", "central_moment:r", "mu2_pow:q", "sd", "mean_over_sd", "ratio_means",
               "corr", "corr2", "return_period:a")


def resolve(identifier: str) -> FunctionalSpec:
    """Look up a catalog entry such as ``"mean_pow:-1"`` or ``"central_moment:4"``."""
    name, _, arg = identifier.strip().partition(":")
    try:
        if name == "mean_pow":
            p = float(arg)
            gated = p < 0 or p != int(p)
            return _one_sample(identifier, (p,), 4, 4, lambda m: power_of_mean(p, m),
                               lambda m: p**2 * m.mean ** (2 * p - 2) * m[2], 2,
                               (lambda m: np.asarray(m.mean) != 0) if gated else None)
        if name == "central_moment":
            r = int(arg)
            if not 2 <= r <= 8:
                raise InvalidArgument(f"central moment order must lie in 2..8, got {r}")
            return _one_sample(identifier, (r,), r, 4, lambda m: central_moment(r, m),
                               lambda m: central_moment_influence_variance(r, m), 2 * r)
        if name == "mu2_pow":
            q = float(arg)
            gated = q < 0 or q != int(q)
            return _one_sample(identifier, (q,), 8, 4, lambda m: mu2_power(q, m),
                               lambda m: q**2 * m[2] ** (2 * q - 2) * (m[4] - m[2] ** 2), 4,
                               _mu2_positive if gated else None, (lambda m: m[2] ** q) if q > 0 else None)
        if name == "sd" and not arg:
            return _one_sample(identifier, (), 8, 4, sd, lambda m: (m[4] - m[2] ** 2) / (4 * m[2]), 4,
                               _mu2_positive, lambda m: m[2] ** 0.5)
        if name == "mean_over_sd" and not arg:
            return _one_sample(identifier, (), 6, 3, mean_over_sd, valid=_mu2_positive)
        if name == "ratio_means" and not arg:
            return _bivariate(identifier, 4, 4, ratio_of_means, lambda jm: np.asarray(jm.mean[1]) != 0)
        if name == "corr" and not arg:
            return _bivariate(identifier, 4, 2, _correlation_forms("rho"), _both_variances)
        if name == "corr2" and not arg:
            return _bivariate(identifier, 4, 2, _correlation_forms("rho2"), _both_variances)
        if name == "return_period":
            a = float(arg)
            extract, population = _event_probability(a)
            return FunctionalSpec(identifier, (a,), 1, 0, 4, _return_period_forms, extract, population,
                                  valid=lambda p: np.asarray(p) > 0)
    except ValueError:
        raise InvalidArgument(f"bad parameter in functional id {identifier!r}") from None
    raise InvalidArgument(f"unknown functional {identifier!r}; known: {', '.join(CATALOG_IDS)}")


def estimate(spec: FunctionalSpec, moments, n: int, p: int, family: str = "S", fallback: float | None = None):
    """Order-``p`` estimate for one moment container (arrays allowed).

    ``family`` is ``"S"``, ``"T"`` or ``"plus"`` (S-family, stopping once
    terms stop decreasing).  Rows where the functional is degenerate (say
    ``mu_2_hat = 0`` for ``sd``) get ``fallback`` if given, else the entry's
    own finite plug-in value; with neither a :class:`DegenerateError` is raised.
    """
    if not 1 <= p <= spec.max_p:
        raise InvalidArgument(f"{spec.identifier} supports orders 1..{spec.max_p}, got p={p}")
    if family not in ("S", "T", "plus"):
        raise InvalidArgument(f"unknown family {family!r}")
    mask = None if spec.valid is None else np.asarray(spec.valid(moments))
    if mask is not None and not mask.all():
        if fallback is None and spec.fallback is None:
            raise DegenerateError(f"{spec.identifier} is degenerate for {int((~mask).sum())} input row(s)")
        fill = fallback if fallback is not None else spec.fallback(moments)
        val = _estimate(spec.evaluate(_substitute(moments, mask)), n, p, family)
        out = np.where(mask, val, fill)
        return float(out) if out.ndim == 0 else out
    return _estimate(spec.evaluate(moments), n, p, family)


def _estimate(forms: Forms, n: int, p: int, family: str):
    if family == "plus":
        s = forms.series("S")
        if np.ndim(s.base) == 0:
            return plus_estimate(s, n, p)[0]
        # stop rule is per row
        rows = [CorrectionSeries(b, tuple(np.broadcast_to(t, np.shape(s.base))[i] for t in s.terms), s.scheme, "S")
                for i, b in enumerate(np.asarray(s.base))]
        return np.array([plus_estimate(r, n, p)[0] for r in rows])
    return assemble_estimate(forms.series(family), n, p)
