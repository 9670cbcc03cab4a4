"""Covariance of plug-in and bias-corrected estimates, and of the bias estimate.

For a vector functional ``T = (T^1, ..., T^A)`` of ``k`` distributions, the
second-order covariance expansions use four families of integrals::

    aa[a]         T^{ab}(a,a)     = int T^alpha(x) T^beta(x)
    abab[a, b]    T^{ab}(ab,ab)   = int int T^alpha(x,y) T^beta(x,y)
    a2a[a]        T^{ab}(a^2,a)   = int T^alpha(x,x) T^beta(x)
    a2bb[a, b]    T^{ab}(a^2b,b)  = int int T^alpha(x,x,y) T^beta(y)

with ``x`` from sample ``a`` and ``y`` from sample ``b``.  Pairs with
``b == a`` mean two distinct points of the same sample.  Each entry is an
``(..., A, A)`` array; leading axes broadcast over batches of moment sets.

Sample sizes are ``n_a = n / lambda_a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from ._poly import CentralMoment, Engine, Mean, p_add, p_const, p_mul
from .derivatives import PartialDerivativeTable
from .empirical import JointMomentSet, MomentSet
from .errors import InvalidArgument, Unavailable

__all__ = [
    "CovDerivativeBundle",
    "engine_cov_bundle",
    "mean_function_cov_bundle",
    "ratio_cov_bundle",
    "ratio_gamma_forms",
    "RATIO_GAMMA_PRINTED",
    "power_of_mean_cov_bundle",
    "k1",
    "cov_first_order",
    "cov_second_order",
    "k2",
    "k2_corrected",
    "delta",
    "c1_variance",
    "l_plugin",
    "l_corrected",
    "inverse_mean_variance",
    "bias_estimate_cov",
    "bias_influence_variance",
]


@dataclass
class CovDerivativeBundle:
    aa: dict
    abab: dict = field(default_factory=dict)
    a2a: dict = field(default_factory=dict)
    a2bb: dict = field(default_factory=dict)
    lambdas: tuple = (1.0,)

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if any(v <= 0 for v in self.lambdas):
            raise InvalidArgument("lambda weights must be positive")

    @property
    def k(self) -> int:
        return len(self.lambdas)

    @classmethod
    def one_sample(cls, aa, abab=None, a2a=None, a2bb=None) -> "CovDerivativeBundle":
        """Single-sample scalar (``A = 1``) bundle; values may be batch arrays."""
        out = cls({0: _as_matrix(aa)}, lambdas=(1.0,))
        if abab is not None:
            out.abab[(0, 0)] = _as_matrix(abab)
        if a2a is not None:
            out.a2a[0] = _as_matrix(a2a)
        if a2bb is not None:
            out.a2bb[(0, 0)] = _as_matrix(a2bb)
        return out

    def _get(self, table: str, key):
        try:
            return getattr(self, table)[key]
        except KeyError:
            raise Unavailable(f"T({table}) for samples {key}") from None


def _as_matrix(v):
    return np.asarray(v, dtype=float)[..., None, None]


def _sym(m):
    """``Sigma^2 f^{ab} = f^{ab} + f^{ba}``."""
    return m + np.swapaxes(m, -1, -2)


def _pairs(b: CovDerivativeBundle):
    return product(range(b.k), repeat=2)


# ---------------------------------------------------------------------------
# Bundles


def _partial_integrate(eng: Engine, poly: dict, points) -> dict:
    """Integrate ``poly`` over the listed points only."""
    points = set(points)
    out: dict = {}
    for mono, coef in poly.items():
        keep, coords = [], {}
        for (pt, c), pw in mono:
            if pt in points:
                coords.setdefault(pt, []).extend([c] * pw)
            else:
                keep.append(((pt, c), pw))
        val = coef
        for pt, cs in coords.items():
            val = val * eng.moments[pt[0]][tuple(cs)]
        key = tuple(keep)
        out[key] = out.get(key, 0.0) + val
    return out


def _engines(stats, gs, moments):
    return [Engine(stats, g, moments) for g in gs]


def _matrix(fn, A: int):
    vals = np.broadcast_arrays(*[np.asarray(fn(al, be), dtype=float) for al in range(A) for be in range(A)])
    return np.stack(vals, axis=-1).reshape(vals[0].shape + (A, A))


def engine_cov_bundle(stats, gs: Sequence, moments: Mapping, lambdas: Sequence[float] | None = None,
                      second: bool = True) -> CovDerivativeBundle:
    """Bundle for ``T^alpha = g^alpha(S(F))`` from the exact polynomial engine.

    ``gs`` holds one derivative table per component; ``moments`` maps sample
    labels ``0..k-1`` to moment sets of sufficient order.
    """
    engs = _engines(stats, gs, moments)
    samples = sorted(engs[0].moments)
    lam = tuple(lambdas) if lambdas is not None else (1.0,) * len(samples)
    if len(lam) != len(samples):
        raise InvalidArgument("one lambda per sample is required")
    A = len(engs)
    e0 = engs[0]

    def integral(polys_a, polys_b):
        return lambda al, be: e0.integrate(p_mul(polys_a[al], polys_b[be]))

    b = CovDerivativeBundle({}, lambdas=lam)
    for a in samples:
        x = (a, 0)
        t1 = [e.t_poly((x,)) for e in engs]
        b.aa[a] = _matrix(integral(t1, t1), A)
        if not second:
            continue
        txx = [e.t_poly((x, x)) for e in engs]
        b.a2a[a] = _matrix(integral(txx, t1), A)
        for c in samples:
            y = (c, 1)
            txy = [e.t_poly((x, y)) for e in engs]
            ty = [e.t_poly((y,)) for e in engs]
            txxy = [e.t_poly((x, x, y)) for e in engs]
            b.abab[(a, c)] = _matrix(integral(txy, txy), A)
            b.a2bb[(a, c)] = _matrix(integral(txxy, ty), A)
    return b


def mean_function_cov_bundle(gs: Sequence[PartialDerivativeTable], jm: JointMomentSet) -> CovDerivativeBundle:
    """One-sample bundle for ``g^alpha(mu)`` of a mean vector, by direct contraction.

    ``T(a,a) = g_i g_j mu[ij]``, ``T(ab,ab) = g_ij g_kl mu[ik] mu[jl]``,
    ``T(a^2,a) = g_ij g_k mu[ijk]``, ``T(a^2b,b) = g_ijk g_l mu[ij] mu[kl]``.
    """
    d = jm.d
    r = range(1, d + 1)
    A = len(gs)

    def aa(al, be):
        return sum(gs[al]((i,)) * gs[be]((j,)) * jm[(i, j)] for i in r for j in r)

    def abab(al, be):
        return sum(gs[al]((i, j)) * gs[be]((k, l)) * jm[(i, k)] * jm[(j, l)]
                   for i, j, k, l in product(r, repeat=4))

    def a2a(al, be):
        return sum(gs[al]((i, j)) * gs[be]((k,)) * jm[(i, j, k)] for i, j, k in product(r, repeat=3))

    def a2bb(al, be):
        return sum(gs[al]((i, j, k)) * gs[be]((l,)) * jm[(i, j)] * jm[(k, l)]
                   for i, j, k, l in product(r, repeat=4))

    return CovDerivativeBundle({0: _matrix(aa, A)}, {(0, 0): _matrix(abab, A)}, {0: _matrix(a2a, A)},
                               {(0, 0): _matrix(a2bb, A)})


def ratio_cov_bundle(alpha: Sequence[float], beta: Sequence[float], jm: JointMomentSet) -> CovDerivativeBundle:
    """``N/D`` with ``N = alpha'mu``, ``D = beta'mu``, via ``delta = (alpha - R beta)``.

    ``T(a,a) = D^-2 mu2[dd]``, ``T(ab,ab) = 2 D^-4 {mu2[db]^2 + mu2[dd] mu2[bb]}``,
    ``T(a^2,a) = -2 D^-3 mu3[ddb]``, ``T(a^2b,b) = 2 D^-4 {2 mu2[db]^2 + mu2[dd] mu2[bb]}``.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    mu = [jm.mean[j] for j in range(jm.d)]
    N = sum(a * m for a, m in zip(alpha, mu))
    D = sum(b * m for b, m in zip(beta, mu))
    R = N / D
    delta = [a - R * b for a, b in zip(alpha, beta)]
    r = range(jm.d)

    def m2(u, v):
        return sum(u[i] * v[j] * jm[(i + 1, j + 1)] for i in r for j in r)

    dd, db, bb = m2(delta, delta), m2(delta, beta), m2(beta, beta)
    ddb = sum(delta[i] * delta[j] * beta[k] * jm[(i + 1, j + 1, k + 1)] for i, j, k in product(r, repeat=3))
    return CovDerivativeBundle.one_sample(dd / D**2, 2 * (db**2 + dd * bb) / D**4, -2 * ddb / D**3,
                                          2 * (2 * db**2 + dd * bb) / D**4)


def ratio_gamma_forms(jm: JointMomentSet) -> CovDerivativeBundle:
    """``mu_1 / mu_2`` with ``gamma_ij.. = mu(ij..) / (mu_i mu_j ..)``."""
    m1, m2 = jm.mean[0], jm.mean[1]
    mu = (None, m1, m2)

    def g(*idx):
        den = 1.0
        for i in idx:
            den = den * mu[i]
        return jm[idx] / den

    R2 = (m1 / m2) ** 2
    g11, g12, g22 = g(1, 1), g(1, 2), g(2, 2)
    return CovDerivativeBundle.one_sample(
        R2 * (g11 - 2 * g12 + g22),
        2 * R2 * (g11 * g22 + g12**2 - 4 * g12 * g22 + 2 * g22**2),
        -2 * R2 * (g(1, 1, 2) - 2 * g(1, 2, 2) + g(2, 2, 2)),
        2 * R2 * (2 * g12**2 - 6 * g12 * g22 + 3 * g22**2 + g11 * g22),
    )


# Printed coefficients of the gamma-form T(ab,ab) and T(a^2b,b), for comparison:
# T(ab,ab) lacks the gamma_12^2 term and T(a^2b,b) has -5 where -6 is right.
RATIO_GAMMA_PRINTED = {
    "abab": {"g11g22": 1, "g12^2": 0, "g12g22": -4, "g22^2": 2},
    "a2bb": {"g12^2": 2, "g12g22": -5, "g22^2": 3, "g11g22": 1},
}


def power_of_mean_cov_bundle(p: float, m: MomentSet) -> CovDerivativeBundle:
    """``mu^p``: the four integrals in closed form."""
    mu, m2, m3 = m.mean, m[2], m[3]
    return CovDerivativeBundle.one_sample(
        p**2 * mu ** (2 * p - 2) * m2,
        p**2 * (p - 1) ** 2 * mu ** (2 * p - 4) * m2**2,
        p**2 * (p - 1) * mu ** (2 * p - 3) * m3,
        p * (p - 1) * (p - 2) * p * mu ** (2 * p - 4) * m2**2,
    )


# ---------------------------------------------------------------------------
# Expansion coefficients


def k1(b: CovDerivativeBundle):
    return sum(lam * b._get("aa", a) for a, lam in enumerate(b.lambdas))


def k2(b: CovDerivativeBundle):
    """``n^-2`` coefficient of the plug-in covariance."""
    lam = b.lambdas
    out = sum(lam[a] ** 2 * _sym(b._get("a2a", a)) / 2 for a in range(b.k))
    for a, c in _pairs(b):
        out = out + lam[a] * lam[c] * (_sym(b._get("a2bb", (a, c))) + b._get("abab", (a, c))) / 2
    return out


def delta(b: CovDerivativeBundle):
    """``Delta = Sigma^2 K_1(T^alpha, T_1^beta)``, with ``T_1 = -C_1``."""
    lam = b.lambdas
    out = 0.0
    for a in range(b.k):
        out = out - lam[a] ** 2 * _sym(b._get("a2a", a)) / 2
        for c in range(b.k):
            out = out - lam[a] * lam[c] * _sym(b._get("a2bb", (c, a))) / 2
    return out


def k2_corrected(b: CovDerivativeBundle):
    """``n^-2`` coefficient of the covariance of ``T_np`` for ``p >= 2``."""
    return k2(b) + delta(b)


def c1_variance(b: CovDerivativeBundle):
    """First-order bias coefficient of ``K_1(F_hat)``."""
    lam = b.lambdas
    out = 0.0
    for a in range(b.k):
        out = out + lam[a] ** 2 * (_sym(b._get("a2a", a)) - b._get("aa", a))
    for a, c in _pairs(b):
        out = out + lam[a] * lam[c] * (_sym(b._get("a2bb", (c, a))) / 2 + b._get("abab", (a, c)))
    return out


def l_plugin(b: CovDerivativeBundle):
    """``L = K_2 - C_1(K_1)`` for the plug-in ``T(F_hat)``."""
    return k2(b) - c1_variance(b)


def l_corrected(b: CovDerivativeBundle):
    """``L[F] = K_2[F] - C_1(K_1)`` for corrected ``T_np``, ``p >= 2``."""
    return k2_corrected(b) - c1_variance(b)


def _printed_l(b: CovDerivativeBundle, corrected: bool):
    if b.k != 1:
        raise Unavailable("printed covariance forms", "only the one-sample printed form is provided")
    if corrected:
        return b._get("abab", (0, 0)) / 2
    return b._get("aa", 0) - 1.5 * b._get("abab", (0, 0))


def cov_first_order(b: CovDerivativeBundle, n):
    """``n^-1 K_1``."""
    return k1(b) / n


def cov_second_order(b: CovDerivativeBundle, n, corrected: bool = False, scheme: str = "falling",
                     form: str = "derived"):
    """Estimate of ``covar(T(F_hat))`` (or of ``T_np(F_hat)``) with bias ``O(n^-3)``.

    Evaluate the bundle at ``F_hat``.  ``form="derived"`` uses
    ``n^-1 K_1 + n^-2 L``; ``form="printed"`` uses the one-sample printed
    ``L = T(a,a) - 3 T(ab,ab)/2`` (plug-in) or ``T(ab,ab)/2`` (corrected),
    which the enumeration oracle shows carry bias ``O(n^-2)``.

    ``scheme`` chooses how the ``lambda_a^2 T(a,a)`` part of ``L`` is
    absorbed: "falling" writes ``sum_a lambda_a T(a,a) / (n - lambda_a)``
    (``(n-1)^-1`` for one sample); "power" keeps ``n^-1 K_1 + n^-2 L``,
    i.e. ``n^-1 + n^-2`` for one sample.
    """
    if np.any(np.asarray(n) < 2):
        raise InvalidArgument("n must be at least 2")
    if form == "derived":
        L = l_corrected(b) if corrected else l_plugin(b)
    elif form == "printed":
        L = _printed_l(b, corrected)
    else:
        raise InvalidArgument(f"unknown form {form!r}")
    if scheme == "power":
        return k1(b) / n + L / n**2
    if scheme != "falling":
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    lam = b.lambdas
    if form == "printed" and corrected:
        return k1(b) / n + L / n**2
    head = sum(lam[a] * b._get("aa", a) / (n - lam[a]) for a in range(b.k))
    rest = L - sum(lam[a] ** 2 * b._get("aa", a) for a in range(b.k))
    return head + rest / n**2


def inverse_mean_variance(m: MomentSet, n, star: bool = True, lower: float | None = None,
                          form: str = "derived"):
    """Estimate of ``var(mu_hat^-1)`` with bias ``O(n^-3)``; pass plug-in moments.

    ``star`` uses ``s^2 = n mu_2 / (n-1)`` and ``(n-1)^-2`` in the second
    term.  ``lower`` gates by ``I(|mu_hat| > lower)``.  ``form="printed"``
    gives ``n^-1 mu^-4 s^2 - 6 n^-2 mu^-6 s^4`` (bias ``O(n^-2)``).
    """
    mu, m2 = np.asarray(m.mean, dtype=float), m[2]
    gate = np.ones_like(mu) if lower is None else (np.abs(mu) > lower).astype(float)
    safe = np.where(gate > 0, mu, 1.0)
    if form == "printed":
        c2, c3 = -6.0, 0.0
    elif form == "derived":
        c2, c3 = -2.0, 2.0
    else:
        raise InvalidArgument(f"unknown form {form!r}")
    second = c2 * safe**-6 * m2**2 + c3 * safe**-5 * (m[3] if c3 else 0.0)
    if star:
        val = safe**-4 * m2 / (n - 1) + second / (n - 1) ** 2
    else:
        val = safe**-4 * m2 / (n - 1) + second / n**2
    return gate * val


# ---------------------------------------------------------------------------
# Covariance of the bias estimate


def _bias_influence_polys(engs, lam, samples):
    """Influence polynomials ``B_a(x)`` of ``B = sum_c lambda_c T(c^2)`` per component."""
    out = {}
    for a in samples:
        x = (a, 0)
        polys = []
        for e in engs:
            poly = {}
            txx = e.t_poly((x, x))
            p_add(poly, txx, lam[a])
            p_add(poly, p_const(e.integrate(txx)), -lam[a])
            for c in samples:
                y = (c, 1)
                p_add(poly, _partial_integrate(e, e.t_poly((y, y, x)), [y]), lam[c])
            polys.append(poly)
        out[a] = polys
    return out


def bias_influence_variance(stats, gs: Sequence, moments: Mapping, lambdas: Sequence[float] | None = None):
    """``V^{ab} = sum_a lambda_a int B^alpha_a(x) B^beta_a(x) dF_a(x)``.

    Only moment-based functionals (mean functions, central moments) are
    supported, since the derivatives come from the polynomial engine.
    """
    for s in stats:
        if not isinstance(s, (Mean, CentralMoment)):
            raise Unavailable("third derivatives", f"no analytic derivatives for {type(s).__name__}")
    engs = _engines(stats, gs, moments)
    samples = sorted(engs[0].moments)
    lam = tuple(lambdas) if lambdas is not None else (1.0,) * len(samples)
    polys = _bias_influence_polys(engs, lam, samples)
    A = len(engs)
    total = 0.0
    for a in samples:
        pa = polys[a]
        total = total + lam[a] * _matrix(lambda al, be: engs[0].integrate(p_mul(pa[al], pa[be])), A)
    return total


def bias_estimate_cov(V, n):
    """Covariance of the bias estimate ``n^-1 B(F_hat)/2``: ``n^-3 V / 4``.

    ``B(F_hat)`` has covariance ``n^-1 V``, so the half-scaled estimate has
    covariance ``n^-3 V / 4`` to leading order.
    """
    if V is None:
        raise Unavailable("V for the bias estimate")
    return np.asarray(V) / (4.0 * n**3)
