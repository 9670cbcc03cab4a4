"""Bias coefficients, correction terms and assembled low-bias estimators.

A plug-in estimate satisfies ``E T(F_hat) = T(F) + sum_r C_r n^{-r}``.  The
correction terms ``T_i`` give ``T_np = sum_{i<p} n^{-i} T_i(F_hat)`` with
bias ``O(n^{-p})``; the ``S_i`` family uses weights ``1/(n-1)_i`` instead
and is exactly unbiased for polynomial functionals of low enough degree.
Everything here is a function of a :class:`DerivativeBundle`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgument, Unavailable

__all__ = [
    "DerivativeBundle",
    "CorrectionSeries",
    "bias_coeffs_one_sample",
    "bias_coeffs_multisample",
    "corrections_one_sample",
    "simpler_one_sample",
    "t_to_s",
    "corrections_multisample",
    "assemble_estimate",
    "truncated_estimate",
    "plus_estimate",
    "nested_estimate",
    "elementary_symmetric",
    "UEMatrixProblem",
    "UEMatrixResult",
    "ue_matrix",
    "product_form_coefficients",
    "product_form_estimate",
]

CORE_KEYS = ((2,), (3,), (4,), (2, 2), (2, 3), (2, 2, 2))
EXTENDED_KEYS = ((5,), (2, 4), (3, 3), (2, 2, 3), (2, 2, 2, 2))


def _pattern_name(key) -> str:
    if key and isinstance(key[0], tuple):
        return "T(" + " ".join(f"{'abcdefgh'[s] if s < 8 else s}^{e}" for s, e in key) + ")"
    return "T(" + " ".join(f"1^{e}" for e in key) + ")"


class DerivativeBundle(Mapping):
    """Integrated derivative moments ``T(1^i 1^j ...)`` or ``T(a^i b^j ...)``.

    One-sample keys are exponent tuples such as ``(2, 3)`` for ``T(1^2 1^3)``.
    Multisample keys are ``((sample, exponent), ...)``; they are stored in a
    canonical order so ``T(a^2 b^2)`` and ``T(b^2 a^2)`` are one entry.
    Looking up an absent key raises :class:`Unavailable`.
    """

    def __init__(self, values: Mapping, lambdas: Sequence[float] | None = None, base=0.0):
        self.base = base
        self.lambdas = None if lambdas is None else tuple(float(v) for v in lambdas)
        self._values = {self.canonical(k): v for k, v in values.items()}

    @staticmethod
    def canonical(key) -> tuple:
        key = tuple(key)
        if key and isinstance(key[0], (tuple, list)):
            return tuple(sorted(((int(s), int(e)) for s, e in key), key=lambda g: (g[1], g[0])))
        return tuple(sorted(int(e) for e in key))

    @property
    def multisample(self) -> bool:
        return self.lambdas is not None

    @property
    def k(self) -> int:
        return 1 if self.lambdas is None else len(self.lambdas)

    def __getitem__(self, key):
        key = self.canonical(key)
        if key in self._values:
            return self._values[key]
        if key and isinstance(key[0], tuple) and not self.multisample:
            if all(s == 0 for s, _ in key):
                return self[tuple(e for _, e in key)]
        raise Unavailable(_pattern_name(key))

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def __contains__(self, key):
        try:
            self[key]
        except Unavailable:
            return False
        return True

    @classmethod
    def from_function(cls, fn: Callable, keys: Iterable, lambdas=None, base=0.0) -> "DerivativeBundle":
        """Evaluate ``fn(key)`` for each key; keys whose evaluation is
        :class:`Unavailable` are simply left out."""
        vals = {}
        for key in keys:
            try:
                vals[key] = fn(key)
            except Unavailable:
                pass
        return cls(vals, lambdas, base)

    @staticmethod
    def multisample_keys(k: int, extended: bool = False) -> list:
        """Every tagged pattern the multisample coefficients can touch."""
        shapes = list(CORE_KEYS) + (list(EXTENDED_KEYS) if extended else [])
        keys = set()
        for shape in shapes:
            for tags in product(range(k), repeat=len(shape)):
                keys.add(DerivativeBundle.canonical(tuple(zip(tags, shape))))
        return sorted(keys)


@dataclass(frozen=True)
class CorrectionSeries:
    """``T(F)`` plus correction terms ``1..len(terms)`` and their weights ``N_i(n)``.

    ``scheme`` is ``"power"`` (``n^-i``), ``"falling"`` (``1/(n-1)_i``) or a
    callable ``(i, n) -> N_i(n)``.  A term may be ``None`` when the
    functional does not supply it; using it raises :class:`Unavailable`.
    """

    base: float
    terms: tuple
    scheme: object = "power"
    family: str = "T"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) > 3:
            raise InvalidArgument("at most three correction terms are supported")

    def weight(self, i: int, n: float):
        if i == 0:
            return 1.0
        if self.scheme == "power":
            return float(n) ** (-i)
        if self.scheme == "falling":
            den = math.prod(n - 1 - k for k in range(i))
            if den == 0:
                raise InvalidArgument(f"(n-1)_{i} vanishes at n={n}")
            return 1.0 / den
        if callable(self.scheme):
            return self.scheme(i, n)
        raise InvalidArgument(f"unknown scheme {self.scheme!r}")

    def term(self, i: int):
        if i == 0:
            return self.base
        if i > len(self.terms) or self.terms[i - 1] is None:
            label = self.name + " " if self.name else ""
            raise Unavailable(f"{label}{self.family}_{i}")
        return self.terms[i - 1]

    def estimate(self, n, p: int):
        return assemble_estimate(self, n, p)


def _check_core(b: DerivativeBundle, keys) -> None:
    for key in keys:
        b[key]  # raises Unavailable


def bias_coeffs_one_sample(b: DerivativeBundle, order: int = 3) -> tuple:
    """``(C_1, ..., C_order)`` for one sample; ``order`` is 3 or 4."""
    if order not in (1, 2, 3, 4):
        raise InvalidArgument("order must be between 1 and 4")
    c1 = b[(2,)] / 2
    out = [c1]
    if order >= 2:
        out.append(b[(3,)] / 6 + b[(2, 2)] / 8)
    if order >= 3:
        four = b[(4,)] - 3 * b[(2, 2)]
        out.append(four / 24 + b[(2, 3)] / 12 + b[(2, 2, 2)] / 48)
    if order >= 4:
        five = b[(5,)] - 10 * b[(2, 3)]
        two_four = b[(2, 4)] - 3 * b[(2, 2, 2)]
        out.append(
            five / 120 + two_four / 48 + b[(3, 3)] / 72 + b[(2, 2, 3)] / 48 + b[(2, 2, 2, 2)] / 384
        )
    return tuple(out)


def corrections_one_sample(b: DerivativeBundle, base=None, terms: int = 3) -> CorrectionSeries:
    """``T_1 .. T_terms`` for one sample (weights ``n^-i``); ``terms`` is 1, 2 or 3.

    Only the bundle keys the requested terms need are read.
    """
    _check_terms(terms)
    t2_ = b[(2,)]
    out = [-t2_ / 2]
    if terms >= 2:
        t3_, t22 = b[(3,)], b[(2, 2)]
        out.append(t3_ / 3 + t22 / 8 - t2_ / 2)
    if terms >= 3:
        t4_, t23, t222 = b[(4,)], b[(2, 3)], b[(2, 2, 2)]
        out.append(-t2_ / 2 + t3_ - t4_ / 4 + 3 * t22 / 4 - t23 / 6 - t222 / 48)
    return CorrectionSeries(_base(b, base), tuple(out), "power", "T")


def _check_terms(terms: int) -> None:
    if terms not in (1, 2, 3):
        raise InvalidArgument("terms must be 1, 2 or 3")


def simpler_one_sample(b: DerivativeBundle, base=None, check: bool = True, terms: int = 3) -> CorrectionSeries:
    """``S_1 .. S_terms`` for one sample (weights ``1/(n-1)_i``).

    With ``check`` the result is compared against the conversion of the
    T-family (``S_2 = T_2 - T_1``, ``S_3 = T_3 - 3T_2 + 2T_1``).
    """
    _check_terms(terms)
    t2_ = b[(2,)]
    out = [-t2_ / 2]
    if terms >= 2:
        t3_, t22 = b[(3,)], b[(2, 2)]
        out.append(t3_ / 3 + t22 / 8)
    if terms >= 3:
        t4_, t23, t222 = b[(4,)], b[(2, 3)], b[(2, 2, 2)]
        out.append(-t4_ / 4 + 3 * t22 / 8 - t23 / 6 - t222 / 48)
    s = CorrectionSeries(_base(b, base), tuple(out), "falling", "S")
    if check:
        conv = t_to_s(corrections_one_sample(b, base, terms))
        for a, c in zip(s.terms, conv.terms):
            scale = np.maximum(np.abs(a), np.abs(c)) + 1e-300
            if not np.all(np.abs(np.asarray(a) - np.asarray(c)) <= 1e-12 * np.maximum(scale, 1.0)):
                raise AssertionError("S/T conversion identity violated")
    return s


def t_to_s(t: CorrectionSeries) -> CorrectionSeries:
    """Convert a T-family series to the ``1/(n-1)_i`` family."""
    T = [t.term(i) if i <= len(t.terms) and t.terms[i - 1] is not None else None for i in range(1, 4)]
    S1 = T[0]
    S2 = None if any(v is None for v in T[:2]) else T[1] - T[0]
    S3 = None if any(v is None for v in T[:3]) else T[2] - 3 * T[1] + 2 * T[0]
    terms = tuple(v for v in (S1, S2, S3))[: len(t.terms)]
    return CorrectionSeries(t.base, terms, "falling", "S", t.name)


def _base(b: DerivativeBundle, base):
    if base is not None:
        return base
    return getattr(b, "base", 0.0)


def _lam(b: DerivativeBundle):
    return b.lambdas if b.multisample else (1.0,)


def bias_coeffs_multisample(b: DerivativeBundle, order: int = 3) -> tuple:
    """``C_1 .. C_order`` for ``k`` samples with weights ``lambda_a``."""
    lam = _lam(b)
    k = len(lam)
    A = range(k)

    def T(*groups):
        return b[tuple(groups)]

    two = sum(lam[a] * T((a, 2)) for a in A)
    out = [two / 2]
    if order >= 2:
        three = sum(lam[a] ** 2 * T((a, 3)) for a in A)
        two2 = sum(lam[a] * lam[c] * T((a, 2), (c, 2)) for a in A for c in A)
        out.append(three / 6 + two2 / 8)
    if order >= 3:
        four = sum(lam[a] ** 3 * (T((a, 4)) - 3 * T((a, 2), (a, 2))) for a in A)
        t23 = sum(lam[a] * lam[c] ** 2 * T((a, 2), (c, 3)) for a in A for c in A)
        two3 = sum(
            lam[a] * lam[c] * lam[e] * T((a, 2), (c, 2), (e, 2)) for a in A for c in A for e in A
        )
        out.append(four / 24 + t23 / 12 + two3 / 48)
    if order >= 4:
        five = sum(lam[a] ** 4 * (T((a, 5)) - 10 * T((a, 2), (a, 3))) for a in A)
        t24 = sum(
            lam[a] * lam[c] ** 3 * (T((a, 2), (c, 4)) - 3 * T((a, 2), (c, 2), (c, 2))) for a in A for c in A
        )
        t33 = sum(lam[a] ** 2 * lam[c] ** 2 * T((a, 3), (c, 3)) for a in A for c in A)
        t223 = sum(
            lam[a] * lam[c] * lam[e] ** 2 * T((a, 2), (c, 2), (e, 3)) for a in A for c in A for e in A
        )
        t2222 = sum(
            lam[a] * lam[c] * lam[e] * lam[f] * T((a, 2), (c, 2), (e, 2), (f, 2))
            for a in A for c in A for e in A for f in A
        )
        out.append(five / 120 + t24 / 48 + t33 / 72 + t223 / 48 + t2222 / 384)
    return tuple(out)


def corrections_multisample(b: DerivativeBundle, base=None) -> CorrectionSeries:
    """``T_1, T_2, T_3`` for ``k`` independent samples (weights ``n^-i``, ``n = min n_a``)."""
    lam = _lam(b)
    A = range(len(lam))

    def T(*groups):
        return b[tuple(groups)]

    s2 = [T((a, 2)) for a in A]
    T1 = -sum(lam[a] * s2[a] for a in A) / 2
    three = sum(lam[a] ** 2 * T((a, 3)) for a in A)
    two2 = sum(lam[a] * lam[c] * T((a, 2), (c, 2)) for a in A for c in A)
    T2 = three / 3 + two2 / 8 - sum(lam[a] ** 2 * s2[a] for a in A) / 2
    T3 = (
        -sum(lam[a] ** 3 * s2[a] for a in A) / 2
        + sum(lam[a] ** 3 * T((a, 3)) for a in A)
        - sum(lam[a] ** 3 * T((a, 4)) for a in A) / 4
        + sum(lam[a] ** 3 * T((a, 2), (a, 2)) for a in A) / 2
        + sum(lam[a] * lam[c] ** 2 * T((a, 2), (c, 2)) for a in A for c in A) / 4
        - sum(lam[a] * lam[c] ** 2 * T((a, 2), (c, 3)) for a in A for c in A) / 6
        - sum(
            lam[a] * lam[c] * lam[e] * T((a, 2), (c, 2), (e, 2)) for a in A for c in A for e in A
        ) / 48
    )
    return CorrectionSeries(_base(b, base), (T1, T2, T3), "power", "T")


def assemble_estimate(series: CorrectionSeries, n, p: int):
    """``sum_{i<p} N_i(n) * term_i`` with ``term_0`` the base value."""
    if not 1 <= p <= 4:
        raise InvalidArgument("p must be between 1 and 4")
    if series.scheme == "falling" and n <= p - 1:
        raise InvalidArgument(f"n={n} too small for order {p}: (n-1)_{p - 1} vanishes")
    if n < 1:
        raise InvalidArgument("n must be positive")
    total = series.base
    for i in range(1, p):
        total = total + series.weight(i, n) * series.term(i)
    return total


def truncated_estimate(value, plugin, u: float, c: float):
    """Return ``value`` when ``|plugin| < u`` and the constant ``c`` otherwise.

    The gate looks at the raw plug-in value, not the corrected one.  Works
    elementwise on arrays.
    """
    if not u > 0:
        raise InvalidArgument("u must be positive")
    inside = np.abs(plugin) < u
    if np.ndim(inside) == 0:
        return value if inside else c
    return np.where(inside, value, c)


def plus_estimate(series: CorrectionSeries, n, p: int) -> tuple:
    """Stop adding terms once their weighted magnitudes stop strictly decreasing.

    Returns ``(estimate of order q, q)`` with ``q <= p`` the largest order
    for which ``|N_i(n) term_i|`` is strictly decreasing over ``i < q``.
    """
    if not 1 <= p <= 4:
        raise InvalidArgument("p must be between 1 and 4")
    q = 1
    prev = abs(series.base)
    for i in range(1, p):
        cur = abs(series.weight(i, n) * series.term(i))
        if not cur < prev:
            break
        q = i + 1
        prev = cur
    return assemble_estimate(series, n, q), q


def nested_estimate(U: Sequence[CorrectionSeries], n, p: int):
    """``sum_{i<p} n^{-i} * assemble(U_i, n, p - i)`` for an expansion ``sum n^-i U_i``."""
    if len(U) < p:
        raise InvalidArgument(f"need {p} expansion terms, got {len(U)}")
    total = 0.0
    for i in range(p):
        try:
            total = total + float(n) ** (-i) * assemble_estimate(U[i], n, p - i)
        except Unavailable as exc:
            raise InvalidArgument(f"expansion term U_{i} lacks corrections to order {p - i}: {exc}") from exc
    return total


def elementary_symmetric(i: int, values: Sequence[float]) -> float:
    """``e_i(values)``; ``e_0 = 1``."""
    e = [1.0] + [0.0] * i
    for v in values:
        for k in range(i, 0, -1):
            e[k] += e[k - 1] * v
    return e[i]


def D(i: int, p: int) -> float:
    """``D_i(p) = e_i(1, 2, ..., p-1)``: coefficients of ``prod_{j<p} (1 - j eps)``."""
    return elementary_symmetric(i, range(1, p))


@dataclass(frozen=True)
class UEMatrixProblem:
    """Products of moments of total degree ``p`` with ``C_i = A_i T(F)``."""

    p: int
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 2:
            raise InvalidArgument("degree p must be at least 2")
        for name in ("A1", "A2", "A3"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.atleast_2d(np.asarray(v, dtype=float)))
        if self.A1.shape != self.A2.shape or self.A1.shape[0] != self.A1.shape[1]:
            raise InvalidArgument("A1 and A2 must be square and of equal size")

    @property
    def d(self) -> int:
        return self.A1.shape[0]


@dataclass(frozen=True)
class UEMatrixResult:
    p: int
    B: tuple

    def evaluate(self, T_hat, n):
        """Unbiased estimate of ``T(F)`` from the plug-in vector ``T_hat``."""
        if n <= self.p - 1:
            raise InvalidArgument(f"n={n} must exceed p-1={self.p - 1}")
        T_hat = np.asarray(T_hat, dtype=float)
        acc = np.zeros_like(T_hat)
        for i, B in enumerate(self.B):
            acc = acc + float(n) ** (-i) * (B @ T_hat)
        return acc / math.prod(1 - i / n for i in range(1, self.p))


def ue_matrix(problem: UEMatrixProblem) -> UEMatrixResult:
    """``B_0 .. B_[p/2]`` of ``prod_{i<p}(1 - i eps) * alpha(1/eps)``."""
    p, I = problem.p, np.eye(problem.d)
    A1, A2, A3 = problem.A1, problem.A2, problem.A3
    D1, D2, D3 = D(1, p), D(2, p), D(3, p)
    B = [I, -D1 * I - A1, D2 * I + D1 * A1 - A2 + A1 @ A1]
    s = p // 2
    if s >= 3:
        if A3 is None:
            raise Unavailable("A_3", f"degree {p} needs B_3")
        B.append(-D3 * I - D2 * A1 - D1 * (-A2 + A1 @ A1) - A3 + A1 @ A2 + A2 @ A1 - A1 @ A1 @ A1)
    if s >= 4:
        raise InvalidArgument("degrees above 7 need B_4, which is not supported")
    return UEMatrixResult(p, tuple(B[: s + 1]))


def product_form_coefficients(series: CorrectionSeries, degree: int, count: int | None = None) -> tuple:
    """``a_0 .. a_s`` with ``sum a_i eps^i = prod_{j<degree}(1 - j eps) * sum T_i eps^i``.

    For a polynomial functional of this degree, ``sum a_i n^-i / prod(1 - j/n)``
    is its unbiased estimate (James' form); ``s = degree // 2`` by default.
    """
    s = degree // 2 if count is None else count
    T = [series.term(i) for i in range(s + 1)]
    e = [(-1) ** k * D(k, degree) for k in range(s + 1)]
    return tuple(sum(e[k] * T[i - k] for k in range(i + 1)) for i in range(s + 1))


def product_form_estimate(a: Sequence, degree: int, n):
    if n <= degree - 1:
        raise InvalidArgument(f"n={n} must exceed degree-1={degree - 1}")
    num = sum(ai * float(n) ** (-i) for i, ai in enumerate(a))
    return num / math.prod(1 - j / n for j in range(1, degree))
