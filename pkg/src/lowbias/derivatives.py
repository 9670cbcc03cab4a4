"""Functional derivatives of central moments and of functions of statistics.

Conventions: ``h_i = x_i - mean``; ``mu_rF(x_1..x_p)`` is the p-th von Mises
derivative of the r-th central moment; ``mu_r(1^{i1} 1^{i2} ...)`` is that
derivative with its arguments repeated ``i1, i2, ...`` times and integrated
against F.  Statistic indices in partial-derivative tables start at 1.
"""

from __future__ import annotations

import math
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np

from ._poly import CentralMoment, Engine, Mean
from .empirical import MomentSet
from .errors import InvalidArgument, Unavailable

__all__ = [
    "falling",
    "mu_r_derivative",
    "appendix_d_value",
    "mu_r_bracket",
    "bracket_11",
    "bracket_111",
    "bracket_21",
    "bracket_1_12sq",
    "bracket_12_12",
    "bracket_12_1_2",
    "G_bracket",
    "H_bracket",
    "PartialDerivativeTable",
    "SDerivativeMoments",
    "ExplicitSMoments",
    "chain_bundle",
    "chain_terms",
    "gateaux_numeric",
    "first_derivative",
    "cdf_derivative",
    "Mean",
    "CentralMoment",
    "Engine",
]


def falling(r, i: int):
    """Falling factorial ``(r)_i = r (r-1) ... (r-i+1)``; ``(r)_0 = 1``."""
    out = 1.0
    for k in range(i):
        out *= r - k
    return out


def _h(points, m):
    return [x - m.mean for x in points]


def mu_r_derivative(r: int, points: Sequence[float], m: MomentSet) -> float:
    """``mu_rF(x_1, ..., x_p)`` in cancelled form (regular at ``h_i = 0``).

    (-1)^p [ (r)_p mu_{r-p} prod h - (r)_{p-1} sum_i (h_i^{r-p+1} - mu_{r-p+1}) prod_{j!=i} h_j ]
    """
    if r < 2:
        raise InvalidArgument("r must be at least 2")
    p = len(points)
    if p < 1:
        raise InvalidArgument("need at least one point")
    if p > r:
        return 0.0
    h = _h(points, m)
    prod_all = math.prod(h)
    s = 0.0
    for i in range(p):
        rest = math.prod(h[:i] + h[i + 1 :])
        s += (h[i] ** (r - p + 1) - m[r - p + 1]) * rest
    val = falling(r, p) * m[r - p] * prod_all - falling(r, p - 1) * s
    return -val if p % 2 else val


def _sym(f, h, k):
    """Sum of ``f(chosen, others)`` over the positions ``k`` of a distinguished point."""
    return sum(f(h[i], h[:i] + h[i + 1 :]) for i in range(k))


def appendix_d_value(r: int, p: int, points: Sequence[float], m: MomentSet) -> float:
    """Tabulated closed forms of ``mu_rF(x_1..x_p)`` for ``2 <= r <= 6``, ``1 <= p <= r``.

    Typed in term by term from the table; used to check ``mu_r_derivative``.
    """
    if not (2 <= r <= 6 and 1 <= p <= r):
        raise InvalidArgument(f"no tabulated derivative for r={r}, p={p}")
    if len(points) != p:
        raise InvalidArgument(f"expected {p} points, got {len(points)}")
    h = _h(points, m)
    mu = m.__getitem__
    P = math.prod

    if p == 1:
        h1 = h[0]
        return h1**r - mu(r) - r * h1 * mu(r - 1)
    if r == 2:
        return -2 * h[0] * h[1]
    if r == 3:
        if p == 2:
            h1, h2 = h
            return -3 * (h1**2 - mu(2)) * h2 - 3 * h1 * (h2**2 - mu(2))
        return 12 * P(h)
    if r == 4:
        if p == 2:
            h1, h2 = h
            return 12 * h1 * h2 * mu(2) - 4 * (h1**3 - mu(3)) * h2 - 4 * h1 * (h2**3 - mu(3))
        if p == 3:
            return 12 * _sym(lambda a, o: (a**2 - mu(2)) * P(o), h, 3)
        return -72 * P(h)
    if r == 5:
        if p == 2:
            h1, h2 = h
            return 20 * h1 * h2 * mu(3) - 5 * (h1**4 - mu(4)) * h2 - 5 * h1 * (h2**4 - mu(4))
        if p == 3:
            return -60 * P(h) * mu(2) + 20 * _sym(lambda a, o: (a**3 - mu(3)) * P(o), h, 3)
        if p == 4:
            return -60 * _sym(lambda a, o: (a**2 - mu(2)) * P(o), h, 4)
        return 480 * P(h)
    # r == 6
    if p == 2:
        h1, h2 = h
        return 30 * h1 * h2 * mu(4) - 6 * (h1**5 - mu(5)) * h2 - 6 * h1 * (h2**5 - mu(5))
    if p == 3:
        return -120 * P(h) * mu(3) + 30 * _sym(lambda a, o: (a**4 - mu(4)) * P(o), h, 3)
    if p == 4:
        return 120 * (3 * P(h) * mu(2) - _sym(lambda a, o: (a**3 - mu(3)) * P(o), h, 4))
    if p == 5:
        return 360 * _sym(lambda a, o: (a**2 - mu(2)) * P(o), h, 5)
    return -3600 * P(h)


def mu_r_bracket(r: int, partition: Sequence[int], m: MomentSet):
    """``mu_r(1^{i1} 1^{i2} ...)``: integrated derivative with repeated arguments.

    Zero when ``q = sum(i_j) > r``.
    """
    if r < 2:
        raise InvalidArgument("r must be at least 2")
    parts = list(partition)
    if not parts or any(int(i) != i or i < 1 for i in parts):
        raise InvalidArgument(f"invalid partition {partition!r}")
    q = sum(parts)
    if q > r:
        return 0.0 * m[2]
    mus = [m[i] for i in parts]
    first = falling(r, q) * m[r - q] * math.prod(mus) if q <= r else 0.0
    second = 0.0
    for I, iI in enumerate(parts):
        others = math.prod(mus[:I] + mus[I + 1 :])
        second = second + iI * (m[r - q + iI] - m[r - q + 1] * m[iI - 1]) * others
    val = first - falling(r, q - 1) * second
    return -val if q % 2 else val


# Bracket family: integrals of products of central-moment derivatives.


def bracket_11(i: int, j: int, m: MomentSet):
    """``[11_ij] = integral of mu_iF(x) mu_jF(x) dF``."""
    mu = m.__getitem__
    return (
        i * j * mu(i - 1) * mu(j - 1) * mu(2)
        - (i * mu(i - 1) * mu(j + 1) + j * mu(j - 1) * mu(i + 1))
        + mu(i + j)
        - mu(i) * mu(j)
    )


def bracket_111(i: int, j: int, k: int, m: MomentSet):
    """``[111_ijk] = integral of mu_iF(x) mu_jF(x) mu_kF(x) dF``."""
    mu = m.__getitem__
    trip = [(i, j, k), (j, k, i), (k, i, j)]
    out = -i * j * k * mu(i - 1) * mu(j - 1) * mu(k - 1) * mu(3)
    for a, b, c in trip:  # c plays the role of k
        out = out + a * b * mu(a - 1) * mu(b - 1) * (mu(c + 2) - mu(c) * mu(2))
    for a, b, c in trip:  # a plays the role of i
        out = out - a * mu(a - 1) * (mu(b + c + 1) - mu(b + 1) * mu(c) - mu(c + 1) * mu(b))
    out = out + mu(i + j + k)
    for a, b, c in trip:
        out = out - mu(a) * mu(b + c)
    return out + 2 * mu(i) * mu(j) * mu(k)


def bracket_21(i: int, j: int, m: MomentSet):
    """``[21_ij] = integral of mu_iF(x, x) mu_jF(x) dF``."""
    mu = m.__getitem__
    return (
        -falling(i, 2) * j * mu(i - 2) * mu(j - 1) * mu(3)
        + falling(i, 2) * mu(i - 2) * (mu(j + 2) - mu(j) * mu(2))
        + 2 * i * j * mu(j - 1) * (mu(i + 1) - mu(i - 1) * mu(2))
        - 2 * i * (mu(i + j) - mu(i) * mu(j) - mu(i - 1) * mu(j + 1))
    )


def bracket_1_12sq(i: int, j: int, m: MomentSet):
    """``[1_i 12_j^2] = double integral of mu_iF(x) mu_jF(x, y, y)``."""
    mu = m.__getitem__
    return falling(j, 2) * (
        (-3 * i * mu(i - 1) * mu(j - 1) + mu(i + j - 2) - mu(i) * mu(j - 2)) * mu(2)
        + 2 * mu(i + 1) * mu(j - 1)
    ) + falling(j, 3) * (i * mu(i - 1) * mu(j - 3) * mu(2) ** 2 - mu(j - 3) * mu(i + 1) * mu(2))


def bracket_12_12(i: int, j: int, m: MomentSet):
    """``[12_i 12_j] = double integral of mu_iF(x, y) mu_jF(x, y)``."""
    mu = m.__getitem__
    return (
        falling(i, 2) * falling(j, 2) * mu(i - 2) * mu(j - 2) * mu(2) ** 2
        - 2 * (i * falling(j, 2) * mu(i) * mu(j - 2) + j * falling(i, 2) * mu(j) * mu(i - 2)) * mu(2)
        + 2 * i * j * (mu(i + j - 2) * mu(2) - mu(i - 1) * mu(j - 1) * mu(2) + mu(i) * mu(j))
    )


def bracket_12_1_2(i: int, j: int, k: int, m: MomentSet):
    """``[12_i 1_j 2_k] = double integral of mu_iF(x, y) mu_jF(x) mu_kF(y)``."""
    mu = m.__getitem__

    def A(a):
        return mu(a + 1) - a * mu(a - 1) * mu(2)

    def B(a, b):
        return mu(a + b - 1) - b * mu(b - 1) * mu(a) - mu(a - 1) * mu(b)

    return falling(i, 2) * mu(i - 2) * A(j) * A(k) - i * (B(i, j) * A(k) + B(i, k) * A(j))


def G_bracket(i: int, j: int, k: int, m: MomentSet):
    return 2 * bracket_11(i, j, m) * mu_r_bracket(k, [2], m) + 4 * bracket_12_1_2(i, j, k, m)


def H_bracket(i: int, j: int, m: MomentSet):
    return (
        4 * bracket_1_12sq(i, j, m)
        + mu_r_bracket(i, [2], m) * mu_r_bracket(j, [2], m)
        + 2 * bracket_12_12(i, j, m)
    )


class PartialDerivativeTable:
    """Partial derivatives ``g_{i1..ik}`` of ``g`` at ``s = S(F)``.

    Stored under sorted 1-based index tuples; the empty tuple holds ``g``
    itself.  Orders above ``max_order`` raise :class:`Unavailable`.
    """

    def __init__(self, q: int, values: Mapping[tuple, float] | None = None, max_order: int = 6,
                 func: Callable[[tuple], float] | None = None):
        self.q = q
        self.max_order = max_order
        self._values = {tuple(sorted(k)): v for k, v in (values or {}).items()}
        self._func = func

    def __call__(self, index) -> float:
        idx = tuple(sorted(index))
        if len(idx) > self.max_order:
            raise Unavailable(f"g_{''.join(map(str, idx))}", f"table holds orders <= {self.max_order}")
        if any(not 1 <= i <= self.q for i in idx):
            raise InvalidArgument(f"index {idx} out of range 1..{self.q}")
        if idx in self._values:
            return self._values[idx]
        if self._func is not None:
            v = self._func(idx)
            self._values[idx] = v
            return v
        return 0.0

    @property
    def value(self):
        return self(())

    @classmethod
    def univariate(cls, derivs: Sequence[float]) -> "PartialDerivativeTable":
        """``derivs[k] = g^{(k)}(s)`` for a function of one statistic."""
        derivs = list(derivs)
        return cls(1, {(1,) * k: v for k, v in enumerate(derivs)}, max_order=len(derivs) - 1)

    @classmethod
    def power_product(cls, point: Sequence[float], powers: Sequence[float], coef: float = 1.0,
                      max_order: int = 8) -> "PartialDerivativeTable":
        """``g(s) = coef * prod_j s_j^{p_j}``, differentiated exactly."""
        point = list(point)
        powers = list(powers)

        def f(idx):
            out = coef
            for j, (s, p) in enumerate(zip(point, powers), start=1):
                mj = idx.count(j)
                c = falling(p, mj)
                if c == 0:
                    return 0.0 * out
                out = out * c * s ** (p - mj)
            return out

        return cls(len(point), max_order=max_order, func=f)

    @classmethod
    def linear_ratio(cls, alpha: Sequence[float], beta: Sequence[float], mu: Sequence[float],
                     max_order: int = 8) -> "PartialDerivativeTable":
        """``g(s) = alpha's / beta's`` at ``s = mu``.

        g_{j1..ji} = (-1)^{i-1} (i-1)! D^{-i} sum over positions of delta_{j_pos} prod beta_{others},
        with ``D = beta'mu`` and ``delta = alpha - T beta``.
        """
        alpha, beta, mu = (np.asarray(v, dtype=float) for v in (alpha, beta, mu))
        D = float(beta @ mu)
        T = float(alpha @ mu) / D
        delta = alpha - T * beta

        def f(idx):
            i = len(idx)
            if i == 0:
                return T
            tot = 0.0
            for pos in range(i):
                tot += delta[idx[pos] - 1] * math.prod(beta[idx[k] - 1] for k in range(i) if k != pos)
            return (-1) ** (i - 1) * math.factorial(i - 1) * D ** (-i) * tot

        return cls(len(mu), max_order=max_order, func=f)

    @classmethod
    def from_sympy(cls, expr, symbols, point: Sequence[float], max_order: int = 6) -> "PartialDerivativeTable":
        """Differentiate a sympy expression symbolically, evaluate at ``point``."""
        import sympy

        subs = dict(zip(symbols, point))

        def f(idx):
            e = expr
            for i in idx:
                e = sympy.diff(e, symbols[i - 1])
            return float(e.subs(subs))

        return cls(len(symbols), max_order=max_order, func=f)


class SDerivativeMoments:
    """Integrated products of statistic derivatives, ``S_{ij..}(a^I, a^J b, ..)``.

    ``value(indices, args, binding)``: ``args`` are strings of letters such as
    ``("a", "ab2")`` meaning the argument lists ``(x)`` and ``(x, y, y)``;
    ``binding`` maps each letter to its sample.  Distinct letters are
    distinct integration points.  Values come from exact polynomial
    integration of the statistics' derivatives against their moments.
    """

    def __init__(self, stats, moments: Mapping):
        self.engine = Engine(stats, lambda idx: 0.0, moments)

    @property
    def q(self) -> int:
        return self.engine.q

    def value(self, indices, args, binding: Mapping[str, int]):
        pts = []
        for arg in args:
            pts.append(tuple((binding[ch], ch) for ch in _expand(arg)))
        return self.engine.s_moment(indices, pts)


class ExplicitSMoments:
    """User-supplied S-derivative moments keyed by ``(indices, args)``."""

    def __init__(self, q: int, values: Mapping):
        self.q = q
        self._values = {_skey(i, a): v for (i, a), v in values.items()}

    def value(self, indices, args, binding=None):
        key = _skey(indices, args)
        if key not in self._values:
            name = "S_" + "".join(map(str, indices)) + "(" + ",".join(args) + ")"
            raise Unavailable(name)
        return self._values[key]


def _skey(indices, args):
    return tuple(sorted(zip(tuple(indices), (_expand(a) for a in args))))


def _expand(arg: str) -> str:
    """``"a2b"`` -> ``"aab"``; a digit repeats the preceding letter."""
    out = []
    for ch in arg:
        if ch.isdigit():
            out.append(out[-1] * (int(ch) - 1))
        else:
            out.append(ch)
    return "".join(sorted("".join(out)))


def _perm3(terms):
    """Apply the six relabellings of (a, b, c) and keep the distinct terms."""
    from itertools import permutations

    seen, out = set(), []
    for coef, args in terms:
        for perm in permutations("abc"):
            tr = str.maketrans("abc", "".join(perm))
            new = tuple(sorted(_expand(a.translate(tr)) for a in args))
            if new not in seen:
                seen.add(new)
                out.append((coef, new))
    return out


def _cyc3(coef, args):
    """The three terms obtained by cycling a -> b -> c."""
    out = []
    for shift in ("abc", "bca", "cab"):
        tr = str.maketrans("abc", shift)
        out.append((coef, tuple(a.translate(tr) for a in args)))
    return out


def _sum3(coef, args):
    """``sum^3``: the distinct images of a term under relabellings of a, b, c."""
    terms = _perm3([(coef, args)])
    assert len(terms) == 3, (args, terms)
    return terms


def _sum6(coef, args):
    terms = _perm3([(coef, args)])
    assert len(terms) == 6, (args, terms)
    return terms


# Chain-rule expansions, one list per pattern.  Each entry is
# (multiplicity, argument strings); the g-order equals the number of arguments.
_A8 = [(1, ("a", "a")), (1, ("a2",))]
_A9 = [(1, ("a", "a", "a")), (3, ("a", "a2")), (1, ("a3",))]
_A10 = [(1, ("a", "a", "a", "a")), (6, ("a", "a", "a2")), (4, ("a", "a3")), (3, ("a2", "a2")), (1, ("a4",))]
_A11 = [
    (1, ("a", "a", "b", "b")),
    (1, ("a", "a", "b2")), (1, ("b", "b", "a2")), (4, ("ab", "a", "b")),
    (2, ("a", "ab2")), (2, ("b", "a2b")), (1, ("a2", "b2")), (2, ("ab", "ab")),
    (1, ("a2b2",)),
]
_A14 = [
    (1, ("a2b3",)),
    (2, ("a", "ab3")), (3, ("b", "a2b2")), (1, ("a2", "b3")), (6, ("ab", "ab2")), (3, ("b2", "a2b")),
    (1, ("a", "a", "b3")), (3, ("b", "b", "a2b")), (6, ("a", "b", "ab2")), (6, ("a", "ab", "b2")),
    (3, ("b", "b2", "a2")), (6, ("b", "ab", "ab")),
    (1, ("a2", "b", "b", "b")), (6, ("ab", "a", "b", "b")), (3, ("b2", "b", "a", "a")),
    (1, ("a", "a", "b", "b", "b")),
]
_A15 = (
    [(1, ("a2b2c2",))]
    # B^ij
    + _sum3(2, ("a", "ab2c2"))
    + _sum3(1, ("a2", "b2c2")) + _sum3(4, ("ab", "abc2"))
    + _sum3(2, ("a2b", "bc2")) + [(4, ("abc", "abc"))]
    # B^ijk
    + _sum3(1, ("a", "a", "b2c2")) + _sum3(4, ("a", "b", "abc2"))
    + _sum6(2, ("a", "ac2", "b2")) + _sum6(4, ("a", "ab", "bc2")) + _sum3(8, ("a", "bc", "abc"))
    + [(1, ("a2", "b2", "c2"))] + _sum3(2, ("a2", "bc", "bc")) + [(8, ("ab", "bc", "ac"))]
    # B^ijkl
    + _sum6(2, ("a2b", "b", "c", "c")) + [(8, ("abc", "a", "b", "c"))]
    + _sum3(1, ("a", "a", "b2", "c2")) + _sum3(2, ("a", "a", "bc", "bc"))
    + _sum3(4, ("a", "b", "ab", "c2")) + _sum3(8, ("a", "b", "ac", "bc"))
    # B^{i1..i5}; the mixed-pair term carries multiplicity 4 (four ways to pick the pair).
    + _sum3(1, ("a2", "b", "b", "c", "c")) + _sum3(4, ("ab", "a", "b", "c", "c"))
    + [(1, ("a", "a", "b", "b", "c", "c"))]
)

_TEMPLATES = {
    (2,): _A8,
    (3,): _A9,
    (4,): _A10,
    (2, 2): _A11,
    (2, 3): _A14,
    (2, 2, 2): _A15,
}


def chain_terms(exponents) -> list:
    """The hard-coded expansion list for a pattern given by its exponents."""
    key = tuple(sorted(exponents))
    if key not in _TEMPLATES:
        raise InvalidArgument(f"no chain-rule expansion for pattern {key}")
    return _TEMPLATES[key]


def _normalize_pattern(pattern):
    """Accept ``(2, 2)`` (one sample) or ``((a, 2), (b, 2))`` (tagged)."""
    pattern = tuple(pattern)
    if pattern and isinstance(pattern[0], tuple):
        groups = [(int(s), int(e)) for s, e in pattern]
    else:
        groups = [(0, int(e)) for e in pattern]
    return sorted(groups, key=lambda g: (g[1], g[0]))


def chain_bundle(g: PartialDerivativeTable, s, pattern):
    """``T(pattern)`` for ``T(F) = g(S(F))`` by the hard-coded chain-rule expansion.

    ``pattern`` is one of the six used by the corrections: ``(2,)``, ``(3,)``,
    ``(4,)``, ``(2, 2)``, ``(2, 3)``, ``(2, 2, 2)``, optionally tagged with
    samples as ``((a, 2), (b, 3))``.  Letters a, b, c denote the groups in
    ascending exponent order.
    """
    groups = _normalize_pattern(pattern)
    terms = chain_terms([e for _, e in groups])
    binding = {ch: smp for ch, (smp, _) in zip("abc", groups)}
    q = g.q
    total = 0.0
    for mult, args in terms:
        k = len(args)
        for idx in product(range(1, q + 1), repeat=k):
            gv = g(tuple(sorted(idx)))
            if _zero(gv):
                continue
            sv = s.value(idx, args, binding)
            if _zero(sv):
                continue
            total = total + mult * gv * sv
    return total


def _zero(v) -> bool:
    return np.ndim(v) == 0 and v == 0


def first_derivative(stats, g, moments, x) -> float:
    """``T_F(x)`` for ``T(F) = g(S_1(F), ..., S_q(F))`` of one sample, evaluated at the point ``x``.

    ``moments`` is the MomentSet or JointMomentSet of ``F``; ``x`` is a scalar
    or a vector of that dimension.
    """
    eng = Engine(stats, g, {0: moments})
    h = np.atleast_1d(np.asarray(x, dtype=float)) - np.asarray(eng.moments[0].mean, dtype=float)
    total = 0.0
    for mono, coef in eng.t_poly(((0, 0),)).items():
        val = coef
        for (_, coord), pw in mono:
            val = val * h[coord - 1] ** pw
        total = total + val
    return total


def cdf_derivative(x, y, F_y: float) -> float:
    """First derivative of ``T(F) = F(y)`` at ``x``: ``I(x <= y) - F(y)`` (componentwise for vectors)."""
    return float(np.all(np.asarray(x) <= np.asarray(y))) - F_y


def gateaux_numeric(T: Callable, atoms: Sequence, probs: Sequence[float], x, eps: float = 1e-4) -> float:
    """First von Mises derivative ``d/de T(F + e(delta_x - F))`` by central differences.

    ``T(atoms, probs)`` evaluates the functional on a discrete law.  The point
    ``x`` is appended as an extra atom if it is not already one.
    """
    if not 0 < eps <= 0.5:
        raise InvalidArgument("eps must lie in (0, 0.5]")
    atoms = [np.asarray(a, dtype=float) for a in atoms]
    probs = np.asarray(probs, dtype=float)
    xa = np.asarray(x, dtype=float)
    pos = next((i for i, a in enumerate(atoms) if a.shape == xa.shape and np.all(a == xa)), None)
    if pos is None:
        atoms = atoms + [xa]
        probs = np.append(probs, 0.0)
        pos = len(atoms) - 1
    unit = np.zeros(len(atoms))
    unit[pos] = 1.0

    def at(e):
        return T(np.array(atoms), (1 - e) * probs + e * unit)

    return (at(eps) - at(-eps)) / (2 * eps)
