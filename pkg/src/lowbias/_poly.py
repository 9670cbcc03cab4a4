"""Exact von Mises derivatives of moment-based statistics.

A derivative such as ``mu_rF(x1, ..., xp)`` is a polynomial in the centred
coordinates ``h = x - mean`` of its points.  Points are labelled
``(sample, id)`` so that multisample functionals fall out directly: a
statistic of sample ``a`` has zero derivative at a point of sample ``b``.
Integrating a polynomial against the product of the points' distributions
replaces each point's monomial with a joint central moment, which is how
every ``T(a^i b^j ...)`` value in the package is evaluated.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Mapping

import numpy as np

from .errors import InvalidArgument, Unavailable

# A monomial is a sorted tuple of ((point, coord), power); a Poly maps
# monomials to coefficients (floats or numpy arrays).
ONE: tuple = ()


def p_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            merged = dict(ma)
            for var, pw in mb:
                merged[var] = merged.get(var, 0) + pw
            key = tuple(sorted(merged.items()))
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def p_add(acc: dict, a: dict, scale=1.0) -> dict:
    for m, c in a.items():
        acc[m] = acc.get(m, 0.0) + scale * c
    return acc


def p_var(point, coord) -> dict:
    return {(((point, coord), 1),): 1.0}


def p_const(c) -> dict:
    return {ONE: c}


@dataclass(frozen=True)
class Mean:
    """The mean of coordinate ``coord`` (1-based) of sample ``sample``."""

    coord: int = 1
    sample: int = 0


@dataclass(frozen=True)
class CentralMoment:
    """The joint central moment ``mu[index]`` of sample ``sample``."""

    index: tuple
    sample: int = 0

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(sorted(self.index)))
        if len(self.index) < 2:
            raise InvalidArgument("a central moment needs order >= 2")


def _assignments(points, avail: Counter):
    """Injective maps of ``points`` into the positions of ``avail``.

    Yields ``(monomial poly factors, remaining Counter, multiplicity)``.
    Positions with equal coordinates are interchangeable, so they are
    grouped and counted rather than enumerated.
    """
    if not points:
        yield [], avail, 1
        return
    first, rest = points[0], points[1:]
    for coord in sorted(avail):
        cnt = avail[coord]
        if cnt == 0:
            continue
        nxt = avail.copy()
        nxt[coord] -= 1
        if nxt[coord] == 0:
            del nxt[coord]
        for vars_, remaining, mult in _assignments(rest, nxt):
            yield [(first, coord)] + vars_, remaining, cnt * mult


def central_moment_poly(index, points, moment) -> dict:
    """Derivative of ``mu[index]`` at ``points``, in cancelled form.

    ``moment(coords)`` returns the joint central moment of the remaining
    coordinates.  Zero when there are more points than the moment's order.
    """
    r, p = len(index), len(points)
    if p > r:
        return {}
    avail = Counter(index)
    out: dict = {}
    for vars_, remaining, mult in _assignments(list(points), avail):
        term = p_const(mult * moment(tuple(sorted(remaining.elements()))))
        for pt, c in vars_:
            term = p_mul(term, p_var(pt, c))
        p_add(out, term)
    for i in range(p):
        others = list(points[:i]) + list(points[i + 1 :])
        for vars_, remaining, mult in _assignments(others, avail):
            rem = tuple(sorted(remaining.elements()))
            inner = p_const(1.0)
            for c in rem:
                inner = p_mul(inner, p_var(points[i], c))
            p_add(inner, p_const(moment(rem)), -1.0)
            term = p_const(-mult)
            for pt, c in vars_:
                term = p_mul(term, p_var(pt, c))
            p_add(out, p_mul(term, inner))
    sign = -1.0 if p % 2 else 1.0
    return {m: sign * c for m, c in out.items() if not _is_zero(c)}


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return not c.any()
    return c == 0


def set_partitions(items):
    """All set partitions of a list, as lists of blocks."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def canonical_partitions(points) -> Counter:
    """Set partitions of a multiset of points, collapsed up to point identity."""
    counts: Counter = Counter()
    for part in set_partitions(range(len(points))):
        key = tuple(sorted(tuple(sorted(points[i] for i in block)) for block in part))
        counts[key] += 1
    return counts


class Engine:
    """Derivatives of ``T(F) = g(S_1(F), ..., S_q(F))`` for moment statistics.

    Parameters
    ----------
    stats : sequence of Mean / CentralMoment
        The statistics ``S_1 .. S_q`` (numbered from 1 in ``g``).
    g : object with ``__call__(index_tuple)`` returning partial derivatives
        of ``g`` at ``S(F)``; index tuples are sorted and 1-based.
    moments : mapping sample -> JointMomentSet (or MomentSet for d = 1)
    """

    def __init__(self, stats, g, moments: Mapping):
        self.stats = tuple(stats)
        self.g = g
        self.moments = {a: _as_joint(m) for a, m in dict(moments).items()}
        self._s_cache: dict = {}
        self._t_cache: dict = {}
        self._part_cache: dict = {}

    @property
    def q(self) -> int:
        return len(self.stats)

    def _moment(self, sample):
        jm = self.moments[sample]
        return lambda idx: jm[idx] if idx else 1.0

    def s_poly(self, i: int, points: tuple) -> dict:
        """Polynomial of ``S_{iF}(points)``; ``i`` is 1-based."""
        key = (i, tuple(sorted(points)))
        if key in self._s_cache:
            return self._s_cache[key]
        stat = self.stats[i - 1]
        if any(pt[0] != stat.sample for pt in points):
            poly: dict = {}
        elif isinstance(stat, Mean):
            poly = p_var(points[0], stat.coord) if len(points) == 1 else {}
        else:
            poly = central_moment_poly(stat.index, tuple(points), self._moment(stat.sample))
        self._s_cache[key] = poly
        return poly

    def t_poly(self, points: tuple) -> dict:
        """Polynomial of ``T_F(points)`` by Faa di Bruno over set partitions."""
        points = tuple(sorted(points))
        if points in self._t_cache:
            return self._t_cache[points]
        if points not in self._part_cache:
            self._part_cache[points] = canonical_partitions(points)
        out: dict = {}
        for blocks, mult in self._part_cache[points].items():
            options = []
            for block in blocks:
                opts = [(i, self.s_poly(i, block)) for i in range(1, self.q + 1)]
                opts = [(i, pl) for i, pl in opts if pl]
                if not opts:
                    break
                options.append(opts)
            else:
                for combo in product(*options):
                    coef = self.g(tuple(sorted(i for i, _ in combo)))
                    if _is_zero(coef):
                        continue
                    term = p_const(mult * coef)
                    for _, pl in combo:
                        term = p_mul(term, pl)
                    p_add(out, term)
        self._t_cache[points] = out
        return out

    def integrate(self, poly: dict):
        """Integrate over every point, each against its own sample's law."""
        total = 0.0
        for mono, coef in poly.items():
            by_point: dict = {}
            for (pt, coord), pw in mono:
                by_point.setdefault(pt, []).extend([coord] * pw)
            val = coef
            for pt, coords in by_point.items():
                val = val * self.moments[pt[0]][tuple(coords)]
            total = total + val
        return total

    def s_moment(self, indices, args) -> float:
        """``S_{i j ...}(args)``: integral of ``prod_m S_{i_m F}(args[m])``."""
        poly = p_const(1.0)
        for i, pts in zip(indices, args):
            s = self.s_poly(i, tuple(pts))
            if not s:
                return 0.0
            poly = p_mul(poly, s)
        return self.integrate(poly)

    def pattern_points(self, pattern) -> tuple:
        """Points for a pattern ``((sample, exponent), ...)``: one distinct point per group."""
        pts = []
        for gid, (sample, e) in enumerate(pattern):
            pts.extend([(sample, gid)] * e)
        return tuple(pts)

    def bundle_value(self, pattern):
        """``T(a^i b^j ...)`` via the generic partition expansion."""
        return self.integrate(self.t_poly(self.pattern_points(pattern)))


def _as_joint(m):
    from .empirical import JointMomentSet, MomentSet

    if isinstance(m, MomentSet):
        return JointMomentSet.from_moment_set(m)
    if isinstance(m, JointMomentSet):
        return m
    raise Unavailable("moments", f"unsupported moment container {type(m).__name__}")
