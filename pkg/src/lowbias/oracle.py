"""Exact expectations of plug-in statistics over small discrete laws.

Every sample of size ``n`` from an ``m``-atom law is summarized by its count
vector, so ``E stat(F_hat)`` is a finite sum over the ``C(n+m-1, m-1)``
compositions of ``n``, each weighted by its multinomial probability.
Statistics receive a :class:`BatchMoments` holding a block of compositions
and return one value per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .empirical import BatchMoments
from .errors import InvalidArgument

__all__ = [
    "DiscreteDistribution",
    "compositions",
    "composition_count",
    "exact_expectation",
    "exact_moments",
    "exact_expectation_multisample",
    "BiasCurve",
    "exact_bias_curve",
]

BUDGET = 10**6
CHUNK = 50_000


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely many atoms (scalars or vectors) with positive probabilities."""

    atoms: np.ndarray
    probs: np.ndarray

    def __init__(self, atoms, probs):
        atoms = np.asarray(atoms, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(atoms):
            raise InvalidArgument("atoms and probs must have the same length")
        if np.any(probs <= 0):
            raise InvalidArgument("all probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"probabilities sum to {probs.sum():.15g}, not 1")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def m(self) -> int:
        return len(self.probs)

    @property
    def d(self) -> int:
        return 1 if self.atoms.ndim == 1 else self.atoms.shape[1]

    def mean(self):
        return np.tensordot(self.probs, self.atoms, axes=1)

    def central(self, r: int, j: int = 1) -> float:
        x = self.atoms if self.atoms.ndim == 1 else self.atoms[:, j - 1]
        mu = float(self.probs @ x)
        return float(self.probs @ (x - mu) ** r)

    def joint(self, index) -> float:
        x = self.atoms[:, None] if self.atoms.ndim == 1 else self.atoms
        c = x - self.probs @ x
        out = np.ones(self.m)
        for j in index:
            out = out * c[:, j - 1]
        return float(self.probs @ out)

    def population(self) -> BatchMoments:
        """The law itself as a one-row BatchMoments (plug-in at ``F``)."""
        x = self.atoms[:, None] if self.atoms.ndim == 1 else self.atoms
        return BatchMoments(x[None, :, :], self.probs[None, :], n=0)


def composition_count(n: int, m: int) -> int:
    return math.comb(n + m - 1, m - 1)


def compositions(n: int, m: int) -> np.ndarray:
    """All count vectors of length ``m`` summing to ``n``, one per row."""
    if m == 1:
        return np.array([[n]])
    rows = []
    for first in range(n, -1, -1):
        rest = compositions(n - first, m - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)


def _log_weights(counts: np.ndarray, probs: np.ndarray, n: int) -> np.ndarray:
    logp = np.log(probs)
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + counts @ logp


def _check_budget(total: int) -> None:
    if total > BUDGET:
        raise InvalidArgument(f"enumeration needs {total} compositions, budget is {BUDGET}")


def exact_expectation(statistic: Callable[[BatchMoments], np.ndarray], dist: DiscreteDistribution, n: int,
                      power: int = 1) -> float:
    """``E stat(F_hat)**power`` over all samples of size ``n`` from ``dist``."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    _check_budget(composition_count(n, dist.m))
    comps = compositions(n, dist.m)
    w = np.exp(_log_weights(comps, dist.probs, n))
    acc = []
    for s in range(0, len(comps), CHUNK):
        vals = np.asarray(statistic(BatchMoments.from_counts(dist.atoms, comps[s : s + CHUNK])), dtype=float)
        vals = np.broadcast_to(vals, (len(comps[s : s + CHUNK]),))
        acc.append(w[s : s + CHUNK] * vals**power)
    return math.fsum(np.concatenate(acc))


def exact_moments(statistic, dist: DiscreteDistribution, n: int) -> tuple:
    """``(mean, variance)`` of ``stat(F_hat)``."""
    m1 = exact_expectation(statistic, dist, n)
    m2 = exact_expectation(statistic, dist, n, power=2)
    return m1, m2 - m1 * m1


def exact_expectation_multisample(statistic: Callable[[Sequence[BatchMoments]], np.ndarray],
                                  dists: Sequence[DiscreteDistribution], sizes: Sequence[int]) -> float:
    """``E stat(F_hat_1, ..., F_hat_k)`` for independent samples of the given sizes."""
    if len(dists) != len(sizes):
        raise InvalidArgument("one size per distribution is required")
    counts = [composition_count(n, d.m) for n, d in zip(sizes, dists)]
    _check_budget(math.prod(counts))
    comps = [compositions(n, d.m) for n, d in zip(sizes, dists)]
    logw = [_log_weights(c, d.probs, n) for c, d, n in zip(comps, dists, sizes)]
    grids = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    flat = [g.ravel() for g in grids]
    total = []
    for s in range(0, len(flat[0]), CHUNK):
        idx = [f[s : s + CHUNK] for f in flat]
        batches = [BatchMoments.from_counts(d.atoms, c[i]) for d, c, i in zip(dists, comps, idx)]
        w = np.exp(sum(lw[i] for lw, i in zip(logw, idx)))
        total.append(w * np.asarray(statistic(batches), dtype=float))
    return math.fsum(np.concatenate(total))


@dataclass(frozen=True)
class BiasCurve:
    ns: tuple
    biases: tuple

    def scaled(self, p: float) -> np.ndarray:
        """``|bias| * n^p`` along the curve."""
        return np.abs(np.asarray(self.biases)) * np.asarray(self.ns, dtype=float) ** p

    def sup_scaled(self, p: float) -> float:
        return float(self.scaled(p).max())

    def bounded(self, p: float, growth: float = 1.5) -> bool:
        """True unless ``|bias| n^p`` grows monotonically by more than ``growth`` over the range.

        A curve that rises while levelling off toward its limit is bounded; an
        order too small by one grows like ``n``, i.e. by ``n_max / n_min``.
        """
        s = self.scaled(p)
        monotone = bool(np.all(np.diff(s) > 0))
        return not (monotone and s[-1] > growth * s[0])


def exact_bias_curve(family: Callable[[int], Callable], dist: DiscreteDistribution, ns: Iterable[int],
                     truth: float) -> BiasCurve:
    """Exact bias of ``family(n)`` at each ``n``."""
    ns = tuple(int(n) for n in ns)
    biases = tuple(exact_expectation(family(n), dist, n) - truth for n in ns)
    return BiasCurve(ns, biases)
