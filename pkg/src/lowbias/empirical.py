"""Samples and plug-in (empirical d.f.) moments.

Every moment here uses divisor ``n``: the expansions in this package are
about ``T(F_hat)`` for the empirical distribution, so an ``n - 1`` divisor
would silently shift every bias coefficient.

Moment containers accept either scalars or numpy arrays as values, so the
same closed-form correction code runs on one sample or on a batch of
Monte Carlo replicates at once.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateError, InvalidArgument

__all__ = [
    "Sample",
    "MultiSample",
    "MomentSet",
    "JointMomentSet",
    "BatchMoments",
    "central_moments",
    "joint_central_moments",
    "empirical_probability",
    "read_sample",
    "canonical_index",
]


class Sample:
    """An i.i.d. sample of ``n`` observations in ``R^d``."""

    def __init__(self, observations):
        x = np.asarray(observations, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InvalidArgument("observations must be a sequence of scalars or equal-length vectors")
        if x.shape[0] < 1:
            raise InvalidArgument("invalid sample: no observations")
        if x.shape[1] < 1:
            raise InvalidArgument("invalid sample: zero-dimensional observations")
        if not np.all(np.isfinite(x)):
            raise DataError("invalid sample: non-finite observation")
        x.setflags(write=False)
        self._x = x

    @property
    def observations(self) -> np.ndarray:
        return self._x

    @property
    def n(self) -> int:
        return self._x.shape[0]

    @property
    def d(self) -> int:
        return self._x.shape[1]

    @property
    def values(self) -> np.ndarray:
        """The observations of a univariate sample as a 1-D array."""
        if self.d != 1:
            raise InvalidArgument(f"sample is {self.d}-variate, expected univariate")
        return self._x[:, 0]

    def column(self, j: int) -> np.ndarray:
        """Coordinate ``j`` (1-based) of every observation."""
        if not 1 <= j <= self.d:
            raise InvalidArgument(f"coordinate {j} out of range 1..{self.d}")
        return self._x[:, j - 1]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Sample(n={self.n}, d={self.d})"


class MultiSample:
    """Independent samples from ``k`` distributions.

    ``lambdas[a] = n / n_a`` where ``n`` is the smallest sample size, so
    every weight is at least 1 and the smallest equals 1.
    """

    def __init__(self, samples: Sequence[Sample]):
        samples = tuple(s if isinstance(s, Sample) else Sample(s) for s in samples)
        if not samples:
            raise InvalidArgument("MultiSample needs at least one sample")
        self.samples = samples
        self.sizes = tuple(s.n for s in samples)
        self.n = min(self.sizes)
        self.lambdas = tuple(self.n / na for na in self.sizes)

    @property
    def k(self) -> int:
        return len(self.samples)

    def __getitem__(self, a: int) -> Sample:
        return self.samples[a]


@dataclass(frozen=True)
class MomentSet:
    """Mean and central moments ``mu_r`` (2 <= r <= R) of a univariate law.

    ``m[0] == 1`` and ``m[1] == 0`` by construction.  Values may be numpy
    arrays (one entry per replicate).
    """

    mean: float
    central: Mapping[int, float]
    max_order: int = field(init=False)

    def __post_init__(self):
        orders = sorted(self.central)
        if not orders or orders[0] < 2:
            raise InvalidArgument("central moments must be keyed by orders r >= 2")
        if orders != list(range(2, orders[-1] + 1)):
            raise InvalidArgument("central moments must be contiguous from order 2")
        object.__setattr__(self, "central", dict(self.central))
        object.__setattr__(self, "max_order", orders[-1])
        mu2 = self.central[2]
        if np.ndim(mu2) == 0 and mu2 < 0:
            raise InvalidArgument("mu_2 must be non-negative")

    @classmethod
    def from_values(cls, mean: float, central: Sequence[float]) -> "MomentSet":
        """Build from ``[mu_2, mu_3, ...]``."""
        return cls(mean, {r: v for r, v in enumerate(central, start=2)})

    def __getitem__(self, r: int):
        if r == 0:
            return 1.0
        if r == 1:
            return 0.0
        if r < 0:
            return 0.0
        try:
            return self.central[r]
        except KeyError:
            raise InvalidArgument(f"mu_{r} needed but moments only go to order {self.max_order}") from None

    def beta(self, r: int):
        """Standardized moment ``mu_r / mu_2^(r/2)``."""
        mu2 = self[2]
        if np.any(np.asarray(mu2) <= 0):
            raise DegenerateError("standardized moments need mu_2 > 0")
        return self[r] / mu2 ** (r / 2)

    def scaled(self, c: float) -> "MomentSet":
        """Moments of ``c X``."""
        return MomentSet(c * self.mean, {r: c**r * v for r, v in self.central.items()})


def canonical_index(index) -> tuple:
    """Sorted tuple form of a multi-index; ``"1122"`` and ``(2, 1, 1, 2)`` agree."""
    if isinstance(index, str):
        index = tuple(int(ch) for ch in index)
    elif isinstance(index, (int, np.integer)):
        index = (int(index),)
    return tuple(sorted(int(i) for i in index))


@dataclass(frozen=True)
class JointMomentSet:
    """Joint central moments ``mu[j1 ... ja]`` of a ``d``-variate law.

    Coordinates are numbered from 1.  Lookups are symmetric in the index.
    """

    mean: np.ndarray
    moments: Mapping[tuple, float]
    max_order: int

    @property
    def d(self) -> int:
        return len(self.mean)

    def __getitem__(self, index):
        idx = canonical_index(index)
        if any(not 1 <= j <= self.d for j in idx):
            raise InvalidArgument(f"index {idx} out of range 1..{self.d}")
        if len(idx) == 0:
            return 1.0
        if len(idx) == 1:
            return 0.0
        try:
            return self.moments[idx]
        except KeyError:
            raise InvalidArgument(
                f"mu{list(idx)} needed but joint moments only go to order {self.max_order}"
            ) from None

    def marginal(self, j: int) -> MomentSet:
        return MomentSet(self.mean[j - 1], {r: self[(j,) * r] for r in range(2, self.max_order + 1)})

    @classmethod
    def from_moment_set(cls, m: MomentSet) -> "JointMomentSet":
        """View a univariate MomentSet as a one-coordinate joint set."""
        mom = {(1,) * r: m[r] for r in range(2, m.max_order + 1)}
        return cls(np.array([m.mean]), mom, m.max_order)


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values) / len(values)


def central_moments(sample, R: int = 4) -> MomentSet:
    """Plug-in mean and central moments up to order ``R`` (two-pass, compensated)."""
    if not isinstance(sample, Sample):
        sample = Sample(sample)
    if R < 2:
        raise InvalidArgument("R must be at least 2")
    x = sample.values
    mean = _fsum_mean(x)
    h = x - mean
    central = {}
    power = h.copy()
    for r in range(2, R + 1):
        power = power * h
        central[r] = _fsum_mean(power)
    return MomentSet(mean, central)


def joint_central_moments(sample, max_order: int = 4) -> JointMomentSet:
    """Plug-in joint central moments of every multi-index up to ``max_order``."""
    if not isinstance(sample, Sample):
        sample = Sample(sample)
    if max_order < 2:
        raise InvalidArgument("max_order must be at least 2")
    x = sample.observations
    mean = np.array([_fsum_mean(x[:, j]) for j in range(sample.d)])
    h = x - mean
    moments = {}
    for r in range(2, max_order + 1):
        for idx in combinations_with_replacement(range(1, sample.d + 1), r):
            prod = np.ones(sample.n)
            for j in idx:
                prod = prod * h[:, j - 1]
            moments[idx] = _fsum_mean(prod)
    return JointMomentSet(mean, moments, max_order)


def empirical_probability(sample, event: Callable) -> float:
    """Fraction of observations for which ``event`` is true.

    ``event`` receives a scalar for univariate samples and a vector otherwise.
    """
    if not isinstance(sample, Sample):
        sample = Sample(sample)
    obs = sample.values if sample.d == 1 else sample.observations
    hits = sum(1 for x in obs if event(x))
    return hits / sample.n


_SPLIT = re.compile(r"[,\s]+")


def read_sample(path) -> Sample:
    """Read whitespace- or comma-delimited numbers, one observation per line.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in _SPLIT.split(line) if tok])
        except ValueError:
            raise DataError(f"{path}:{lineno}: not numeric: {line!r}") from None
    if not rows:
        raise DataError(f"invalid sample: {path} holds no observations")
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"invalid sample: {path} has rows of differing length")
    return Sample(rows)


class BatchMoments:
    """Plug-in moments for many empirical distributions at once.

    Two layouts share one representation: ``R`` rows, each a weighted set of
    ``K`` support points in ``R^d``.  Monte Carlo replicates use equal weights
    ``1/n``; the enumeration oracle uses atoms weighted by counts ``c_i/n``.
    All moment accessors return arrays of length ``R``.
    """

    def __init__(self, points: np.ndarray, weights: np.ndarray, n: int):
        self.points = points  # (R, K, d) or (1, K, d) broadcast against weights
        self.weights = weights  # (R, K)
        self.n = n
        self.mean = np.einsum("rk,rkd->rd", weights, np.broadcast_to(points, weights.shape + points.shape[2:]))
        self._centered = points - self.mean[:, None, :]
        self._cache: dict = {}

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "BatchMoments":
        """``x`` has shape ``(R, n)`` or ``(R, n, d)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        R, n, _ = x.shape
        return cls(x, np.full((R, n), 1.0 / n), n)

    @classmethod
    def from_counts(cls, atoms: np.ndarray, counts: np.ndarray) -> "BatchMoments":
        """``atoms`` has shape ``(m,)`` or ``(m, d)``; ``counts`` is ``(R, m)``."""
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        counts = np.asarray(counts)
        n = int(counts[0].sum())
        return cls(atoms[None, :, :], counts / n, n)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[2]

    def joint(self, index) -> np.ndarray:
        idx = canonical_index(index)
        if len(idx) == 0:
            return np.ones(self.rows)
        if len(idx) == 1:
            return np.zeros(self.rows)
        if idx not in self._cache:
            prod = self._centered[:, :, idx[0] - 1]
            for j in idx[1:]:
                prod = prod * self._centered[:, :, j - 1]
            self._cache[idx] = np.einsum("rk,rk->r", self.weights, prod)
        return self._cache[idx]

    def central(self, r: int, j: int = 1) -> np.ndarray:
        return self.joint((j,) * r)

    def moment_set(self, R: int, j: int = 1) -> MomentSet:
        """Array-valued MomentSet of coordinate ``j``."""
        return MomentSet(self.mean[:, j - 1], {r: self.central(r, j) for r in range(2, R + 1)})

    def joint_set(self, max_order: int) -> JointMomentSet:
        mom = {}
        for r in range(2, max_order + 1):
            for idx in combinations_with_replacement(range(1, self.d + 1), r):
                mom[idx] = self.joint(idx)
        return JointMomentSet(self.mean.T, mom, max_order)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Empirical expectation of ``f`` applied to raw points ``(..., K, d)``."""
        vals = np.broadcast_to(f(self.points), self.weights.shape)
        return np.einsum("rk,rk->r", self.weights, vals)


def as_sample(data: Iterable) -> Sample:
    return data if isinstance(data, Sample) else Sample(data)
