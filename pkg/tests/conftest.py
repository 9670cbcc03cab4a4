import numpy as np
import pytest

from lowbias.empirical import BatchMoments, JointMomentSet, MomentSet
from lowbias.oracle import DiscreteDistribution


def random_moment_set(rng, R: int = 16, size: int = 9) -> MomentSet:
    """Moments of a small random skewed sample (positive mean): a valid, generic moment set."""
    x = rng.exponential(size=size) + rng.normal(size=size)
    c = x - x.mean()
    return MomentSet.from_values(abs(float(x.mean())) + 0.2, [float(np.mean(c**k)) for k in range(2, R + 1)])


def random_joint_set(rng, d: int = 2, order: int = 6, size: int = 12) -> JointMomentSet:
    x = rng.exponential(size=(size, d)) + rng.normal(size=(size, d)) + np.arange(1, d + 1)
    jm = BatchMoments.from_samples(x[None]).joint_set(order)
    return JointMomentSet(jm.mean[:, 0], {k: float(v[0]) for k, v in jm.moments.items()}, order)


def to_scalar_moments(ms: MomentSet) -> MomentSet:
    return MomentSet(float(np.ravel(ms.mean)[0]), {r: float(np.ravel(v)[0]) for r, v in ms.central.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def three_atom():
    return DiscreteDistribution([0.0, 1.0, 3.0], [0.5, 0.3, 0.2])


@pytest.fixture
def skew_atoms():
    return DiscreteDistribution([-1.0, 0.5, 2.0], [0.3, 0.5, 0.2])


ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line and return whether the check passed."""

    def record(criterion: int, label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {label}"
        ACCEPTANCE_LINES.append(line + (f" ({detail})" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
