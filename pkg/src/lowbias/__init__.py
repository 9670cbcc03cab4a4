"""Analytic low-bias estimates of smooth functionals of distributions.

The plug-in estimate ``T(F_hat)`` has bias ``O(1/n)``.  This package builds
order-``p`` estimates with bias ``O(n^-p)`` from closed-form correction
terms, in ``O(n)`` work, and ships the tools to check them: an exact
enumeration oracle, a seeded Monte Carlo harness and a sample-size planner.
"""

from .corrections import CorrectionSeries, assemble_estimate, plus_estimate, truncated_estimate
from .empirical import BatchMoments, JointMomentSet, MomentSet, MultiSample, Sample, read_sample
from .errors import DataError, DegenerateError, InvalidArgument, LowBiasError, Unavailable
from .functionals import FunctionalSpec, estimate, resolve
from .montecarlo import parse_distribution, plan_simulations, run_bias_experiment
from .oracle import DiscreteDistribution, exact_bias_curve, exact_expectation

__version__ = "0.1.0"

__all__ = [
    "BatchMoments",
    "CorrectionSeries",
    "DataError",
    "DegenerateError",
    "DiscreteDistribution",
    "FunctionalSpec",
    "InvalidArgument",
    "JointMomentSet",
    "LowBiasError",
    "MomentSet",
    "MultiSample",
    "Sample",
    "Unavailable",
    "assemble_estimate",
    "estimate",
    "exact_bias_curve",
    "exact_expectation",
    "parse_distribution",
    "plan_simulations",
    "plus_estimate",
    "read_sample",
    "resolve",
    "run_bias_experiment",
    "truncated_estimate",
]
