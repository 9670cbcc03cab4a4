"""Simulation harness: distributions, bias experiments, the sample-size planner, baselines.

Replicate ``i`` of run ``k`` draws from its own stream
``SeedSequence(seed, spawn_key=(k, i))``, so results do not depend on how
replicates are split among workers.  Workers only change wall-clock time.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .corrections import truncated_estimate
from .empirical import BatchMoments, MomentSet
from .errors import DataError, DegenerateError, InvalidArgument
from .functionals import FunctionalSpec, _substitute, estimate, resolve
from .oracle import DiscreteDistribution

__all__ = [
    "Distribution",
    "Normal",
    "Exponential",
    "Gamma",
    "Uniform",
    "Bernoulli",
    "Discrete",
    "parse_distribution",
    "ExperimentReport",
    "run_bias_experiment",
    "Plan",
    "plan_simulations",
    "EvaluationCounter",
    "jackknife_baseline",
    "bootstrap_baseline",
    "ExperimentConfig",
    "read_config",
    "reports_to_csv",
    "reports_to_markdown",
    "reports_from_csv",
    "table_truncation",
    "FAMILIES",
]

FAMILIES = ("S", "T", "truncated-S", "plus")
MOMENT_ORDER = 16


# ---------------------------------------------------------------------------
# Distributions


class Distribution:
    """A univariate law with analytic central moments."""

    name = "distribution"

    def raw_moment(self, r: int) -> Fraction | float:
        raise NotImplementedError

    @property
    def params(self) -> tuple:
        return ()

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}:{','.join(_fmt(v) for v in self.params)}"

    @property
    def mean(self) -> float:
        return float(self.raw_moment(1))

    def central(self, r: int) -> float:
        """``E (X - mu)^r`` from raw moments, exactly when they are rational."""
        m = self.raw_moment(1)
        return float(sum(math.comb(r, j) * self.raw_moment(j) * (-m) ** (r - j) for j in range(r + 1)))

    def moment_set(self, R: int = 8) -> MomentSet:
        return MomentSet.from_values(self.mean, [self.central(r) for r in range(2, R + 1)])

    def joint_set(self, R: int = 8):
        from .empirical import JointMomentSet

        return JointMomentSet.from_moment_set(self.moment_set(R))

    def cdf(self, x) -> float:
        raise NotImplementedError

    def expect(self, f: Callable) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.label


def _fmt(v) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _exact(v) -> Fraction:
    return Fraction(v).limit_denominator(10**12) if isinstance(v, float) else Fraction(v)


class Normal(Distribution):
    name = "normal"

    def __init__(self, mu: float = 0.0, var: float = 1.0):
        if not var > 0:
            raise InvalidArgument("normal variance must be positive")
        self.mu, self.var = float(mu), float(var)

    @property
    def params(self):
        return (self.mu, self.var)

    @property
    def mean(self):
        return self.mu

    def central(self, r: int) -> float:
        if r % 2:
            return 0.0
        return float(math.prod(range(r - 1, 0, -2))) * self.var ** (r // 2)

    def raw_moment(self, r: int):
        return sum(math.comb(r, j) * self.central(j) * self.mu ** (r - j) for j in range(r + 1))

    def cdf(self, x):
        return stats.norm.cdf(x, self.mu, math.sqrt(self.var))

    def sample(self, rng, n):
        return self.mu + math.sqrt(self.var) * rng.standard_normal(n)


class Exponential(Distribution):
    name = "exp"

    def __init__(self, rate: float = 1.0):
        if not rate > 0:
            raise InvalidArgument("exponential rate must be positive")
        self.rate = float(rate)

    @property
    def params(self):
        return (self.rate,)

    def raw_moment(self, r: int):
        return Fraction(math.factorial(r)) / _exact(self.rate) ** r

    def cdf(self, x):
        return stats.expon.cdf(x, scale=1 / self.rate)

    def sample(self, rng, n):
        return rng.standard_exponential(n) / self.rate


class Gamma(Distribution):
    """Gamma with unit scale; ``beta_4 = 3 + 6 / shape``."""

    name = "gamma"

    def __init__(self, shape: float):
        if not shape > 0:
            raise InvalidArgument("gamma shape must be positive")
        self.shape = float(shape)

    @property
    def params(self):
        return (self.shape,)

    def raw_moment(self, r: int):
        k = _exact(self.shape)
        return math.prod((k + i for i in range(r)), start=Fraction(1))

    def cdf(self, x):
        return stats.gamma.cdf(x, self.shape)

    def sample(self, rng, n):
        return rng.standard_gamma(self.shape, n)


class Uniform(Distribution):
    name = "uniform"

    def raw_moment(self, r: int):
        return Fraction(1, r + 1)

    def cdf(self, x):
        return float(np.clip(x, 0.0, 1.0))

    def sample(self, rng, n):
        return rng.random(n)


class Bernoulli(Distribution):
    name = "bernoulli"

    def __init__(self, p: float):
        if not 0 < p < 1:
            raise InvalidArgument("Bernoulli p must lie in (0, 1)")
        self.p = float(p)

    @property
    def params(self):
        return (self.p,)

    def raw_moment(self, r: int):
        return Fraction(1) if r == 0 else _exact(self.p)

    def cdf(self, x):
        return 0.0 if x < 0 else (1 - self.p if x < 1 else 1.0)

    def sample(self, rng, n):
        return (rng.random(n) < self.p).astype(float)


class Discrete(DiscreteDistribution):
    """Finite law; also the enumeration oracle's input type.  Atoms may be vectors."""

    name = "discrete"

    @property
    def label(self) -> str:
        if self.d > 1:
            atoms = ";".join(",".join(_fmt(v) for v in a) for a in self.atoms)
        else:
            atoms = ",".join(_fmt(v) for v in self.atoms)
        return f"discrete:{atoms}/{','.join(_fmt(p) for p in self.probs)}"

    def moment_set(self, R: int = 8) -> MomentSet:
        return self.population().moment_set(R)

    def joint_set(self, R: int = 8):
        return self.population().joint_set(R)

    def cdf(self, x) -> float:
        return float(self.probs[self.atoms <= x].sum())

    def sample(self, rng, n):
        idx = rng.choice(self.m, size=n, p=self.probs)
        return self.atoms[idx]

    def __repr__(self) -> str:
        return self.label


def parse_distribution(text: str):
    """``normal:0,1``, ``exp:1``, ``gamma:2``, ``uniform``, ``bernoulli:0.3``,
    ``discrete:0,1,3/0.5,0.3,0.2``; vector atoms are split by ``;``, as in
    ``discrete:1,2;3,1/0.4,0.6``."""
    name, _, arg = text.strip().lower().partition(":")
    try:
        nums = [float(v) for v in arg.split(",")] if arg and name != "discrete" else []
        if name in ("normal", "norm"):
            return Normal(*nums)
        if name in ("exp", "exponential"):
            return Exponential(*nums)
        if name == "gamma":
            return Gamma(*nums)
        if name == "uniform" and not nums:
            return Uniform()
        if name == "bernoulli":
            return Bernoulli(*nums)
        if name == "discrete":
            atoms, _, probs = arg.partition("/")
            if ";" in atoms:
                points = [[float(v) for v in a.split(",")] for a in atoms.split(";")]
                if len({len(a) for a in points}) != 1:
                    raise ValueError("vector atoms differ in length")
            else:
                points = [float(v) for v in atoms.split(",")]
            return Discrete(points, [float(v) for v in probs.split(",")])
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"bad distribution {text!r}: {exc}") from None
    raise InvalidArgument(f"unknown distribution {text!r}")


# ---------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentReport:
    functional: str
    distribution: str
    n: int
    p: int
    N: int
    family: str
    mean: float
    truth: float
    se: float
    seed: int
    run: int = 1
    wall_clock: float = field(default=0.0, compare=False)
    baselines: tuple = ()  # ((name, mean, se, evaluations), ...)
    evaluations: int = 1

    @property
    def bias(self) -> float:
        return self.mean - self.truth

    @property
    def relative_bias(self) -> float:
        if self.truth == 0:
            raise DegenerateError("relative bias is undefined for a zero true value; use .bias")
        return self.bias / self.truth

    @property
    def relative_se(self) -> float:
        if self.truth == 0:
            raise DegenerateError("relative bias is undefined for a zero true value; use .se")
        return self.se / abs(self.truth)

    def baseline_relative_bias(self, name: str) -> float:
        for b in self.baselines:
            if b[0] == name:
                return (b[1] - self.truth) / self.truth
        raise KeyError(name)


def _checked_spec(functional: str, dist) -> FunctionalSpec:
    spec = resolve(functional)
    d = getattr(dist, "d", 1)
    if d != spec.dim:
        raise InvalidArgument(f"{functional} needs a {spec.dim}-variate distribution, got {dist.label}")
    return spec


def table_truncation(functional: str, dist) -> tuple:
    """Gate ``(u, c)`` for ``mu^-1``: ``c = 1/u = mu/10``."""
    spec = resolve(functional)
    if spec.identifier.startswith("mean_pow") and spec.params[0] < 0:
        mu = float(np.ravel(spec.population(dist).mean)[0])
        return 10.0 / abs(mu), mu / 10.0
    raise InvalidArgument(f"no default truncation gate for {functional}; pass u and c")


def _replicate_samples(dist, n: int, seed: int, run: int, start: int, stop: int) -> tuple:
    """Samples for replicates ``start..stop-1`` plus their generators (for bootstrap)."""
    rows, gens = [], []
    for i in range(start, stop):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run, i))))
        rows.append(dist.sample(rng, n))
        gens.append(rng)
    return np.asarray(rows, dtype=float), gens


def _masked_plugin(spec: FunctionalSpec, moments, fill: float) -> np.ndarray:
    """Plug-in values with ``fill`` on rows where the functional is degenerate."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.valid is None:
            return np.asarray(spec.evaluate(moments).value, dtype=float)
        mask = np.asarray(spec.valid(moments))
        val = np.asarray(spec.evaluate(_substitute(moments, mask)).value, dtype=float)
        return np.where(mask, val, fill)


def _evaluate(spec: FunctionalSpec, x: np.ndarray, n: int, p: int, family: str, gate) -> np.ndarray:
    moments = spec.extract(BatchMoments.from_samples(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        if family == "truncated-S":
            u, c = gate
            plugin = _masked_plugin(spec, moments, np.inf)
            value = estimate(spec, moments, n, p, "S", fallback=c)
            return np.asarray(truncated_estimate(value, plugin, u, c), dtype=float)
        return np.asarray(estimate(spec, moments, n, p, family), dtype=float)


def _plugin_values(spec: FunctionalSpec, x: np.ndarray) -> np.ndarray:
    return _masked_plugin(spec, spec.extract(BatchMoments.from_samples(x)), np.nan)


def _jackknife_batch(spec, x):
    m, n = x.shape[:2]
    idx = np.array([np.delete(np.arange(n), i) for i in range(n)])
    step = max(1, int(4e6 // (n * n)))
    out = []
    for s in range(0, m, step):
        block = x[s:s + step]
        loo = block[:, idx]  # (rows, n, n-1[, d])
        vals = _plugin_values(spec, loo.reshape((-1, n - 1) + x.shape[2:])).reshape(len(block), n)
        out.append(n * _plugin_values(spec, block) - (n - 1) * vals.mean(axis=1))
    return np.concatenate(out)


def _bootstrap_batch(spec, x, gens, B):
    m, n = x.shape[:2]
    # resample indices come from each replicate's own generator; evaluation is batched
    idx = np.stack([g.integers(0, n, size=(B, n)) for g in gens])
    step = max(1, int(4e6 // (B * n)))
    out = []
    for s in range(0, m, step):
        block = x[s:s + step]
        res = np.take_along_axis(block[:, None], idx[s:s + step].reshape(len(block), B, n, *([1] * (x.ndim - 2))),
                                 axis=2)
        vals = _plugin_values(spec, res.reshape((-1, n) + x.shape[2:])).reshape(len(block), B)
        out.append(2 * _plugin_values(spec, block) - vals.mean(axis=1))
    return np.concatenate(out)


def _chunks(N: int, size: int):
    return [(s, min(N, s + size)) for s in range(0, N, size)]


def _mean_se(values: np.ndarray) -> tuple:
    N = len(values)
    mean = math.fsum(values) / N
    if N < 2:
        return mean, float("nan")
    var = math.fsum((values - mean) ** 2) / (N - 1)
    return mean, math.sqrt(var / N)


def run_bias_experiment(functional: str, dist, n: int, p: int, N: int, seed: int, family: str = "S",
                        baselines: Sequence[str] = (), bootstrap_B: int = 100, workers: int = 1,
                        truncation: tuple | None = None, chunk: int = 2000, run: int = 1) -> ExperimentReport:
    """Relative bias of the order-``p`` estimator over ``N`` simulated samples of size ``n``.

    ``run`` selects an independent set of streams under the same master seed.
    """
    if N < 1:
        raise InvalidArgument("N must be at least 1")
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    unknown = set(baselines) - {"jackknife", "bootstrap"}
    if unknown:
        raise InvalidArgument(f"unknown baselines {sorted(unknown)}")
    spec = _checked_spec(functional, dist)
    truth = spec.truth(dist)
    gate = None
    if family == "truncated-S":
        gate = truncation if truncation is not None else table_truncation(functional, dist)

    def work(bounds):
        x, gens = _replicate_samples(dist, n, seed, run, *bounds)
        out = {"est": _evaluate(spec, x, n, p, family, gate)}
        if "jackknife" in baselines:
            out["jackknife"] = _jackknife_batch(spec, x)
        if "bootstrap" in baselines:
            out["bootstrap"] = _bootstrap_batch(spec, x, gens, bootstrap_B)
        return out

    start = time.perf_counter()
    parts = _chunks(N, chunk)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(b) for b in parts]
    est = np.concatenate([r["est"] for r in results])
    mean, se = _mean_se(est)
    base = []
    for name in ("jackknife", "bootstrap"):
        if name in baselines:
            m, s = _mean_se(np.concatenate([r[name] for r in results]))
            evals = (n + 1) if name == "jackknife" else (bootstrap_B + 1)
            base.append((name, m, s, evals))
    return ExperimentReport(functional, dist.label, n, p, N, family, mean, truth, se, seed, run,
                            time.perf_counter() - start, tuple(base), 1)


# ---------------------------------------------------------------------------
# Planner


@dataclass(frozen=True)
class Plan:
    functional: str
    distribution: str
    n: int
    p: int
    eps: float
    V_T: float
    S_p: float
    phi: float | None
    N: int | None

    @property
    def defined(self) -> bool:
        return self.phi is not None

    @property
    def reason(self) -> str:
        return "" if self.defined else f"S_{self.p}(F) = 0, so phi_{self.p} is not defined"


def plan_simulations(functional: str, dist, n: int, p: int, eps: float) -> Plan:
    """``phi_p = 4 V_T / S_p^2`` and ``N = ceil(eps^-2 n^(2p-1) phi_p)``."""
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    spec = _checked_spec(functional, dist)
    V = spec.influence_variance(dist)
    forms = spec.forms(spec.population(dist))
    S = float(np.ravel(forms.series("S").term(p))[0])
    scale = max(abs(float(np.ravel(forms.value)[0])), 1.0)
    if abs(S) <= 1e-12 * scale:
        return Plan(functional, dist.label, n, p, eps, V, S, None, None)
    phi = 4 * V / S**2
    N = math.ceil(eps**-2 * n ** (2 * p - 1) * phi * (1 - 1e-12))
    return Plan(functional, dist.label, n, p, eps, V, S, phi, N)


# ---------------------------------------------------------------------------
# Baselines


class EvaluationCounter:
    """Wrap a plug-in evaluator and count its calls."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def jackknife_baseline(sample, evaluator: Callable[[np.ndarray], float]) -> float:
    """``n T(F_hat) - (n-1) mean_i T(F_hat_(-i))``; ``n + 1`` evaluations."""
    x = np.asarray(sample, dtype=float)
    n = len(x)
    if n < 2:
        raise InvalidArgument("the jackknife needs n >= 2")
    full = evaluator(x)
    loo = math.fsum(evaluator(np.delete(x, i, axis=0)) for i in range(n))
    return n * full - (n - 1) * loo / n


def bootstrap_baseline(sample, evaluator: Callable[[np.ndarray], float], B: int, seed: int) -> float:
    """``2 T(F_hat) - mean_b T(F_hat*_b)``; ``B + 1`` evaluations."""
    if B < 1:
        raise InvalidArgument("B must be at least 1")
    x = np.asarray(sample, dtype=float)
    rng = np.random.default_rng(seed)
    n = len(x)
    vals = [evaluator(x[rng.integers(0, n, size=n)]) for _ in range(B)]
    return 2 * evaluator(x) - math.fsum(vals) / B


# ---------------------------------------------------------------------------
# Config and output


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    functional: str
    distribution: str
    ns: tuple
    ps: tuple
    N: int
    seed: int
    family: str = "S"
    workers: int = 1
    baselines: tuple = ()
    bootstrap_B: int = 100
    u: float | None = None
    c: float | None = None

    def execute(self, workers: int | None = None, runs: int = 1) -> list:
        dist = parse_distribution(self.distribution)
        gate = (self.u, self.c) if self.u is not None and self.c is not None else None
        return [run_bias_experiment(self.functional, dist, n, p, self.N, self.seed, self.family, self.baselines,
                                    self.bootstrap_B, workers or self.workers, gate, run=k)
                for n in self.ns for p in self.ps for k in range(1, runs + 1)]


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


KNOWN_KEYS = {"functional", "distribution", "dist", "n", "p", "N", "seed", "family", "workers", "baselines",
              "bootstrap_b", "u", "c"}


def read_config(path_or_text, is_text: bool = False) -> list:
    """Experiments from an INI-style file: one ``[section]`` per experiment."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        if is_text:
            parser.read_string(path_or_text)
        else:
            with open(path_or_text, encoding="utf-8") as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise DataError(f"cannot read config: {exc}") from None
    out = []
    for name in parser.sections():
        sec = parser[name]
        keys = {k if k != "bootstrap_B" else "bootstrap_b" for k in sec}
        bad = keys - KNOWN_KEYS
        if bad:
            raise DataError(f"[{name}] unknown keys: {', '.join(sorted(bad))}")
        try:
            dist = sec.get("distribution") or sec.get("dist")
            if dist is None or "functional" not in sec:
                raise KeyError("functional and distribution are required")
            out.append(ExperimentConfig(
                name, sec["functional"], dist, _ints(sec.get("n", "10")), _ints(sec.get("p", "1")),
                int(sec.get("N", "1000")), int(sec.get("seed", "1")), sec.get("family", "S"),
                int(sec.get("workers", "1")),
                tuple(v.strip() for v in sec.get("baselines", "").split(",") if v.strip()),
                int(sec.get("bootstrap_B", sec.get("bootstrap_b", "100"))),
                float(sec["u"]) if "u" in sec else None, float(sec["c"]) if "c" in sec else None))
        except (KeyError, ValueError) as exc:
            raise DataError(f"[{name}] bad entry: {exc}") from None
    if not out:
        raise DataError("config has no experiment sections")
    return out


CSV_FIELDS = ("functional", "distribution", "n", "p", "N", "family", "seed", "run", "truth", "mean", "se",
              "bias", "relative_bias", "evaluations")
BASELINE_FIELDS = ("mean", "se", "relative_bias", "evaluations")


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def reports_to_csv(reports: Iterable[ExperimentReport]) -> str:
    """Deterministic CSV: wall-clock is left out so identical seeds give identical bytes.

    Floats are written with ``repr`` (shortest round-trip form, '.' decimal).
    """
    reports = list(reports)
    names = sorted({b[0] for r in reports for b in r.baselines})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_FIELDS) + [f"{b}_{k}" for b in names for k in BASELINE_FIELDS])
    for r in reports:
        rel = r.relative_bias if r.truth != 0 else None
        row = [r.functional, r.distribution, r.n, r.p, r.N, r.family, r.seed, r.run, _num(r.truth), _num(r.mean),
               _num(r.se), _num(r.bias), _num(rel), r.evaluations]
        bmap = {b[0]: b for b in r.baselines}
        for b in names:
            if b in bmap:
                rb = (bmap[b][1] - r.truth) / r.truth if r.truth != 0 else None
                row += [_num(bmap[b][1]), _num(bmap[b][2]), _num(rb), bmap[b][3]]
            else:
                row += ["", "", "", ""]
        w.writerow(row)
    return buf.getvalue()


def reports_from_csv(text: str) -> list:
    """Parse :func:`reports_to_csv` output back into reports (wall-clock set to 0)."""
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        names = sorted({k.rsplit("_", 1)[0] for k in row if k.endswith("_evaluations") and k != "evaluations"})
        base = tuple((b, float(row[f"{b}_mean"]), float(row[f"{b}_se"]), int(row[f"{b}_evaluations"]))
                     for b in names if row[f"{b}_mean"] != "")
        out.append(ExperimentReport(row["functional"], row["distribution"], int(row["n"]), int(row["p"]),
                                    int(row["N"]), row["family"], float(row["mean"]), float(row["truth"]),
                                    float(row["se"]), int(row["seed"]), int(row["run"]), 0.0, base,
                                    int(row["evaluations"])))
    return out


def reports_to_markdown(reports: Iterable[ExperimentReport]) -> str:
    """Relative bias table laid out by distribution rows and (n, p) columns."""
    reports = list(reports)
    cols = sorted({(r.n, r.p) for r in reports})
    key_of = lambda r: (r.functional, r.distribution, r.family, r.seed, r.run)  # noqa: E731
    rows = list(dict.fromkeys(key_of(r) for r in reports))
    head = "| functional | distribution | family | seed | run | " + " | ".join(f"n={n}, p={p}" for n, p in cols) + " |"
    lines = [head, "|" + "---|" * (5 + len(cols))]
    for key in rows:
        cells = []
        for n, p in cols:
            match = [r for r in reports if key_of(r) == key and (r.n, r.p) == (n, p)]
            if not match:
                cells.append("")
            elif match[0].truth == 0:
                cells.append(f"bias {match[0].bias:.4f}")
            else:
                cells.append(f"{match[0].relative_bias:.4f} ± {match[0].relative_se:.4f}")
        lines.append("| " + " | ".join(str(k) for k in key) + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
