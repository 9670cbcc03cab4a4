"""Command-line front end: ``lowbias {estimate,simulate,plan,oracle}``.

Every flag may also come from an INI-style ``--config`` file whose keys are
the long flag names; flags given on the command line win.  Exit codes: 0
success, 2 bad arguments or config, 3 unreadable or unusable data, 4 numeric
degeneracy, 5 a required correction term is not available.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
from typing import Sequence

import numpy as np

from .corrections import truncated_estimate
from .empirical import BatchMoments, read_sample
from .errors import DataError, DegenerateError, InvalidArgument, LowBiasError, Unavailable
from .functionals import estimate as assemble
from .functionals import resolve
from .montecarlo import (
    FAMILIES,
    Bernoulli,
    Discrete,
    _masked_plugin,
    parse_distribution,
    plan_simulations,
    reports_to_csv,
    reports_to_markdown,
    run_bias_experiment,
)
from .oracle import BiasCurve, exact_expectation

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE, EXIT_UNAVAILABLE = 0, 2, 3, 4, 5

# hard defaults, applied after command line and config file
DEFAULTS = {
    "family": "S", "seed": 1, "N": 10000, "runs": 1, "workers": 1, "format": "markdown", "B": 100,
    "eps": 0.1, "cap": 1e7, "baselines": "", "p": None, "n": None,
}


class ConfigError(LowBiasError):
    pass


def _ints(text, flag: str) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise InvalidArgument(f"--{flag} expects integers, got {text!r}") from None
    if not vals:
        raise InvalidArgument(f"--{flag} is empty")
    return vals


def _orders(text) -> tuple:
    ps = _ints(text, "p")
    if any(not 1 <= p <= 4 for p in ps):
        raise InvalidArgument(f"--p must lie in 1..4, got {ps}")
    return ps


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else str(v)


def _table(fmt: str, header: Sequence[str], rows: Sequence[Sequence], preamble: Sequence[str] = ()) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    lines = list(preamble) + ([""] if preamble else [])
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_estimate(a) -> str:
    if not a.data:
        raise InvalidArgument("estimate needs a data file")
    spec = resolve(a.functional)
    sample = read_sample(a.data)
    P = max(_orders(a.p))
    if sample.d != spec.dim:
        raise DataError(f"{a.functional} needs {spec.dim}-column data, file has {sample.d}")
    n = sample.n
    if n < P:
        raise DataError(f"invalid sample: n={n} is too small for order {P}")
    gated = a.u is not None
    if gated and a.c is None:
        raise InvalidArgument("--u needs --c")
    family = "S" if a.family in ("truncated-S", "plus") else a.family
    moments = spec.extract(BatchMoments.from_samples(sample.observations[None]))
    valid = spec.valid is None or bool(np.asarray(spec.valid(moments)).all())
    if not valid and not gated and spec.fallback is None:
        raise DegenerateError(f"{a.functional} is degenerate for this sample")
    plugin = float(_masked_plugin(spec, moments, np.inf)[0])
    series = spec.evaluate(moments).series(family) if valid else None
    rows = []
    for p in range(1, P + 1):
        value = float(np.ravel(assemble(spec, moments, n, p, a.family if a.family == "plus" else family,
                                        fallback=a.c if gated else None))[0])
        flag = ""
        if gated:
            value = float(truncated_estimate(value, plugin, a.u, a.c))
            flag = "inside" if abs(plugin) < a.u else "truncated"
        if p == 1:
            rows.append([p, "plug-in", _fmt(plugin), "", _fmt(value), flag])
        else:
            term = float(np.ravel(series.term(p - 1))[0]) if series is not None else None
            weight = series.weight(p - 1, n) if series is not None else None
            rows.append([p, f"{family}_{p - 1}", _fmt(term), _fmt(weight), _fmt(value), flag])
    header = ["p", "term", "term_value", "weight", "estimate", "gate"]
    pre = [f"functional: {a.functional}", f"data: {a.data} (n={n})", f"family: {a.family}"]
    return _table(a.format, header, rows, pre)


def _simulate_one(a) -> list:
    dist = parse_distribution(a.dist)
    if a.family not in FAMILIES:
        raise InvalidArgument(f"unknown family {a.family!r}")
    gate = None
    if a.u is not None or a.c is not None:
        if a.u is None or a.c is None:
            raise InvalidArgument("--u and --c go together")
        gate = (a.u, a.c)
    baselines = tuple(b.strip() for b in str(a.baselines).split(",") if b.strip())
    return [run_bias_experiment(a.functional, dist, n, p, a.N, a.seed, a.family, baselines, a.B, a.workers, gate,
                                run=k)
            for n in _ints(a.n, "n") for p in _orders(a.p) for k in range(1, a.runs + 1)]


def cmd_simulate(a) -> list:
    if a.N is None or a.N < 1:
        raise InvalidArgument(f"--N must be a positive integer, got {a.N}")
    if a.runs < 1:
        raise InvalidArgument("--runs must be at least 1")
    return _simulate_one(a)


def format_reports(reports: list, fmt: str) -> str:
    if fmt == "csv":
        return reports_to_csv(reports)
    seeds = ", ".join(str(s) for s in dict.fromkeys(r.seed for r in reports))
    return f"Master seed: {seeds}\n\n" + reports_to_markdown(reports)


def cmd_plan(a) -> str:
    dist = parse_distribution(a.dist)
    rows, notes = [], []
    for p in _orders(a.p):
        for n in _ints(a.n, "n"):
            plan = plan_simulations(a.functional, dist, n, p, a.eps)
            if not plan.defined:
                msg = f"phi_{p} not defined: S_{p}(F) = 0"
                rows.append([n, p, _fmt(a.eps), _fmt(plan.V_T), _fmt(plan.S_p), "not defined", "", msg])
                continue
            coef = a.eps**-2 * plan.phi
            rule = f"N >= {coef:.6g} n" + (f"^{2 * p - 1}" if p > 1 else "")
            if plan.N > a.cap:
                notes.append(f"n={n}, p={p}: N={plan.N} exceeds the practical cap {a.cap:g}")
                rule += " (impractical)"
            rows.append([n, p, _fmt(a.eps), _fmt(plan.V_T), _fmt(plan.S_p), _fmt(plan.phi), plan.N, rule])
    for note in notes:
        print("warning: " + note, file=sys.stderr)
    header = ["n", "p", "eps", "V_T", "S_p", "phi_p", "N", "rule"]
    return _table(a.format, header, rows, [f"functional: {a.functional}", f"distribution: {dist.label}"])


def cmd_oracle(a) -> str:
    dist = parse_distribution(a.dist)
    if isinstance(dist, Bernoulli):
        dist = Discrete([0.0, 1.0], [1 - dist.p, dist.p])
    if not isinstance(dist, Discrete):
        raise InvalidArgument("the oracle needs a discrete distribution (discrete:atoms/probs or bernoulli:p)")
    spec = resolve(a.functional)
    if dist.d != spec.dim:
        raise InvalidArgument(f"{a.functional} needs {spec.dim}-dimensional atoms, got {dist.d}")
    truth = spec.truth(dist)
    family = "S" if a.family == "truncated-S" else a.family
    ns = _ints(a.n, "n")
    rows, verdicts = [], []
    for p in _orders(a.p):
        biases = []
        for n in ns:
            def stat(batch, n=n, p=p):
                moments = spec.extract(batch)
                with np.errstate(divide="ignore", invalid="ignore"):
                    val = assemble(spec, moments, n, p, family, fallback=a.c)
                    if a.u is not None:
                        if a.c is None:
                            raise InvalidArgument("--u needs --c")
                        val = truncated_estimate(val, _masked_plugin(spec, moments, np.inf), a.u, a.c)
                return val

            bias = exact_expectation(stat, dist, n) - truth
            biases.append(bias)
            zero = abs(bias) <= 1e-9 * max(abs(truth), 1.0)
            note = "exact bias 0 (<=1e-9)" if zero else ""
            rows.append([n, p, family, _fmt(truth), _fmt(bias + truth), _fmt(bias), _fmt(abs(bias) * n**p), note])
        tol = 1e-9 * max(abs(truth), 1.0)
        if all(abs(b) <= tol for b in biases):
            verdicts.append(f"p={p}: exact bias 0 (<=1e-9) at every n")
        elif len(ns) > 1:
            ok = BiasCurve(ns, tuple(biases)).bounded(p)
            verdicts.append(f"p={p}: |bias| n^{p} {'bounded' if ok else 'growing'} over n={ns[0]}..{ns[-1]}")
    header = ["n", "p", "family", "truth", "expectation", "bias", "scaled_bias", "note"]
    out = _table(a.format, header, rows, [f"functional: {a.functional}", f"distribution: {dist.label}"])
    if verdicts:
        out += ("" if a.format == "csv" else "\n") + "".join(f"# {v}\n" for v in verdicts)
    return out


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "plan": cmd_plan, "oracle": cmd_oracle}


# ---------------------------------------------------------------------------
# Argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowbias", description="Low-bias estimates of smooth functionals.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file whose keys fill unset flags")
    common.add_argument("--section", help="config section to use (default: all for simulate, first otherwise)")
    common.add_argument("--functional", help="catalog id, e.g. central_moment:4, sd, mean_pow:-1")
    common.add_argument("--p", help="order(s), comma separated, 1..4")
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--u", type=float, help="truncation gate: keep the estimate when |plug-in| < u")
    common.add_argument("--c", type=float, help="value used outside the truncation gate")
    common.add_argument("--format", choices=("csv", "markdown"))
    common.add_argument("--out", help="write to this file instead of standard output")

    est = sub.add_parser("estimate", parents=[common], help="estimate from a data file")
    est.add_argument("data", nargs="?", help="whitespace or comma separated numbers, one observation per line")

    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo relative bias table")
    plan = sub.add_parser("plan", parents=[common], help="number of simulations needed")
    orc = sub.add_parser("oracle", parents=[common], help="exact bias by enumeration")
    for p in (sim, plan, orc):
        p.add_argument("--dist", help="normal:mu,var  exp:rate  gamma:shape  uniform  bernoulli:p  discrete:x,../p,..")
        p.add_argument("--n", help="sample size(s), comma separated")
    sim.add_argument("--N", type=int, help="replications per cell")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--runs", type=int, help="independent runs per cell")
    sim.add_argument("--workers", type=int, help="threads (results do not depend on this)")
    sim.add_argument("--baselines", help="comma separated subset of jackknife,bootstrap")
    sim.add_argument("--B", type=int, help="bootstrap resamples")
    plan.add_argument("--eps", type=float, help="target absolute error of the relative bias")
    plan.add_argument("--cap", type=float, help="warn when N exceeds this")
    return parser


_TYPES = {"N": int, "seed": int, "runs": int, "workers": int, "B": int, "u": float, "c": float, "eps": float,
          "cap": float}


def _config_sections(path: str, section: str | None) -> list:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    names = parser.sections()
    if section is not None:
        if section not in names:
            raise ConfigError(f"config {path} has no section [{section}]")
        names = [section]
    if not names:
        raise ConfigError(f"config {path} has no sections")
    return [dict(parser[s]) for s in names]


def _merge(args: argparse.Namespace, section: dict | None) -> argparse.Namespace:
    merged = argparse.Namespace(**vars(args))
    if section:
        aliases = {"distribution": "dist", "bootstrap_B": "B"}
        for key, raw in section.items():
            key = aliases.get(key, key)
            if key not in vars(args):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) is None:
                try:
                    setattr(merged, key, _TYPES.get(key, str)(raw))
                except ValueError:
                    raise ConfigError(f"config key {key!r}: bad value {raw!r}") from None
    for key, val in DEFAULTS.items():
        if key in vars(merged) and getattr(merged, key) is None:
            setattr(merged, key, val)
    if merged.functional is None:
        raise ConfigError("--functional is required")
    for key in ("dist", "n"):
        if key in vars(merged) and getattr(merged, key) is None:
            raise ConfigError(f"--{key} is required for {args.command}")
    if merged.p is None:
        merged.p = "1"
    return merged


def run(argv: Sequence[str] | None = None) -> tuple:
    """Parse ``argv`` and run; returns ``(exit code, output text, diagnostic)``."""
    return _execute(build_parser().parse_args(argv))


def _execute(args: argparse.Namespace) -> tuple:
    try:
        sections = _config_sections(args.config, args.section) if args.config else [None]
        if args.command == "simulate":
            configs = [_merge(args, sec) for sec in sections]
            reports = [r for cfg in configs for r in cmd_simulate(cfg)]
            text = format_reports(reports, configs[0].format)
        else:
            text = COMMANDS[args.command](_merge(args, sections[0]))
    except ConfigError as exc:
        return EXIT_CONFIG, "", f"config error: {exc}"
    except DataError as exc:
        return EXIT_DATA, "", f"data error: {exc}"
    except DegenerateError as exc:
        return EXIT_DEGENERATE, "", f"degenerate: {exc}"
    except Unavailable as exc:
        return EXIT_UNAVAILABLE, "", f"{exc}"
    except InvalidArgument as exc:
        return EXIT_CONFIG, "", f"invalid argument: {exc}"
    return EXIT_OK, text, ""


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    code, text, diag = _execute(args)
    if diag:
        print(f"lowbias: {diag}", file=sys.stderr)
        return code
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"lowbias: data error: cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_DATA
    else:
        sys.stdout.write(text)
    return EXIT_OK
