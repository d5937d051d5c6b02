"""Command-line runner: experiments, deterministic reports and plot data."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .clock import ClockGrid, build_composite, clock_error, commutator_action_norm
from .duhamel import MAX_TUPLES, SeriesConfig, series_error, truncated_series
from .hamiltonian import get_example, sample_many
from .lcu import (
    alpha_w,
    amplitude_schedule,
    assemble_lcu,
    build_lcu_plan,
    ham_t_fourier_encoding,
    l_state,
)
from .linalg import DomainError, NumericError, expm_hermitian, max_norm, spectral_norm
from .pipeline import DEFAULT_M, DEFAULT_Q, run_pipeline
from .quadrature import (
    gauss_legendre,
    nested_grid,
    partial_sum,
    spacing_residual,
    quadrature_error_1d,
    weight_residual,
)
from .resources import ResourceConstants, ResourceInput, compare_baselines, estimate

VERSION_TAG = f"v{__version__}"
CLAMP = 1e-16
PLOT_KINDS = ("error-vs-M", "error-vs-K", "residual-vs-q", "schedule-error-vs-q")


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class ExperimentReport:
    command: str
    config: dict
    seed: int
    rows: list = field(default_factory=list)
    document: Optional[dict] = None
    timings: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.get("pass") is False]

    @property
    def passed(self) -> bool:
        if self.document is not None and "pass" in self.document:
            return bool(self.document["pass"]) and not self.failures
        return not self.failures


# ---------------------------------------------------------------------------
# serialization


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


def header_line(report: ExperimentReport, extra: str = "") -> str:
    line = f"# seed={report.seed} version={VERSION_TAG} command={report.command}"
    return line + (f" {extra}" if extra else "")


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    buf.write(header_line(report) + "\n")
    if report.rows:
        columns = list(report.rows[0])
        for row in report.rows[1:]:
            columns += [c for c in row if c not in columns]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in report.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def render_json(report: ExperimentReport) -> str:
    doc = {
        "command": report.command,
        "config": report.config,
        "seed": report.seed,
        "version": VERSION_TAG,
        "pass": report.passed,
    }
    if report.document is not None:
        doc.update(report.document)
    else:
        doc["rows"] = report.rows
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_PLOT_SOURCES = {
    "error-vs-M": ("M", "measured"),
    "error-vs-K": ("k", "error_at_order"),
    "residual-vs-q": ("q", "scaled_residual"),
    "schedule-error-vs-q": ("q", "error_approx"),
}


def emit_plotdata(report: ExperimentReport, kind: str, path: Optional[str] = None) -> str:
    """(x, y) pairs with log10 columns for external plotting.

    Nonpositive y is clamped to 1e-16 and flagged; log10_x is left empty
    when x is not positive (order 0 in error-vs-K).
    """
    if kind not in _PLOT_SOURCES:
        raise UsageError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    xkey, ykey = _PLOT_SOURCES[kind]
    rows = [r for r in report.rows if xkey in r and ykey in r]
    if not rows:
        raise UsageError(f"report from {report.command!r} has no data for {kind!r}")
    buf = io.StringIO()
    buf.write(header_line(report, f"kind={kind}") + "\n")
    buf.write("x,y,log10_x,log10_y,clamped\n")
    for r in rows:
        x, y = float(r[xkey]), float(r[ykey])
        clamped = not y > CLAMP
        y = CLAMP if clamped else y
        log_x = _fmt(math.log10(x)) if x > 0 else ""
        buf.write(f"{_fmt(x)},{_fmt(y)},{log_x},{_fmt(math.log10(y))},{_fmt(clamped)}\n")
    text = buf.getvalue()
    if path:
        write_atomic(path, text)
    return text


# ---------------------------------------------------------------------------
# subcommands


def _int_list(text: str) -> list[int]:
    try:
        return sorted({int(v) for v in str(text).split(",") if v.strip()})
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _psi(spec: str, dim: int, rng: np.random.Generator) -> np.ndarray:
    if spec == "random":
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        return v / np.linalg.norm(v)
    try:
        index = int(spec)
    except ValueError as exc:
        raise UsageError(f"--psi must be a basis index or 'random', got {spec!r}") from exc
    if not 0 <= index < dim:
        raise UsageError(f"--psi index {index} out of range for dimension {dim}")
    return np.eye(dim, dtype=complex)[index]


def _alpha(H, M: int, T: float) -> float:
    grid = ClockGrid(M, T)
    return H.sparsity * max(max_norm(h) for h in sample_many(H.with_horizon(T), grid.times))


def cmd_clock_error(args, rng) -> ExperimentReport:
    H = get_example(args.hamiltonian, args.T)
    psi = _psi(args.psi, H.dim, rng)
    rows = []
    for M in _int_list(args.M_list):
        if args.metric == "error":
            res = clock_error(H, M, args.T, psi, constant=args.C)
            rows.append(
                {
                    "M": M,
                    "measured": res.measured,
                    "bound": res.bound,
                    "best_index": res.best_index,
                    "leakage": res.leakage,
                    "infidelity": res.infidelity,
                    "pass": res.measured <= res.bound,
                }
            )
        else:
            t0 = M // 2 if args.t0 is None else args.t0
            rows.append({"M": M, "t0": t0, "measured": commutator_action_norm(H, M, args.T, t0, psi)})
    if args.metric == "error":
        for prev, row in zip(rows, rows[1:]):
            row["monotone"] = row["measured"] <= 1.1 * prev["measured"]
            row["pass"] = row["pass"] and row["monotone"]
    elif len(rows) >= 2:
        x = np.log([r["M"] for r in rows])
        y = np.log([r["measured"] for r in rows])
        slope = float(np.polyfit(x, y, 1)[0])
        for row in rows:
            row["slope"] = slope
            row["pass"] = abs(slope - 0.5) <= 0.15
    return ExperimentReport("clock-error", vars_config(args), args.seed, rows)


def _moment_error(q: int) -> float:
    rule = gauss_legendre(q)
    worst = 0.0
    for deg in range(2 * q):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        worst = max(worst, abs(float(np.sum(rule.w * rule.x**deg)) - exact))
    return worst


def _nested_volume_error(q: int, t: float = 1.0, k_max: int = 4) -> float:
    rule = gauss_legendre(q)
    worst = 0.0
    for k in range(1, k_max + 1):
        if q**k > MAX_TUPLES or k > 2 * q:
            break
        _, w = nested_grid(rule, t, k)
        exact = t**k / math.factorial(k)
        worst = max(worst, abs(float(np.sum(w)) - exact) / exact)
    return worst


def _error_1d(q: int, omega: float = 4.0) -> tuple[float, float]:
    approx, exact, bound = quadrature_error_1d(gauss_legendre(q), 1.0, lambda x: np.cos(omega * x), omega ** (2 * q))
    return abs(approx - exact), bound


def cmd_quadrature_check(args, rng) -> ExperimentReport:
    """Rows (q, residual, scaled_residual, bound, pass); the bound applies to scaled_residual."""
    rows = []
    for q in _int_list(args.q_list):
        rule = gauss_legendre(q)
        if args.lemma == "exactness":
            residual = _moment_error(q)
            scaled, bound = residual, 1e-12
        elif args.lemma in ("spacing", "weights"):
            scaled = spacing_residual(rule) if args.lemma == "spacing" else weight_residual(rule)
            residual, bound = scaled / q**2, 10.0
        elif args.lemma == "partial-sum":
            a, b = q // 4 + 1, (3 * q) // 4
            res = partial_sum(rule, a, b, np.exp, lipschitz=math.e, sup_f=math.e)
            residual, scaled, bound = res.residual, res.residual, res.bound
        elif args.lemma == "error1d":
            residual, bound = _error_1d(q)
            scaled = residual
        else:
            residual = _nested_volume_error(q)
            scaled, bound = residual, 1e-10
        rows.append(
            {
                "q": q,
                "lemma": args.lemma,
                "residual": residual,
                "scaled_residual": scaled,
                "bound": bound,
                "pass": scaled <= bound,
            }
        )
    return ExperimentReport("quadrature-check", vars_config(args), args.seed, rows)


def cmd_duhamel(args, rng) -> ExperimentReport:
    H = get_example(args.hamiltonian, args.T)
    ops = build_composite(H, ClockGrid(args.M, args.T))
    alpha = _alpha(H, args.M, args.T)
    t = args.segment_alpha_product / alpha
    cfg = SeriesConfig(K=args.K, q=args.q, t=t, alpha=alpha)
    D, B = ops.d_op, ops.b_op
    exact = expm_hermitian(D + B, t)
    if args.mode == "exact":
        err = series_error(D, B, cfg, workers=args.threads)
        result = truncated_series(D, B, cfg, workers=args.threads)
        measured, tb, qb = err.measured, err.truncation_bound, err.quadrature_bound
    else:
        result = truncated_series(D, B, cfg, mode="sampled", samples=args.samples, rng=rng)
        measured, tb, qb = spectral_norm(result.W - exact), math.nan, math.nan
    phase = expm_hermitian(D, t)
    partial = np.zeros_like(exact)
    rows = []
    for k, (term, norm) in enumerate(zip(result.terms, result.term_norms)):
        partial = partial + term
        row = {
            "k": k,
            "term_norm": norm,
            "error_at_order": spectral_norm(phase @ partial - exact),
            "measured_error": measured,
            "truncation_bound": tb,
            "quadrature_bound": qb,
        }
        if args.mode == "exact":
            row["pass"] = measured <= tb + qb
        rows.append(row)
    return ExperimentReport("duhamel", vars_config(args), args.seed, rows)


def cmd_lcu(args, rng) -> ExperimentReport:
    rows = []
    if args.check == "alpha-w":
        brute, closed = alpha_w(args.K, args.q, 1.0, args.alpha_t)
        rel = abs(brute - closed) / closed
        rows.append({"K": args.K, "q": args.q, "alpha_t": args.alpha_t, "brute_force": brute,
                     "closed_form": closed, "rel_diff": rel, "pass": rel <= 1e-9})
    elif args.check == "l-state":
        ls = l_state(args.K, args.q, 1.0, args.alpha_t)
        diff = float(np.max(np.abs(ls.joint - ls.factorized)))
        rows.append({"K": args.K, "q": args.q, "alpha_t": args.alpha_t, "s": ls.s,
                     "max_diff": diff, "pass": diff <= 1e-11})
    elif args.check == "schedule":
        for q in _int_list(args.q_list):
            approx = amplitude_schedule(args.ell, q, use_approx_sums=True)
            exact = amplitude_schedule(args.ell, q)
            bound = 10 * math.sqrt(args.ell / q)
            rows.append({"ell": args.ell, "q": q, "error_approx": approx.error, "error_exact": exact.error,
                         "bound": bound, "pass": approx.error <= bound and exact.error <= 1e-12})
    else:
        H = get_example(args.hamiltonian, args.T)
        ops = build_composite(H, ClockGrid(args.M, args.T))
        alpha = _alpha(H, args.M, args.T)
        t = args.alpha_t / alpha
        encB = ham_t_fourier_encoding(H, args.M, args.T)
        plan = build_lcu_plan(args.K, args.q, t, alpha)
        enc = assemble_lcu(plan, ops.d_op, encB)
        series = truncated_series(ops.d_op, ops.b_op, SeriesConfig(args.K, args.q, t, alpha), workers=args.threads)
        diff = spectral_norm(enc.alpha * enc.block() - series.W)
        rows.append({"M": args.M, "K": args.K, "q": args.q, "alpha_t": args.alpha_t, "alpha_w": plan.alpha_w,
                     "s": plan.s, "diff": diff, "pass": diff <= 1e-8})
    return ExperimentReport("lcu", vars_config(args), args.seed, rows)


def cmd_pipeline(args, rng) -> ExperimentReport:
    H = get_example(args.hamiltonian, args.T)
    psi = _psi(args.psi, H.dim, rng)
    rep = run_pipeline(H, args.T, args.epsilon, M=args.M, K=args.K, q=args.q, psi=psi)
    doc = rep.to_dict()
    doc["pass"] = rep.passed
    rows = list(doc["per_segment"])
    return ExperimentReport("pipeline", vars_config(args), args.seed, rows, document=doc)


def cmd_estimate(args, rng) -> ExperimentReport:
    try:
        consts = ResourceConstants.from_dict(json.loads(args.constants)) if args.constants else ResourceConstants()
        alternatives = json.loads(args.compare) if args.compare else {}
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"invalid constants JSON: {exc}") from exc
    if not isinstance(alternatives, dict):
        raise UsageError("--compare must be a JSON object of named constant sets")
    inp = ResourceInput(args.d, args.T, args.hmax, args.hdotmax, args.epsilon, args.n, consts)
    rows = compare_baselines(inp, alternatives) if alternatives else [{"label": "base", **estimate(inp).as_dict()}]
    doc = None
    if args.format == "json":
        doc = {"note": "big-O constants are illustrative; absolute values are not claims", "rows": rows}
    return ExperimentReport("estimate", vars_config(args), args.seed, rows, document=doc)


COMMANDS: dict[str, Callable] = {
    "clock-error": cmd_clock_error,
    "quadrature-check": cmd_quadrature_check,
    "duhamel": cmd_duhamel,
    "lcu": cmd_lcu,
    "pipeline": cmd_pipeline,
    "estimate": cmd_estimate,
}

_GLOBAL_KEYS = {"out", "format", "seed", "threads", "config", "plot", "plot_out", "command"}


def vars_config(args) -> dict:
    """Echo of the subcommand parameters (global plumbing flags excluded)."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in _GLOBAL_KEYS and k != "threads"}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=0, help="seed for random instances")
    common.add_argument("--threads", type=int, default=1, help="workers for tuple enumeration")
    common.add_argument("--config", help="JSON file with parameter defaults")
    common.add_argument("--plot", choices=PLOT_KINDS, help="also emit plot data of this kind")
    common.add_argument("--plot-out", help="plot data file (default: <out>.<kind>.csv)")

    parser = _Parser(prog="clocksim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"clocksim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("clock-error", parents=[common], help="clock reduction error sweep")
    p.add_argument("--hamiltonian", default="driven-qubit")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--M-list", dest="M_list", default="64,128,256,512")
    p.add_argument("--C", type=float, default=5.0)
    p.add_argument("--psi", default="0")
    p.add_argument("--metric", choices=("error", "commutator"), default="error")
    p.add_argument("--t0", type=int, default=None, help="clock index for the commutator (default M/2)")

    p = sub.add_parser("quadrature-check", parents=[common], help="Gauss-Legendre lemma checks")
    p.add_argument("--q-list", dest="q_list", default="16,32,64,128,256")
    p.add_argument(
        "--lemma",
        choices=("spacing", "weights", "partial-sum", "error1d", "nested", "exactness"),
        default="spacing",
    )

    p = sub.add_parser("duhamel", parents=[common], help="truncated Duhamel series on one segment")
    p.add_argument("--hamiltonian", default="driven-qubit")
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--segment-alpha-product", dest="segment_alpha_product", type=float, default=0.5)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--samples", type=int, default=2000)

    p = sub.add_parser("lcu", parents=[common], help="LCU bookkeeping checks")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--alpha-t", dest="alpha_t", type=float, default=0.5)
    p.add_argument("--check", choices=("alpha-w", "l-state", "schedule", "full"), default="alpha-w")
    p.add_argument("--ell", type=int, default=4)
    p.add_argument("--q-list", dest="q_list", default="256,1024,4096")
    p.add_argument("--hamiltonian", default="driven-qubit")
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--T", type=float, default=1.0)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end segmented simulation")
    p.add_argument("--hamiltonian", default="driven-qubit")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--M", type=int, default=DEFAULT_M)
    p.add_argument("--K", type=int, default=None, help="default: from the order formula")
    p.add_argument("--q", type=int, default=DEFAULT_Q)
    p.add_argument("--psi", default="0")

    p = sub.add_parser("estimate", parents=[common], help="asymptotic resource formulas")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--hmax", type=float, required=True)
    p.add_argument("--hdotmax", type=float, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--constants", default=None, help="JSON object of constants")
    p.add_argument("--compare", default=None, help="JSON object: label -> constants")
    return parser


def _explicit_dests(parser: argparse.ArgumentParser, command: str, argv: list[str]) -> set[str]:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    return {
        action.dest
        for action in sub.choices[command]._actions
        if given & set(action.option_strings)
    }


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    known = set(vars(args)) - {"command", "config"}
    explicit = _explicit_dests(parser, args.command, argv)
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if dest in explicit:
            continue  # command-line flags win over the config file
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, dict):
            value = json.dumps(value, sort_keys=True)
        setattr(args, dest, _coerce(value, getattr(args, dest)))
    return args


def _coerce(value, current):
    if current is None or isinstance(current, bool):
        return value
    if isinstance(current, (int, float)) and isinstance(value, bool):
        raise UsageError(f"bad config value {value!r}")
    try:
        return type(current)(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config value {value!r}") from exc


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        args = _apply_config(parser, argv, args)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


def run(argv: list[str]) -> int:
    args = parse(argv)
    rng = np.random.default_rng(args.seed)
    start = time.perf_counter()
    # BLAS runs single-threaded so results do not depend on --threads
    with threadpool_limits(limits=1):
        report = COMMANDS[args.command](args, rng)
    report.timings["wall_seconds"] = time.perf_counter() - start
    text = render_json(report) if args.format == "json" else render_csv(report)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    if args.plot:
        target = args.plot_out or (f"{args.out}.{args.plot}.csv" if args.out else None)
        plot = emit_plotdata(report, args.plot, target)
        if target is None:
            sys.stdout.write(plot)
    print(f"{args.command}: {report.timings['wall_seconds']:.2f} s", file=sys.stderr)
    if not report.passed:
        for row in report.failures:
            print(f"FAILED: {json.dumps(_jsonable(row), sort_keys=True)}", file=sys.stderr)
        if report.document is not None and not report.document.get("pass", True):
            print("FAILED: report-level assertion", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
