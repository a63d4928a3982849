"""Command-line interface: ``feedcap rate|sweep|simulate|verify|psd``.

Exit codes: 0 success, 2 input error, 3 infeasible, 4 I/O error,
5 simulation tolerance failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .coding_sim import SimConfig, SimReport, simulate, worker_count
from .noise_model import ArModel, psd
from .params import Sk2Params
from .rate_solver import (
    InfeasibleError,
    SearchOptions,
    ar1_capacity,
    combined_rate,
    sk1_rate,
    sk2_rate,
)
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4
EXIT_TOLERANCE = 5

SWEEP_HEADER = (
    "beta_swept",
    "P",
    "rate_sk1_nats",
    "rate_sk2_nats",
    "rate_combined_nats",
    "ar1_capacity_nats",
    "diff_sk2_minus_sk1",
    "winner",
)
SCHEMES = ("sk1", "sk2", "ar1", "combined")


class InputError(ValueError):
    """Bad user input; maps to exit code 2."""


def fmt(x) -> str:
    """12 significant digits, dot decimal separator, no locale."""
    if x is None:
        return ""
    return format(float(x), ".12g")


def _num(x):
    """JSON-friendly float rounded to 12 significant digits (non-finite becomes null)."""
    x = float(x)
    return float(format(x, ".12g")) if math.isfinite(x) else None


def _parse_model(text: str) -> ArModel:
    try:
        return ArModel.parse(text)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _parse_power(value) -> float:
    try:
        P = float(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"cannot parse power {value!r}") from exc
    if not (P > 0 and math.isfinite(P)):
        raise InputError("power must be positive")
    return P


def _search_options(args) -> SearchOptions:
    try:
        return SearchOptions(n_theta=args.grid_theta, n_real=args.grid_real, tol=args.tol)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _params_record(params) -> dict:
    if isinstance(params, Sk2Params):
        g1, g2 = params.gamma1, params.gamma2
        return {"kind": params.kind, "gamma1_re": _num(g1.real), "gamma1_im": _num(g1.imag),
                "gamma2_re": _num(g2.real), "gamma2_im": _num(g2.imag)}
    return {"kind": "sk1", "gamma1_re": _num(params), "gamma1_im": 0.0, "gamma2_re": None, "gamma2_im": None}


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# --------------------------------------------------------------------------
# rate


def cmd_rate(args, out) -> int:
    model = _parse_model(args.beta)
    P = _parse_power(args.power)
    opts = _search_options(args)
    scheme = args.scheme
    if scheme == "ar1":
        if model.order != 1:
            raise InputError("scheme ar1 needs exactly one beta")
        rate = ar1_capacity(model.betas[0], P)
        lines = [("scheme", "ar1"), ("rate_nats", fmt(rate)), ("rate_bits", fmt(rate / math.log(2)))]
        record = {"scheme": "ar1", "rate_nats": _num(rate)}
    else:
        solver = {"sk1": lambda: sk1_rate(model, P), "sk2": lambda: sk2_rate(model, P, opts),
                  "combined": lambda: combined_rate(model, P, opts)}[scheme]
        res = solver()
        lines = [("scheme", scheme)]
        if scheme == "combined":
            lines.append(("winner", res.diagnostics["winner"]))
            lines.append(("rate_sk1_nats", fmt(res.diagnostics["rate_sk1_nats"])))
            lines.append(("rate_sk2_nats", fmt(res.diagnostics["rate_sk2_nats"])))
        lines += [("rate_nats", fmt(res.rate_nats)), ("rate_bits", fmt(res.rate_bits))]
        rec = _params_record(res.params)
        lines.append(("kind", rec["kind"]))
        for key in ("gamma1_re", "gamma1_im", "gamma2_re", "gamma2_im"):
            if rec[key] is not None:
                lines.append((key, fmt(rec[key])))
        lines += [("power_at_solution", fmt(res.power_at_solution)), ("power_budget", fmt(P)),
                  ("power_check", "ok" if res.power_at_solution <= P + 1e-8 else "violated")]
        if res.diagnostics.get("boundary_hit"):
            lines.append(("warning", "optimum on the search-box boundary; raise gamma_max"))
        record = {"scheme": scheme, "rate_nats": _num(res.rate_nats), "params": rec,
                  "power_at_solution": _num(res.power_at_solution), "power_budget": _num(P)}
        if scheme == "combined":
            record["winner"] = res.diagnostics["winner"]
    if args.bits:
        lines.insert(1, ("rate", f"{fmt(dict(lines)['rate_bits'])} bits"))
    for key, value in lines:
        print(f"{key}: {value}", file=out)
    if args.out:
        record["model"] = {"betas": list(model.betas)}
        _write_text(args.out, json.dumps(record, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepSpec:
    """Sweep one ``beta`` of a model template over ``[lo, hi]`` for each power in ``powers``."""

    template: tuple[float, ...]
    index: int
    lo: float
    hi: float
    step: float
    powers: tuple[float, ...]
    schemes: tuple[str, ...] = SCHEMES

    def __post_init__(self) -> None:
        if not 0 <= self.index < len(self.template):
            raise InputError(f"sweep index {self.index} out of range for {len(self.template)} betas")
        if not self.step > 0:
            raise InputError("sweep step must be positive")
        if self.hi < self.lo:
            raise InputError("empty sweep range")
        if not (-1 < self.lo and self.hi < 1):
            raise InputError("swept beta must stay inside (-1, 1)")
        if not self.powers:
            raise InputError("no power values given")
        for s in self.schemes:
            if s not in SCHEMES:
                raise InputError(f"unknown scheme {s!r}")

    def values(self) -> np.ndarray:
        count = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(count), 12)

    def model_at(self, beta: float) -> ArModel:
        betas = list(self.template)
        betas[self.index] = float(beta)
        return ArModel(tuple(betas))


def sweep_row(spec: SweepSpec, beta: float, P: float, opts: SearchOptions) -> list[str]:
    model = spec.model_at(beta)
    want = set(spec.schemes)
    need_both = "combined" in want or ("sk1" in want and "sk2" in want)
    r1 = sk1_rate(model, P).rate_nats if ("sk1" in want or need_both) else None
    r2 = sk2_rate(model, P, opts).rate_nats if ("sk2" in want or need_both) else None
    both = r1 is not None and r2 is not None
    comb = max(r1, r2) if both and "combined" in want else None
    cap = ar1_capacity(model.betas[0], P) if "ar1" in want and model.order == 1 else None
    diff = r2 - r1 if both else None
    winner = ("SK2" if r2 > r1 else "SK1") if both else ""
    return [fmt(beta), fmt(P), fmt(r1), fmt(r2), fmt(comb), fmt(cap), fmt(diff), winner]


def run_sweep(spec: SweepSpec, opts: SearchOptions, workers: int | None = None) -> str:
    """CSV text for the sweep; row order is (P, beta) and independent of ``workers``."""
    workers = worker_count() if workers is None else workers
    jobs = [(float(b), P) for P in spec.powers for b in spec.values()]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda j: sweep_row(spec, j[0], j[1], opts), jobs))
    else:
        rows = [sweep_row(spec, b, P, opts) for b, P in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    writer.writerows(rows)
    return buf.getvalue()


def _parse_floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise InputError(f"cannot parse {what} {text!r}") from exc


def cmd_sweep(args, out) -> int:
    template = _parse_floats(args.beta, "beta list")
    powers = tuple(_parse_power(p) for p in _parse_floats(args.power, "power list"))
    schemes = tuple(s.strip().lower() for s in args.schemes.split(",") if s.strip())
    spec = SweepSpec(template, args.sweep_index, args.lo, args.hi, args.step, powers, schemes)
    for b in template:
        if not abs(b) < 1:
            raise InputError(f"AR coefficient {b!r} must satisfy |beta| < 1")
    text = run_sweep(spec, _search_options(args))
    if args.out:
        _write_text(args.out, text)
    else:
        out.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

CONFIG_KEYS = {
    "beta": "comma separated AR coefficients (empty for white noise)",
    "scheme": "sk1 or sk2",
    "power": "power budget; with optimal = true the rate-optimal roots are used",
    "optimal": "true to solve for the rate-optimal roots at the given power",
    "kind": "real_distinct, conjugate_pair or repeated (sk2 with explicit roots)",
    "gamma": "SK(1) root, or the repeated SK(2) root",
    "gamma1": "first real root (real_distinct)",
    "gamma2": "second real root (real_distinct)",
    "r": "modulus of a conjugate pair",
    "theta": "angle of a conjugate pair, in (0, pi)",
    "horizon": "block length n",
    "trials": "number of Monte Carlo trials",
    "seed": "64-bit non-negative seed",
    "log_domain": "true to use the log-domain engine",
    "noise_scale": "noise multiplier (0 is noiseless, direct engine only)",
    "exponent_tol": "optional gate on |exponent - log min|gamma||",
}
_SECTION = "simulation"


def _key_lines(text: str) -> dict:
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped and not stripped.startswith(("#", ";")) and ("=" in stripped or ":" in stripped):
            key = stripped.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            lines.setdefault(key, lineno)
    return lines


def load_sim_config(path: str, overrides: dict) -> SimConfig:
    """Parse a flat ``key = value`` file into a :class:`SimConfig`.

    Errors name the offending key and its line.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] - 1
        line = text.splitlines()[lineno - 1].strip()
        raise InputError(f"malformed line {lineno}: {line!r} (expected key = value)") from exc
    except configparser.DuplicateOptionError as exc:
        raise InputError(f"duplicate key {exc.option!r} (line {exc.lineno - 1})") from exc
    except configparser.DuplicateSectionError as exc:
        raise InputError(f"config must not contain sections (line {exc.lineno - 1})") from exc
    except configparser.Error as exc:
        raise InputError(f"malformed config: {exc}") from exc
    if len(parser.sections()) != 1:
        raise InputError("config must be flat key = value lines without sections")
    raw = dict(parser[_SECTION])
    lines = _key_lines(text)
    for key in raw:
        if key not in CONFIG_KEYS:
            raise InputError(f"unknown key {key!r} (line {lines.get(key, '?')})")
    raw.update({k: v for k, v in overrides.items() if v is not None})

    def get(key, conv, default=None, required=False):
        if key not in raw or str(raw[key]).strip() == "":
            if required:
                raise InputError(f"missing required key {key!r}")
            return default
        try:
            return conv(raw[key])
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad value for {key!r} (line {lines.get(key, '?')}): {raw[key]!r}") from exc

    def boolean(v):
        if isinstance(v, bool):
            return v
        s = str(v).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(v)

    model = get("beta", _parse_model, default=ArModel(()))
    scheme = get("scheme", lambda v: str(v).strip().lower(), default="sk2")
    if scheme not in ("sk1", "sk2"):
        raise InputError(f"bad value for 'scheme' (line {lines.get('scheme', '?')}): {scheme!r}")
    power = get("power", float)
    if power is not None and not power > 0:
        raise InputError(f"bad value for 'power' (line {lines.get('power', '?')}): power must be positive")
    if get("optimal", boolean, default=False):
        if power is None:
            raise InputError("optimal = true needs a power")
        params = sk1_rate(model, power).params if scheme == "sk1" else sk2_rate(model, power).params
    elif scheme == "sk1":
        params = get("gamma", float, required=True)
    else:
        kind = get("kind", lambda v: str(v).strip().lower(), required=True)
        try:
            if kind == "real_distinct":
                params = Sk2Params.real(get("gamma1", float, required=True), get("gamma2", float, required=True))
            elif kind == "conjugate_pair":
                params = Sk2Params.conjugate(get("r", float, required=True), get("theta", float, required=True))
            elif kind == "repeated":
                params = Sk2Params.repeated(get("gamma", float, required=True))
            else:
                raise InputError(f"bad value for 'kind' (line {lines.get('kind', '?')}): {kind!r}")
        except InputError:
            raise
        except ValueError as exc:
            raise InputError(f"invalid roots: {exc}") from exc
    try:
        return SimConfig(
            model=model,
            params=params,
            horizon=get("horizon", int, required=True),
            trials=get("trials", int, required=True),
            seed=get("seed", int, default=0),
            log_domain=get("log_domain", boolean, default=False),
            noise_scale=get("noise_scale", float, default=1.0),
            power=power,
            exponent_tol=get("exponent_tol", float),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def report_document(report: SimReport, timestamp: bool = True) -> dict:
    """JSON-ready view of a :class:`SimReport` with fixed key names."""
    cfg = report.config
    per_step = [
        {"n": i + 1, "power_mean": _num(report.power_mean[i]), "power_se": _num(report.power_se[i]),
         "power_theory": _num(report.power_theory[i])}
        for i in range(cfg.horizon)
    ]
    summary = {
        "target_power": _num(report.target_power),
        "head_power": _num(report.head_power),
        "tail_power": _num(report.tail_power),
        "tail_start": report.tail_start,
        "exponent_asymptotic": _num(report.exponent_asymptotic),
        "checks": dict(sorted(report.checks.items())),
        "passed": report.passed,
    }
    for j in range(cfg.dim):
        summary[f"mse_u{j + 1}"] = _num(report.mse[j])
        summary[f"mse_u{j + 1}_theory"] = _num(report.mse_theory[j])
        summary[f"exponent_u{j + 1}"] = _num(report.exponent[j])
        summary[f"exponent_u{j + 1}_theory"] = _num(report.exponent_theory[j])
    return {
        "model": {"betas": list(cfg.model.betas)},
        "params": _params_record(cfg.params),
        "horizon": cfg.horizon,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "log_domain": cfg.log_domain,
        "per_step": per_step,
        "summary": summary,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else None,
    }


def cmd_simulate(args, out) -> int:
    overrides = {"seed": args.seed, "trials": args.trials, "horizon": args.horizon,
                 "log_domain": True if args.log_domain else None}
    config = load_sim_config(args.config, overrides)
    report = simulate(config)
    text = json.dumps(report_document(report, timestamp=not args.no_timestamp), indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        out.write(text)
    status = "pass" if report.passed else "FAIL"
    failed = [k for k, v in sorted(report.checks.items()) if not v]
    print(f"simulation {status}" + (f" ({', '.join(failed)} false)" if failed else ""), file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_TOLERANCE


# --------------------------------------------------------------------------
# verify, psd


def cmd_verify(args, out) -> int:
    results = run_suite(args.suite)
    for res in results:
        metrics = " ".join(f"{k}={fmt(v) if isinstance(v, float) else v}" for k, v in res.metrics.items())
        print(f"{res.name}: {'PASS' if res.passed else 'FAIL'} {metrics}", file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_TOLERANCE


def cmd_psd(args, out) -> int:
    model = _parse_model(args.beta)
    if args.points < 2:
        raise InputError("need at least 2 points")
    theta = np.linspace(0.0, math.pi, args.points)
    values = psd(model, theta)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("theta", "psd"))
    writer.writerows((fmt(t), fmt(v)) for t, v in zip(theta, values))
    if args.out:
        _write_text(args.out, buf.getvalue())
    else:
        out.write(buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedcap", description="SK feedback-coding rates over AR(p) Gaussian noise.")
    sub = parser.add_subparsers(dest="command", required=True)

    def search_flags(p):
        p.add_argument("--grid-theta", type=int, default=1000, help="angle grid for conjugate pairs")
        p.add_argument("--grid-real", type=int, default=200, help="ratio grid for real pairs")
        p.add_argument("--tol", type=float, default=1e-10, help="bisection tolerance on root moduli")

    p = sub.add_parser("rate", help="achievable rate at one power")
    p.add_argument("--beta", default="", help="AR coefficients, e.g. 0.3,0.4 (empty or 0 for white noise)")
    p.add_argument("--power", required=True)
    p.add_argument("--scheme", choices=SCHEMES, default="combined")
    p.add_argument("--bits", action="store_true", help="also report the rate line in bits")
    p.add_argument("--out", help="write a JSON record here")
    search_flags(p)

    p = sub.add_parser("sweep", help="rates over a grid of one AR coefficient (CSV)")
    p.add_argument("--beta", required=True, help="model template; the swept entry is replaced")
    p.add_argument("--sweep-index", type=int, default=0, help="position of the swept beta (0-based)")
    p.add_argument("--lo", type=float, required=True, help="first swept value")
    p.add_argument("--hi", type=float, required=True, help="last swept value (inclusive)")
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--power", default="1", help="comma separated powers")
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    search_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo run from a key = value config file (JSON report)")
    p.add_argument("config")
    p.add_argument("--out", help="JSON path (stdout when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--log-domain", action="store_true", help="use the log-domain engine")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for byte-stable output")

    p = sub.add_parser("verify", help="oracle-equivalence batteries")
    p.add_argument("suite", choices=tuple(SUITES) + ("all",))

    p = sub.add_parser("psd", help="noise power spectral density on [0, pi] (CSV)")
    p.add_argument("--beta", default="")
    p.add_argument("--points", type=int, default=257)
    p.add_argument("--out")
    return parser


COMMANDS = {"rate": cmd_rate, "sweep": cmd_sweep, "simulate": cmd_simulate, "verify": cmd_verify, "psd": cmd_psd}


# flags whose value may start with "-" (e.g. --beta -0.5,0.9)
_VALUE_FLAGS = ("--beta", "--power", "--lo", "--hi", "--step")


def _glue_values(argv: list[str]) -> list[str]:
    glued, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            glued.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            glued.append(tok)
            i += 1
    return glued


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_values(argv))
    try:
        return COMMANDS[args.command](args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
