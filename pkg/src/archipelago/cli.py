"""Command-line entry point: ``archipelago {run,oracle,validate,deviation} CONFIG``.

Exit codes: 0 success, 1 statistical gate failed, 2 configuration error,
3 runtime degeneracy. Errors go to stderr as ``ERROR <code>: <message>``.
"""

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
from importlib import metadata
from pathlib import Path

from .algorithms import parse_tau, run_chain
from .core import weighted_estimate
from .diagnostics import clt_check, deviation_probe, exact_expectation, replicate_estimates
from .errors import (
    ArchipelagoError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    EvaluationError,
)
from .experiment import load_experiment, value_vector
from .feynman_kac import FiniteFK
from .oracle import (
    closed_form_variance,
    epsilon_sequence,
    mixing_bound,
    mixing_constants,
    recursive_variance,
)

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3
THREADS_ENV = "ARCHIPELAGO_THREADS"


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _fmt(x):
    return format(float(x), ".17g")


def _json_number(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


def version_string():
    """``git describe`` of the source tree, else the installed version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return "v" + metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def resolve_threads(value):
    if value is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError("thread count must be at least 1")
    return value


def _output_dir(args, config):
    if args.out:
        out = Path(args.out)
    elif config.output:
        base = Path(config.source).parent if config.source else Path.cwd()
        out = base / config.output
    else:
        out = Path.cwd() / "archipelago_out"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_telemetry_csv(path, telemetry, names):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "cv", "sil_triggered"]
                        + [f"estimate_{n}" for n in names] + ["scale_factor"])
        for t in telemetry:
            writer.writerow(
                [t.step, _fmt(t.cv), int(t.sil_triggered)]
                + [_fmt(t.estimates[n]) for n in names]
                + [_fmt(t.scale_factor)]
            )


def _envelope(config, started, threads):
    return {
        "version": version_string(),
        "config": config.to_dict(),
        "seeds": {"master_seed": config.chain.seed},
        "threads": threads,
        "wall_clock_seconds": time.perf_counter() - started,
    }


def cmd_run(args, config, threads, out):
    started = time.perf_counter()
    names = list(config.test_functions)
    result = run_chain(config.model, config.chain, config.test_functions, workers=threads)
    write_telemetry_csv(out / "telemetry.csv", result.telemetry, names)
    summary = _envelope(config, started, threads)
    summary["normalizing_constant"] = result.normalizing_constant
    summary["final_estimates"] = {
        n: weighted_estimate(result.archipelago, h) for n, h in config.test_functions.items()
    }
    summary["sil_count"] = sum(t.sil_triggered for t in result.telemetry)
    _write_json(out / "summary.json", summary)
    print(out / "telemetry.csv")
    return EXIT_OK


def _require_finite(config, what):
    if not isinstance(config.model, FiniteFK):
        raise ConfigurationError(f"{what} needs a finite state-space model")


def oracle_report(model, n, h, tau):
    """All oracle quantities for one value vector ``h``."""
    b2, terms, b2_coeff = closed_form_variance(model, n, h, "b2", details=True)
    sisr = closed_form_variance(model, n, h, "sisr")
    basil, _, coeff = closed_form_variance(model, n, h, "basil", tau=tau, details=True)
    report = {
        "b2_total": b2,
        "sisr_total": sisr,
        "basil_total": basil,
        "recursive_total": recursive_variance(model, n, h, tau),
        "terms": terms.tolist(),
        "coefficients": {"b2": b2_coeff.tolist(), "basil": coeff.tolist()},
        "epsilon": epsilon_sequence(model, n, tau).tolist(),
        "mixing_bound": None,
    }
    w_plus, s_minus, s_plus, c_minus = mixing_constants(model, n)
    if 0 < s_minus < s_plus and c_minus > 0:
        osc = float(h.max() - h.min())
        report["mixing_bound"] = mixing_bound(w_plus, s_minus, s_plus, c_minus, osc)
    return report


def cmd_oracle(args, config, threads, out):
    _require_finite(config, "oracle")
    started = time.perf_counter()
    n = int(config.oracle.get("horizon", config.chain.steps))
    tau = config.oracle.get("tau", config.chain.tau)
    tau = parse_tau(tau)
    functions = {
        name: oracle_report(config.model, n, value_vector(h, config.model), tau)
        for name, h in config.test_functions.items()
    }
    first = functions[next(iter(functions))]
    payload = dict(first)
    payload.update({"horizon": n, "tau": _json_number(tau), "functions": functions})
    payload.update(_envelope(config, started, threads))
    _write_json(out / "oracle.json", payload)
    print(json.dumps({k: first[k] for k in ("b2_total", "sisr_total", "basil_total")}))
    return EXIT_OK


def _replicates(config, tau, h, threads):
    chain = config.chain.replace(tau=tau)
    est = replicate_estimates(config.model, chain, h, config.replicates, workers=threads)
    return [chain.seed + r for r in range(config.replicates)], est


def cmd_validate(args, config, threads, out):
    """Oracle consistency, variance ordering and CLT gates for one model."""
    started = time.perf_counter()
    model = config.model
    n = config.chain.steps
    name, h = config.first_function
    level = float(config.validate.get("level", 0.95))
    checks = []
    rows = []
    if isinstance(model, FiniteFK):
        tau = parse_tau(config.validate.get("tau", config.oracle.get("tau", 1.0)))
        hv = value_vector(h, model)
        rep = oracle_report(model, n, hv, tau)
        rel = abs(rep["recursive_total"] - rep["basil_total"]) / max(abs(rep["basil_total"]), 1e-300)
        checks.append({"name": "oracle_consistency", "passed": rel <= 1e-10, "relative_error": rel})
        ordered = rep["b2_total"] >= rep["basil_total"] >= rep["sisr_total"]
        checks.append({"name": "variance_ordering", "passed": bool(ordered)})
        if config.replicates >= 2:
            eta_h = exact_expectation(model, h, n)
            taus = {"b2": 0.0, "sisr": math.inf, "basil": tau}
            for scheme in config.validate.get("schemes", ["b2", "sisr", "basil"]):
                target = rep[f"{scheme}_total"]
                seeds, est = _replicates(config, taus[scheme], h, threads)
                report = clt_check(est, target, config.chain.n_particles, eta_h, level)
                summary = {k: _json_number(v) if isinstance(v, float) else v
                           for k, v in report.summary().items()}
                checks.append({"name": f"clt_{scheme}", **summary})
                rows += [(scheme, s, e) for s, e in zip(seeds, est)]
    else:
        if config.replicates >= 2:
            eta_h = exact_expectation(model, h, n)
            seeds, est = _replicates(config, config.chain.tau, h, threads)
            se = float(est.std(ddof=1) / math.sqrt(est.size))
            gap = abs(float(est.mean()) - eta_h)
            checks.append({"name": "exact_mean", "passed": gap <= 4 * se + 1e-12,
                           "mean": float(est.mean()), "exact": eta_h, "standard_error": se})
            rows += [("chain", s, e) for s, e in zip(seeds, est)]
    with open(out / "replicates.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheme", "seed", f"estimate_{name}"])
        for scheme, seed, e in rows:
            writer.writerow([scheme, seed, _fmt(e)])
    passed = all(c["passed"] for c in checks)
    payload = {"passed": passed, "function": name, "checks": checks}
    payload.update(_envelope(config, started, threads))
    _write_json(out / "validate.json", payload)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    return EXIT_OK if passed else EXIT_GATE


def cmd_deviation(args, config, threads, out):
    started = time.perf_counter()
    dev = config.deviation
    name = dev.get("function") or next(iter(config.test_functions))
    h = config.test_functions[name]
    grid = dev.get("m2_grid", [32, 64, 128, 256, 512])
    eps = float(dev.get("epsilon", 0.1))
    R = int(dev.get("replicates", config.replicates))
    report = deviation_probe(config.model, config.chain, h, grid, eps, R, workers=threads)
    with open(out / "deviation.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m2", "tail_probability", "standard_error", "log_tail_probability"])
        for row in zip(report.m2_grid, report.tail_probabilities,
                       report.standard_errors, report.log_tail_probabilities):
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])
    passed = report.nonincreasing()
    payload = {
        "passed": passed,
        "function": name,
        "epsilon": eps,
        "replicates": R,
        "slope": _json_number(report.slope),
    }
    payload.update(_envelope(config, started, threads))
    _write_json(out / "deviation.json", payload)
    print(f"{'PASS' if passed else 'FAIL'} deviation slope={report.slope:.4g}")
    return EXIT_OK if passed else EXIT_GATE


COMMANDS = {
    "run": cmd_run,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
    "deviation": cmd_deviation,
}


def build_parser():
    parser = _Parser(prog="archipelago", description="Particle island algorithms.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="experiment JSON file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--threads", type=int,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument("--out", help="output directory")
    return parser


def _fail(code, message):
    print(f"ERROR {code}: {message}", file=sys.stderr)
    return code


def run_cli(argv=None):
    """Parse ``argv``, run one subcommand and return the exit code."""
    try:
        args = build_parser().parse_args(argv)
        threads = resolve_threads(args.threads)
        config = load_experiment(args.config)
        if args.seed is not None:
            config.with_seed(args.seed)
        out = _output_dir(args, config)
        return COMMANDS[args.command](args, config, threads, out)
    except _ArgumentError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DegeneracyError, EvaluationError) as exc:
        return _fail(EXIT_DEGENERATE, exc)
    except (ConfigurationError, DomainError, ArchipelagoError) as exc:
        return _fail(EXIT_CONFIG, exc)


def main():
    sys.exit(run_cli())
