"""Command-line front end.

Subcommands: ``analyze`` a signal file, ``search`` for a forced equilibrium
from a run config, ``plotdata`` to emit time series before/after refinement,
``synth`` to build test signals, and ``reproduce-table1`` (a ``search`` with
the forced prey-predator benchmark configuration baked in).

Exit codes: 0 success, 2 input error, 3 numerical failure,
4 non-convergence or divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import models
from .integrate import (
    IntegrationError,
    IntegratorOptions,
    NonFiniteStateError,
    OdeProblem,
    integrate_sampled,
)
from .naff import (
    DegenerateSignalError,
    IllConditionedError,
    NaffOptions,
    NoPeakError,
    decompose,
    write_decomposition,
)
from .refine import (
    DivergenceError,
    PairingError,
    RefineOptions,
    largest_free_line_rank,
    log_to_dict,
    refine,
)
from .signals import (
    FLOAT_FORMAT,
    Signal,
    SignalFormatError,
    read_signal,
    write_signal,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NO_CONVERGENCE = 4

#: Benchmark configuration for the forced prey-predator run: parameters
#: alpha=4.539, beta=1.068, gamma=0.25, eta=0 from (1, 1).  The window and
#: tolerances are chosen so the run finishes on a desk machine in well under
#: two minutes while keeping the refinement floor near 1e-13.
TABLE1_CONFIG = {
    "model": {
        "name": "forced_prey_predator",
        "parameters": {"alpha": 4.539, "beta": 1.068, "gamma": 0.25, "eta": 0.0},
    },
    "initial_condition": [1.0, 1.0],
    "half_span": 128.0,
    "sample_count": 8192,
    "naff": {"window_order": 2, "max_terms": 50},
    "integrator": {"method": "bulirsch_stoer", "rel_tol": 1e-14, "abs_tol": 1e-14},
    "refine": {"amplitude_floor": 1e-12, "max_iterations": 4},
}


class ConfigError(ValueError):
    """Malformed run configuration."""


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _system_from_config(config: dict):
    model = config.get("model")
    if not isinstance(model, dict):
        raise ConfigError("config needs a 'model' object")
    if "path" in model:
        return models.user_system_from_config(model["path"])
    name = model.get("name")
    if name in ("forced_prey_predator", "forced_linear_oscillator"):
        params = model.get("parameters", {})
        try:
            return getattr(models, name)(**params)
        except TypeError as exc:
            raise ConfigError(f"model parameters: {exc}") from None
    raise ConfigError(
        f"unknown model {name!r}; use a built-in name or a 'path' to a "
        "model config file"
    )


def _build_run(config: dict, stop_mode: str):
    system = _system_from_config(config)
    try:
        x0 = np.asarray(config["initial_condition"], dtype=float)
        half_span = float(config["half_span"])
        sample_count = int(config.get("sample_count", 2**16))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"run config: {exc}") from None
    if x0.shape != (system.dimension,):
        raise ConfigError(
            f"initial_condition has shape {x0.shape}, expected "
            f"({system.dimension},)"
        )
    try:
        naff_options = NaffOptions(**config.get("naff", {}))
        integrator = IntegratorOptions(
            output_count=sample_count, **config.get("integrator", {})
        )
        options = RefineOptions(
            half_span=half_span,
            naff=naff_options,
            integrator=integrator,
            stop_mode=stop_mode,
            **config.get("refine", {}),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"run config: {exc}") from None
    return system, x0, options


def _report_lines(log) -> list[str]:
    lines = [
        "  n  dim  initial condition        #freq  rank  amplitude        omega",
    ]
    for rec in log.iterations:
        for k, (d, c) in enumerate(zip(rec.decompositions, rec.classifications)):
            rank = largest_free_line_rank(d, c)
            omega = c.proper_frequency_estimate
            lines.append(
                "%3s  x%-2d  %-23.17g  %5d  %4s  %-15.9e  %s"
                % (
                    rec.index if k == 0 else "",
                    k + 1,
                    rec.initial_condition[k],
                    len(d.terms),
                    rank if rank is not None else "-",
                    rec.free_amplitudes[k],
                    "%.6f" % omega if omega is not None else "-",
                )
            )
    refined = " ".join(_fmt(v) for v in log.refined_initial_condition)
    lines.append(f"refined initial condition: {refined}")
    lines.append(
        f"stop: {log.stop_reason} ({'converged' if log.converged else 'not converged'})"
    )
    return lines


def _write_log_csv(log, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "n",
                "dimension",
                "initial_condition",
                "term_count",
                "largest_free_rank",
                "largest_free_amplitude",
                "proper_frequency",
            ]
        )
        for rec in log.iterations:
            for k, (d, c) in enumerate(zip(rec.decompositions, rec.classifications)):
                rank = largest_free_line_rank(d, c)
                omega = c.proper_frequency_estimate
                writer.writerow(
                    [
                        rec.index,
                        k + 1,
                        _fmt(rec.initial_condition[k]),
                        len(d.terms),
                        rank if rank is not None else "",
                        _fmt(rec.free_amplitudes[k]),
                        _fmt(omega) if omega is not None else "",
                    ]
                )


def _run_search(config: dict, output_dir: Path, stop_mode: str) -> int:
    system, x0, options = _build_run(config, stop_mode)
    log = refine(system, x0, options)
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "refinement_log.json", "w") as fh:
        json.dump(log_to_dict(log), fh, indent=2)
        fh.write("\n")
    _write_log_csv(log, output_dir / "refinement_log.csv")
    report = "\n".join(_report_lines(log)) + "\n"
    (output_dir / "report.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK if log.converged else EXIT_NO_CONVERGENCE


def cmd_search(args) -> int:
    config = _load_config(args.config)
    return _run_search(config, Path(args.output_dir), args.stop)


def cmd_reproduce_table1(args) -> int:
    return _run_search(dict(TABLE1_CONFIG), Path(args.output_dir), args.stop)


def _series_csv(path, signals, t_start: float) -> None:
    count = signals[0].count
    times = signals[0].times + (t_start + signals[0].half_span)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{k+1}" for k in range(len(signals))])
        for i in range(count):
            writer.writerow(
                [_fmt(times[i])] + [_fmt(s.samples[i].real) for s in signals]
            )


def cmd_plotdata(args) -> int:
    config = _load_config(args.config)
    system, x0, options = _build_run(config, args.stop)
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    def emit(initial, name):
        problem = OdeProblem(
            dimension=system.dimension,
            rhs=system.rhs,
            t_start=0.0,
            t_end=2.0 * options.half_span,
            initial_state=initial,
        )
        signals = integrate_sampled(problem, options.integrator)
        _series_csv(output_dir / f"series_{name}.csv", signals, 0.0)

    if args.which in ("before", "both"):
        emit(x0, "before")
    if args.which in ("after", "both"):
        log = refine(system, x0, options)
        emit(np.asarray(log.refined_initial_condition), "after")
        if not log.converged:
            print(f"warning: refinement stopped by {log.stop_reason}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    signal = read_signal(args.signal)
    options = NaffOptions(
        window_order=args.window_order,
        max_terms=args.max_terms,
        min_separation=args.min_separation,
        amplitude_floor=args.amplitude_floor,
        peak_tolerance=args.peak_tolerance,
    )
    d = decompose(signal, options)
    out = args.output or str(Path(args.signal).with_suffix(".terms.csv"))
    write_decomposition(d, out)
    print(f"{len(d.terms)} terms, residual norm {d.residual_norm:.6e}, "
          f"stopped by {d.stop_reason}")
    print("rank  frequency               modulus                phase")
    ordered = sorted(d.terms, key=lambda t: -abs(t.amplitude))
    for rank, term in enumerate(ordered, start=1):
        print(
            "%4d  %-22.15g  %-21.15g  %+.15f"
            % (
                rank,
                term.frequency,
                abs(term.amplitude),
                math.atan2(term.amplitude.imag, term.amplitude.real),
            )
        )
    return EXIT_OK


def _parse_term(text: str) -> tuple[float, complex]:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"term {text!r} must be 'freq:re' or 'freq:re:im'")
    try:
        freq = float(parts[0])
        re = float(parts[1])
        im = float(parts[2]) if len(parts) == 3 else 0.0
    except ValueError as exc:
        raise ConfigError(f"term {text!r}: {exc}") from None
    return freq, complex(re, im)


def cmd_synth(args) -> int:
    terms = [_parse_term(t) for t in args.term]
    count = args.count
    if count < 2 or (count & (count - 1)) != 0:
        raise ConfigError(f"count must be a power of two >= 2, got {count}")
    t = np.linspace(-args.half_span, args.half_span, count)
    values = np.zeros(count, dtype=complex)
    for freq, amp in terms:
        values += amp * np.exp(1j * freq * t)
        if args.real and freq != 0.0:
            values += np.conj(amp) * np.exp(-1j * freq * t)
    if args.real:
        values = values.real.astype(complex)
    signal = Signal.from_samples(values, args.half_span)
    write_signal(signal, args.output)
    print(f"wrote {count} samples on [-{args.half_span}, {args.half_span}] "
          f"to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forcedeq",
        description=(
            "Search for initial conditions whose orbits carry forced "
            "oscillations only, via iterative frequency analysis."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="decompose a signal CSV into spectral terms")
    p.add_argument("signal", help="CSV file with header t,re[,im]")
    p.add_argument("-o", "--output", help="terms CSV path (default: <signal>.terms.csv)")
    p.add_argument("-p", "--window-order", type=int, default=2)
    p.add_argument("--max-terms", type=int, default=50)
    p.add_argument("--min-separation", type=float, default=None)
    p.add_argument("--amplitude-floor", type=float, default=1e-15)
    p.add_argument("--peak-tolerance", type=float, default=1e-12)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("search", help="refine an initial condition from a run config")
    p.add_argument("config", help="run configuration JSON")
    p.add_argument("--output-dir", default="search-output")
    p.add_argument("--stop", choices=["detect", "forced-purity"], default="detect")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser(
        "plotdata", help="emit time-series CSV before and/or after refinement"
    )
    p.add_argument("config", help="run configuration JSON")
    p.add_argument("--which", choices=["before", "after", "both"], default="both")
    p.add_argument("--output-dir", default="plot-output")
    p.add_argument("--stop", choices=["detect", "forced-purity"], default="detect")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("synth", help="synthesize a signal CSV from spectral terms")
    p.add_argument("--term", action="append", default=[], metavar="FREQ:RE[:IM]",
                   help="spectral term; repeatable")
    p.add_argument("--half-span", type=float, required=True)
    p.add_argument("--count", type=int, default=2**12)
    p.add_argument("--real", action="store_true",
                   help="complete conjugate pairs and write a real signal")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "reproduce-table1",
        help="run the forced prey-predator benchmark configuration",
    )
    p.add_argument("--output-dir", default="table1-output")
    p.add_argument("--stop", choices=["detect", "forced-purity"], default="detect")
    p.set_defaults(func=cmd_reproduce_table1)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, models.ModelConfigError, SignalFormatError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, NonFiniteStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (IntegrationError, NoPeakError, DegenerateSignalError,
            IllConditionedError, PairingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
