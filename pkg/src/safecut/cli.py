"""Command-line front end.

`safecut run` simulates one scenario (or a filter-gain sweep of it) and
writes figure data, logs and a report.  `safecut verify` executes the
independent numeric check suites.

Exit codes: 0 success, 1 a filter-enabled run breached a barrier beyond
tolerance or a verification suite failed, 2 usage or configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import checks, sim
from .control import DisturbanceSpec
from .scenario import SCENARIO_IDS, load_scenario, scenario_catalog

_VIOLATION_TOL = 1e-3
_EMIT_CHOICES = ("csv", "plotdata", "report")


class _UsageError(ValueError):
    pass


def _parse_disturbance(text: str) -> DisturbanceSpec:
    parts = text.split(":")
    kind = parts[0]
    try:
        if kind == "none" and len(parts) == 1:
            return DisturbanceSpec()
        if kind == "constant" and len(parts) == 2:
            ax, ay, az = (float(v) for v in parts[1].split(","))
            return DisturbanceSpec(waveform="constant", amplitude=(ax, ay, az))
        if kind == "sinusoid" and len(parts) in (3, 4):
            freq = float(parts[1])
            ax, ay, az = (float(v) for v in parts[2].split(","))
            seed = int(parts[3]) if len(parts) == 4 else 0
            return DisturbanceSpec(waveform="sinusoid", amplitude=(ax, ay, az),
                                   frequency=freq, seed=seed)
    except ValueError as exc:
        raise _UsageError(f"bad disturbance {text!r}: {exc}") from exc
    raise _UsageError(
        f"bad disturbance {text!r}; expected none, constant:ax,ay,az "
        "or sinusoid:freq:ax,ay,az[:seed]")


def _parse_alpha(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise _UsageError(f"bad alpha list {text!r}") from exc
    if any(v <= 0.0 for v in values):
        raise _UsageError("alpha values must be positive")
    return values


def _print_report(spec, report, log) -> None:
    mode = "off" if not spec.filter.enabled else \
        f"on (alpha {spec.filter.alpha:g}, {spec.filter.mode})"
    print(f"scenario {spec.scenario_id}  filter {mode}")
    for name, h in report.min_h.items():
        print(f"  min barrier {name} [mm]:      {h: .6f}")
    fv = report.first_violation_time
    print(f"  first violation [s]:         {'none' if fv is None else f'{fv:.3f}'}")
    print(f"  max tracking error [mm/s]:   {report.max_tracking_error:.6f}")
    print(f"  velocity-error decay [1/s]:  {report.decay_rate:.3f}")
    print(f"  path completion:             {report.path_completion:.4f}")
    print(f"  deviation integral [mm]:     {report.deviation_integral:.6f}")
    if spec.filter.enabled and spec.filter.activation_gate:
        tg = sim.gate_engage_time(log)
        print(f"  gate engaged [s]:            {'never' if tg is None else f'{tg:.3f}'}")


def _run_one(spec, out_dir: Path, emit) -> float:
    """Simulate spec, write the requested outputs, return the worst h.

    Runs with the filter off are deliberate baselines and never count
    toward the violation exit code.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    log = sim.run(spec)
    report = sim.summarize(log, spec)
    if "csv" in emit:
        sim.export_csv(log, out_dir / f"scenario{spec.scenario_id}_log.csv")
    if "plotdata" in emit:
        sim.export_plot_data(log, spec, out_dir)
    if "report" in emit:
        _print_report(spec, report, log)
    if not spec.filter.enabled:
        return float("inf")
    return min(report.min_h.values(), default=float("inf"))


def cmd_run(args) -> int:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise _UsageError(f"cannot read config: {exc}") from exc
        spec = load_scenario(text, base_id=args.scenario)
    elif args.scenario is not None:
        spec = scenario_catalog(args.scenario)
    else:
        raise _UsageError("one of --scenario or --config is required")

    if args.disturbance:
        spec = replace(spec, disturbance=_parse_disturbance(args.disturbance))
    if args.no_filter:
        spec = replace(spec, filter=replace(spec.filter, enabled=False))

    emit = tuple(tok for tok in args.emit.split(",") if tok)
    for tok in emit:
        if tok not in _EMIT_CHOICES:
            raise _UsageError(f"unknown emit target {tok!r}")

    out = Path(args.out)
    worst = float("inf")
    if args.alpha:
        if args.no_filter:
            raise _UsageError("--alpha and --no-filter are mutually exclusive")
        runs = [("unfiltered", replace(spec, filter=replace(spec.filter, enabled=False)))]
        runs += [(f"alpha_{v:g}", replace(spec, filter=replace(spec.filter, alpha=v,
                                                               enabled=True)))
                 for v in _parse_alpha(args.alpha)]
        for label, sub in runs:
            worst = min(worst, _run_one(sub, out / label, emit))
    else:
        worst = _run_one(spec, out, emit)
    return 1 if worst < -_VIOLATION_TOL else 0


def cmd_verify(args) -> int:
    failed = 0
    for name, fn in checks.VERIFY_SUITES:
        if name == "qp-oracle":
            passed, detail = fn(args.qp_instances, args.seed)
        else:
            passed, detail = fn()
        print(f"{name}: {'PASS' if passed else 'FAIL'}  ({detail})")
        failed += not passed
    print(f"{len(checks.VERIFY_SUITES) - failed}/{len(checks.VERIFY_SUITES)} suites passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safecut",
        description="marking-point cutting simulation with a safety velocity filter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write its data files")
    p.add_argument("--scenario", type=int, choices=SCENARIO_IDS,
                   help="catalog scenario id")
    p.add_argument("--config", help="scenario config file (overrides catalog values)")
    p.add_argument("--alpha",
                   help="comma list of filter gains; runs each into out/alpha_<v>/ "
                        "plus an unfiltered baseline into out/unfiltered/")
    p.add_argument("--disturbance",
                   help="none | constant:ax,ay,az | sinusoid:freq:ax,ay,az[:seed]")
    p.add_argument("--no-filter", action="store_true",
                   help="disable the safety filter for this run")
    p.add_argument("--emit", default="plotdata",
                   help="comma list of outputs: csv, plotdata, report (default plotdata)")
    p.add_argument("--out", default=os.environ.get("SAFECUT_OUT", "safecut_out"),
                   help="output directory (default $SAFECUT_OUT or ./safecut_out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the independent numeric check suites")
    p.add_argument("--qp-instances", type=int, default=10000,
                   help="random programs for the filter oracle (default 10000)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"safecut: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"safecut: bad configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"safecut: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
