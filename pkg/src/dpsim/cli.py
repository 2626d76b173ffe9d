"""Command line: run, sweep, calc, report, validate.

Exit codes: 0 success, 1 scenario validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import tomli

from . import relcalc
from .metrics import aggregate, aggregate_table
from .report import disclosure_report
from .scenario import ScenarioError, load_scenario, parse_scenario
from .simulation import Simulation

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class RuntimeFailure(Exception):
    pass


def _warn(scenario) -> None:
    for w in scenario.warnings:
        print(f"warning: {w}", file=sys.stderr)


def _writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RuntimeFailure(f"output directory {out} is not writable: {exc}") from None


# ------------------------------------------------------------------ commands


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    _warn(scenario)
    print(f"{args.scenario}: ok ({scenario.name}, hash {scenario.scenario_hash[:12]})")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    _warn(scenario)
    out = Path(args.out)
    _writable(out)
    result = Simulation(scenario, args.seed).run()
    for p in result.write(out):
        print(p)
    f = result.final
    print(f"lost={f.fraction_irrecoverably_lost:.6g} impaired={f.fraction_impaired_recoverable:.6g} "
          f"undetected_forgery={f.undetected_forgery_fraction:.6g} cost={f.cost_total:.6g}", file=sys.stderr)
    return EXIT_OK


def parse_axis(spec: str) -> tuple[str, list]:
    """``KEY=v1,v2`` with each value read as a TOML literal (bare words become strings)."""
    if "=" not in spec:
        raise RuntimeFailure(f"--axis must look like KEY=v1,v2 (got {spec!r})")
    key, _, values = spec.partition("=")
    out = []
    for tok in values.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(tomli.loads(f"v = {tok}")["v"])
        except tomli.TOMLDecodeError:
            out.append(tok)
    if not out:
        raise RuntimeFailure(f"--axis {key} has no values")
    return key.strip(), out


def _point_label(overrides: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in overrides.items())


def _sweep_task(task: tuple) -> tuple[int, int, str]:
    index, text, source, overrides, seed = task
    scenario = parse_scenario(text, source, overrides)
    summary = Simulation(scenario, seed).run().summary()
    summary["point"] = _point_label(overrides)
    summary["overrides"] = overrides
    return index, seed, json.dumps(summary, sort_keys=True, allow_nan=False)


def cmd_sweep(args) -> int:
    path = Path(args.scenario)
    try:
        text = path.read_text()
    except OSError as exc:
        raise RuntimeFailure(f"cannot read {path}: {exc}") from None
    axes = [parse_axis(a) for a in args.axis]
    points = [dict(zip([k for k, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]
    for ov in points:  # validate every point before anything runs
        _warn(parse_scenario(text, str(path), ov))
    out = Path(args.out)
    _writable(out)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    tasks = [(i, text, str(path), ov, s) for i, ov in enumerate(points) for s in seeds]
    jobs = args.jobs or os.cpu_count() or 1
    if jobs == 1 or len(tasks) == 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks, chunksize=max(1, len(tasks) // (jobs * 4))))
    results.sort(key=lambda r: (r[0], r[1]))
    summaries = [json.loads(r[2]) for r in results]
    agg = aggregate(summaries)
    width = len(str(len(points) - 1))
    for i, ov in enumerate(points):
        runs = [s for s in summaries if s["point"] == _point_label(ov)]
        pdir = out / f"point-{i:0{width}d}"
        pdir.mkdir(parents=True, exist_ok=True)
        doc = {"schema_version": "dpsim.point/1", "point": _point_label(ov), "overrides": ov,
               "aggregate": agg["points"][i], "runs": runs}
        (pdir / "summary.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    (out / "aggregate.json").write_text(json.dumps(_clean(agg), indent=2, sort_keys=True) + "\n")
    (out / "aggregate.csv").write_text(aggregate_table(agg))
    sys.stdout.write(aggregate_table(agg))
    return EXIT_OK


def _clean(obj):
    if isinstance(obj, float) and obj != obj:
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def cmd_report(args) -> int:
    scenario = load_scenario(args.scenario)
    text = disclosure_report(scenario)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise RuntimeFailure(f"cannot write {args.out}: {exc}") from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _media(args) -> relcalc.MediaSpec:
    base = relcalc.PRESETS[args.preset] if args.preset else relcalc.MediaSpec(1e12, 1e-14, 0.07)
    changes = {k: v for k, v in (("capacity_bytes", args.capacity_bytes), ("uber_per_bit", args.uber),
                                 ("duty_cycle", args.duty), ("sustained_transfer_rate", args.rate))
               if v is not None}
    try:
        return relcalc.replace(base, **changes) if changes else base
    except ValueError as exc:
        raise RuntimeFailure(str(exc)) from None


def cmd_calc(args) -> int:
    try:
        if args.subop == "full-read-error":
            p = relcalc.full_read_error_prob(_media(args))
            print(f"full_read_error_prob={p:.6g} (1 in {1 / p:.4g})" if p else "full_read_error_prob=0")
        elif args.subop == "latent-errors":
            print(f"expected_latent_errors={relcalc.service_life_latent_errors(_media(args), args.years):.6g}")
        elif args.subop == "hazard":
            lam = relcalc.hazard_from_service_prob(args.p, args.years)
            print(f"annual_hazard={lam:.10g}")
            print(f"mttf_hours={relcalc.mttf_hours_from_hazard(lam):.10g}")
            print(f"round_trip_p={relcalc.service_prob_from_hazard(lam, args.years):.10g}")
        elif args.subop == "loss":
            print(f"replica_loss_prob={relcalc.replica_loss_prob(args.n, args.lam, args.t):.10g}")
        elif args.subop == "presets":
            for name, spec in relcalc.PRESETS.items():
                d = spec.derived()
                print(f"{name}: capacity={d.capacity_bytes:g}B uber={d.uber_per_bit:g} "
                      f"five_year_fail={d.five_year_fail_prob:g} hazard={d.annual_hazard:.6g}/y "
                      f"mttf={d.mttf_hours:.6g}h full_read_error=1/{1 / relcalc.full_read_error_prob(d):.4g} "
                      f"latent_errors_5y={relcalc.service_life_latent_errors(d, 5):.4g}")
            print(f"note: {relcalc.CHEETAH_NOTE}")
    except ValueError as exc:
        raise RuntimeFailure(str(exc)) from None
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpsim", description="Digital preservation threat simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over parameter values and seeds")
    p.add_argument("scenario")
    p.add_argument("--axis", action="append", required=True, metavar="KEY=v1,v2",
                   help="dotted scenario key and values; repeat for a grid")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: all processors)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calc", help="closed-form reliability arithmetic")
    p.add_argument("subop", choices=("full-read-error", "latent-errors", "hazard", "loss", "presets"))
    p.add_argument("--preset", choices=sorted(relcalc.PRESETS))
    p.add_argument("--capacity-bytes", type=float)
    p.add_argument("--uber", type=float)
    p.add_argument("--duty", type=float)
    p.add_argument("--rate", type=float, help="sustained transfer rate, bytes/s")
    p.add_argument("--years", type=float, default=5.0)
    p.add_argument("--p", type=float, default=0.07, help="failure probability over --years")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--t", type=float, default=10.0)
    p.set_defaults(func=cmd_calc)

    p = sub.add_parser("report", help="disclosure report for a scenario")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any crash inside a run is a runtime failure
        print(f"error: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
