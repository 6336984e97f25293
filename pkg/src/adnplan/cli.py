"""Command-line entry point: ``adnplan <subcommand> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import ibpso
from .config import ConfigError, load_config
from .dispatch import optimize_dispatch, write_intraday_report
from .grid import solve_power_flow
from .plan import Plan
from .scenarios import (
    SCENARIO_LABELS,
    ScenarioRunner,
    emit_voltage_cdf,
    run_scenarios,
    sweep_storage_penetration,
    write_allocation,
    write_costs,
)


def read_plan(path) -> Plan:
    """Plan from an allocation CSV (``site,device,capacity``; a scenario column is ignored)."""
    values = {"wt": {}, "pv": {}, "storage_kwh": {}, "storage_kw": {}}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            values[row["device"]][int(row["site"])] = float(row["capacity"])
    return Plan(values["wt"], values["pv"], values["storage_kwh"], values["storage_kw"])


def _prepare(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    cfg = load_config(args.config, **overrides)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.txt").write_text("\n".join(cfg.echo()) + "\n")
    return cfg, out


def cmd_powerflow(args) -> int:
    cfg, out = _prepare(args)
    net = cfg.network()
    res = solve_power_flow(net)
    with open(out / "powerflow.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bus", "v_pu"])
        for bus, v in zip(net.bus_ids, res.v_mag):
            w.writerow([bus, f"{v:.6g}"])
    worst = net.bus_ids[int(np.argmin(res.v_mag))]
    print(f"loss {res.p_loss_total:.6g} kW, {res.q_loss_total:.6g} kVar; "
          f"min voltage {res.v_mag.min():.6g} pu at bus {worst}; {res.iterations} sweeps")
    return 0


def cmd_dispatch(args) -> int:
    cfg, out = _prepare(args)
    runner = ScenarioRunner(cfg)
    plan = read_plan(args.plan) if args.plan else Plan()
    ctx = runner.context(2)
    result = optimize_dispatch(ctx, plan, cfg.lower())
    write_intraday_report(out / "dispatch.csv", ctx, plan, result)
    print("daily F2 per season ($):", ", ".join(f"{x:.6g}" for x in result.f2),
          "" if result.feasible else "(infeasible)")
    return 0 if result.feasible else 2


def cmd_plan(args) -> int:
    cfg, out = _prepare(args)
    scenario = (args.scenario or [2])[0]
    runner = ScenarioRunner(cfg)
    report = runner.run(scenario)
    label = f"S{scenario}"
    write_allocation(out / "allocation.csv", [(label, report)])
    write_costs(out / "costs.csv", [(label, report)])
    write_intraday_report(out / f"dispatch_{label}.csv", runner.context(scenario), report.plan,
                          report.dispatch)
    ibpso.write_history(report.history, out / f"convergence_{label}.csv")
    if args.sequential:
        seq = runner.sequential(scenario)
        write_allocation(out / "allocation_sequential.csv", [(label, seq)])
        write_costs(out / "costs_sequential.csv", [(label, seq)])
        print(f"sequential total {seq.total:.6g} $/yr")
    print(f"{label} ({SCENARIO_LABELS[scenario]}): total {report.total:.6g} $/yr")
    return 0


def cmd_scenarios(args) -> int:
    cfg, out = _prepare(args)
    results = run_scenarios(cfg, args.scenario or (1, 2, 3, 4), out)
    for r in results:
        status = f"{r.report.total:.6g} $/yr" if r.ok else f"failed: {r.error}"
        print(f"S{r.scenario} ({SCENARIO_LABELS[r.scenario]}): {status}")
    return 0 if all(r.ok for r in results) else 1


def cmd_sweep(args) -> int:
    cfg, out = _prepare(args)
    rows = sweep_storage_penetration(cfg, args.caps, out)
    for cap, rep in rows:
        print(f"storage cap {cap:g}: {rep.plan.total_storage_kwh:g} kWh, total {rep.total:.6g} $/yr")
    return 0


def cmd_voltage_cdf(args) -> int:
    cfg, out = _prepare(args)
    runner = ScenarioRunner(cfg)
    scenario = (args.scenario or [2])[0]
    report = runner.run(scenario)
    bus = args.bus
    if bus is None:
        base = solve_power_flow(runner.net)
        bus = runner.net.bus_ids[int(np.argmin(base.v_mag))]
    path = out / f"voltage_cdf_S{scenario}_bus{bus}.csv"
    emit_voltage_cdf(report, runner.net, bus, path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="adnplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("powerflow", parents=[common], help="solve the base-case power flow") \
        .set_defaults(func=cmd_powerflow)

    p = sub.add_parser("dispatch", parents=[common], help="optimise storage for a fixed plan")
    p.add_argument("--plan", type=Path, help="allocation CSV (site,device,capacity)")
    p.set_defaults(func=cmd_dispatch)

    for name, func, helptext in (
        ("plan", cmd_plan, "run the bi-level planner for one scenario"),
        ("scenarios", cmd_scenarios, "run and compare scenarios"),
        ("voltage-cdf", cmd_voltage_cdf, "voltage CDF of one bus after planning"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--scenario", type=int, action="append", choices=[1, 2, 3, 4])
        p.set_defaults(func=func)
        if name == "plan":
            p.add_argument("--sequential", action="store_true",
                           help="also run the two-stage baseline")
        if name == "voltage-cdf":
            p.add_argument("--bus", type=int, help="bus id (default: worst base-case bus)")

    p = sub.add_parser("sweep", parents=[common], help="storage penetration sweep")
    p.add_argument("--caps", type=float, nargs="+", default=[0.1, 0.2, 0.3])
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
