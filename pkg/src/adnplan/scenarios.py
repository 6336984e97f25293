"""Scenario orchestration and report files.

Scenario 1 is the flat-price network without any new devices; Scenarios 2-4
plan WT+PV+storage, WT+storage and PV+storage under the time-of-use tariff.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ibpso
from .config import RunConfig
from .dispatch import OperatingContext, write_intraday_report
from .economics import Tariff
from .grid import RadialNetwork
from .planner import PlanningReport, plan, sequential_baseline
from .sequences import N_HOURS, N_SEASONS

log = logging.getLogger(__name__)

SCENARIO_DEVICES = {
    1: set(),
    2: {"wt", "pv", "storage_kwh", "storage_kw"},
    3: {"wt", "storage_kwh", "storage_kw"},
    4: {"pv", "storage_kwh", "storage_kw"},
}
SCENARIO_LABELS = {
    1: "no new devices, flat price",
    2: "WT + PV + storage",
    3: "WT + storage",
    4: "PV + storage",
}


@dataclass
class ScenarioResult:
    scenario: int
    report: PlanningReport | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None


def _fmt(x) -> str:
    return f"{x:.6g}"


class ScenarioRunner:
    """Builds shared inputs once and runs scenarios against them."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.net: RadialNetwork = cfg.network()
        self.profiles = cfg.profiles()
        self.tou = cfg.tariff()
        self.flat = Tariff.flat(cfg["data.scenario1_price_per_kwh"])

    def context(self, scenario: int) -> OperatingContext:
        tariff = self.flat if scenario == 1 else self.tou
        return self.cfg.context(tariff, self.net, self.profiles)

    def problem(self, scenario: int, cfg: RunConfig | None = None):
        cfg = cfg or self.cfg
        label = f"S{scenario}"
        return cfg.problem(self.context(scenario), SCENARIO_DEVICES[scenario], label)

    def run(self, scenario: int, cfg: RunConfig | None = None) -> PlanningReport:
        if scenario not in SCENARIO_DEVICES:
            raise ValueError(f"unknown scenario {scenario}; choose from 1-4")
        return plan(self.problem(scenario, cfg))

    def sequential(self, scenario: int = 2) -> PlanningReport:
        return sequential_baseline(self.problem(scenario))


def run_scenarios(cfg: RunConfig, scenarios=(1, 2, 3, 4), out_dir=None,
                  runner: ScenarioRunner | None = None) -> list[ScenarioResult]:
    """Run each scenario in isolation; a failing scenario is reported, not raised."""
    runner = runner or ScenarioRunner(cfg)
    results = []
    for s in scenarios:
        try:
            results.append(ScenarioResult(s, runner.run(s)))
        except Exception as exc:  # isolate failures per scenario
            log.exception("scenario %s failed", s)
            results.append(ScenarioResult(s, None, f"{type(exc).__name__}: {exc}"))
    if out_dir is not None:
        write_scenario_outputs(results, out_dir, runner)
    return results


def write_scenario_outputs(results: list[ScenarioResult], out_dir, runner: ScenarioRunner):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_costs(out / "costs.csv", [(f"S{r.scenario}", r.report) for r in results if r.ok])
    write_allocation(out / "allocation.csv", [(f"S{r.scenario}", r.report) for r in results
                                              if r.ok])
    for r in results:
        if r.ok:
            write_intraday_report(out / f"dispatch_S{r.scenario}.csv", runner.context(r.scenario),
                                  r.report.plan, r.report.dispatch)
            ibpso.write_history(r.report.history, out / f"convergence_S{r.scenario}.csv")
    failed = [r for r in results if not r.ok]
    if failed:
        with open(out / "errors.txt", "w") as f:
            for r in failed:
                f.write(f"S{r.scenario}: {r.error}\n")


def write_costs(path, rows: list[tuple[str, PlanningReport]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scenario", "c1", "c2", "c3", "total"])
        for label, rep in rows:
            c = rep.cost
            w.writerow([label, _fmt(c.c1), _fmt(c.c2), _fmt(c.c3), _fmt(c.total)])


def write_allocation(path, rows: list[tuple[str, PlanningReport]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scenario", "site", "device", "capacity"])
        for label, rep in rows:
            for bus, device, value in rep.plan.rows():
                w.writerow([label, bus, device, _fmt(value)])


def read_costs(path) -> dict[str, dict[str, float]]:
    with open(path, newline="") as f:
        return {r["scenario"]: {k: float(v) for k, v in r.items() if k != "scenario"}
                for r in csv.DictReader(f)}


def sweep_storage_penetration(cfg: RunConfig, caps, out_dir=None,
                              runner: ScenarioRunner | None = None):
    """One Scenario-2 planning run per storage cap. Returns (cap, report) pairs."""
    runner = runner or ScenarioRunner(cfg)
    rows = []
    for cap in caps:
        sub = cfg.with_overrides(**{"caps.storage_frac": float(cap)})
        rows.append((float(cap), runner.run(2, sub)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "storage_sweep.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["storage_cap_frac", "storage_kwh", "c1", "c2", "c3", "total"])
            for cap, rep in rows:
                c = rep.cost
                w.writerow([_fmt(cap), _fmt(rep.plan.total_storage_kwh), _fmt(c.c1),
                            _fmt(c.c2), _fmt(c.c3), _fmt(c.total)])
    return rows


def voltage_cdf(v_mag: np.ndarray, net: RadialNetwork, bus: int) -> np.ndarray:
    """Empirical CDF ``(voltage, cumulative probability)`` of one bus.

    ``v_mag`` is ``(4, 24, n_bus)``; every representative hour stands for the
    same number of days, so the hours carry equal weight. Tied voltages share
    one row.
    """
    if bus not in net.bus_ids:
        raise KeyError(f"bus {bus} is not in the network")
    v = np.asarray(v_mag)[..., net.index_of(bus)].ravel()
    if v.size != N_SEASONS * N_HOURS:
        raise ValueError(f"expected {N_SEASONS * N_HOURS} hourly voltages, got {v.size}")
    values, counts = np.unique(np.round(v, 12), return_counts=True)
    return np.column_stack([values, np.cumsum(counts) / v.size])


def emit_voltage_cdf(report: PlanningReport, net: RadialNetwork, bus: int, path=None):
    cdf = voltage_cdf(report.dispatch.v_mag, net, bus)
    if path is not None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["voltage_pu", "cumulative_probability"])
            for v, p in cdf:
                w.writerow([_fmt(v), _fmt(p)])
    return cdf


def read_voltage_cdf(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [(float(r["voltage_pu"]), float(r["cumulative_probability"]))
                for r in csv.DictReader(f)]
    return np.array(rows).reshape(-1, 2)


def dominates(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """First-order stochastic dominance of CDF ``a`` over ``b`` (higher voltages).

    Checked at every voltage where either CDF steps: ``F_a(v) <= F_b(v)``.
    """
    grid = np.union1d(a[:, 0], b[:, 0])

    def at(cdf, x):
        k = np.searchsorted(cdf[:, 0], x, side="right")
        return np.where(k == 0, 0.0, cdf[np.maximum(k - 1, 0), 1])

    return bool(np.all(at(a, grid) <= at(b, grid) + tol))
