"""Upper level: capacity constraints, nested evaluation and the planning loop.

Every upper-level fitness evaluation decodes a genome into a plan, runs the
full four-season storage dispatch for it and prices the result as an annual
cost. Plans that break a capacity or network limit get a penalty large
enough to rank them behind every feasible plan.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import ibpso
from .dispatch import DispatchResult, LowerConfig, OperatingContext, optimize_dispatch
from .economics import CostBreakdown, EconParams, Tariff, annual_cost
from .grid import solve_power_flow
from .plan import EncodingSpec, Plan, decode

log = logging.getLogger(__name__)

CASE_STUDY_LOAD_KW = 3715.0


@dataclass(frozen=True)
class PenetrationCaps:
    """Installed-capacity limits as fractions of a reference system load.

    The storage cap compares kWh of capacity against kW of load, so a 10 %
    cap on a 3715 kW system allows 371.5 kWh.
    """

    dg_frac: float | None = 0.30
    storage_frac: float | None = 0.10
    reference_load_kw: float = CASE_STUDY_LOAD_KW

    @property
    def dg_limit_kw(self) -> float:
        return np.inf if self.dg_frac is None else self.dg_frac * self.reference_load_kw

    @property
    def storage_limit_kwh(self) -> float:
        return np.inf if self.storage_frac is None else self.storage_frac * self.reference_load_kw


@dataclass(frozen=True)
class CapacityViolation:
    kind: str
    value: float
    limit: float

    @property
    def normalized(self) -> float:
        return (self.value - self.limit) / max(abs(self.limit), 1.0)


def capacity_feasible(
    plan: Plan,
    ctx: OperatingContext,
    caps: PenetrationCaps,
    base_loss: tuple[float, float],
) -> tuple[bool, list[CapacityViolation]]:
    """Check DG totals against load plus base-case loss and the penetration caps.

    ``base_loss`` is the (kW, kVar) loss of the network without any new
    devices.
    """
    net = ctx.net
    p_lo, q_lo = base_loss
    checks = [
        ("dg_active", plan.total_dg, net.total_p_load + p_lo),
        ("dg_reactive", plan.total_dg * ctx.q_per_p, net.total_q_load + q_lo),
        ("dg_penetration", plan.total_dg, caps.dg_limit_kw),
        ("storage_penetration", plan.total_storage_kwh, caps.storage_limit_kwh),
    ]
    for bus, kw in plan.storage_kw.items():
        checks.append((f"storage_rating@{bus}", kw, plan.storage_kwh.get(bus, 0.0)))
    out = [CapacityViolation(k, float(v), float(lim)) for k, v, lim in checks if v > lim + 1e-9]
    return not out, out


@dataclass
class PlanningProblem:
    """Everything one planning run needs."""

    ctx: OperatingContext
    spec: EncodingSpec
    econ: EconParams = field(default_factory=EconParams)
    caps: PenetrationCaps = field(default_factory=PenetrationCaps)
    upper: ibpso.SwarmConfig = field(default_factory=lambda: ibpso.SwarmConfig(20, 30))
    lower: LowerConfig = field(default_factory=LowerConfig)
    clamp_export: bool = False
    label: str = ""
    warm_start: bool = True  # seed one particle with the empty plan
    polish_rounds: int = 20  # local descent on the final best genome

    @property
    def tariff(self) -> Tariff:
        return Tariff(self.ctx.tariff)

    def with_spec(self, spec: EncodingSpec, label: str | None = None) -> "PlanningProblem":
        return replace(self, spec=spec, label=self.label if label is None else label)


@dataclass(frozen=True)
class Evaluation:
    plan: Plan
    cost: CostBreakdown | None
    dispatch: DispatchResult | None
    violations: tuple[CapacityViolation, ...]
    network_ok: bool
    fitness: float

    @property
    def feasible(self) -> bool:
        return not self.violations and self.network_ok


def _add(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + v
    return out


class UpperEvaluator:
    """Genome fitness with a thread-safe cache.

    ``fixed`` is merged into every decoded plan, which lets a second stage
    search storage around frozen DG capacities.
    """

    def __init__(self, problem: PlanningProblem, fixed: Plan | None = None):
        self.problem = problem
        self.fixed = fixed or Plan()
        self._cache: dict[bytes, Evaluation] = {}
        self._lock = threading.Lock()
        ctx = problem.ctx
        p = -ctx.net.p_load
        base = solve_power_flow(ctx.net, p, -ctx.net.q_load)
        self.base_loss = (float(base.p_loss_total), float(base.q_loss_total))
        empty = self._price(Plan())
        self.baseline = empty.cost.total
        self.penalty_weight = 1e3 * max(abs(self.baseline), 1.0)

    def plan_of(self, genome) -> Plan:
        plan = decode(genome, self.problem.spec)
        return Plan(*(_add(getattr(plan, name), getattr(self.fixed, name))
                      for name in ("wt_kw", "pv_kw", "storage_kwh", "storage_kw")))

    def _price(self, plan: Plan) -> Evaluation:
        pr = self.problem
        ctx = pr.ctx
        dispatch = optimize_dispatch(ctx, plan, pr.lower)
        cost = annual_cost(
            plan, ctx.system_load(), ctx.wt_per_kw, ctx.pv_per_kw, dispatch.losses,
            dispatch.schedule.net_power, pr.tariff, pr.econ, clamp_export=pr.clamp_export,
        )
        return Evaluation(plan, cost, dispatch, (), dispatch.feasible, cost.total)

    def evaluate_plan(self, plan: Plan) -> Evaluation:
        ok, violations = capacity_feasible(plan, self.problem.ctx, self.problem.caps,
                                           self.base_loss)
        if not ok:
            # dominated regardless of operation, so skip the lower level
            excess = sum(v.normalized ** 2 for v in violations)
            return Evaluation(plan, None, None, tuple(violations), True,
                              self.penalty_weight * (1.0 + excess))
        ev = self._price(plan)
        if not ev.network_ok:
            net = self.problem.ctx.net
            v = ev.dispatch.v_mag
            excess = float(np.sum(np.clip(net.v_min - v, 0, None) + np.clip(v - net.v_max, 0, None)))
            ev = replace(ev, fitness=self.penalty_weight * (1.0 + excess) + ev.cost.total)
        return ev

    def evaluation(self, genome) -> Evaluation:
        key = np.asarray(genome, dtype=np.int8).tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        ev = self.evaluate_plan(self.plan_of(genome))
        with self._lock:
            self._cache.setdefault(key, ev)
        return ev

    def __call__(self, genome) -> float:
        return self.evaluation(genome).fitness

    @property
    def n_cached(self) -> int:
        return len(self._cache)


@dataclass
class PlanningReport:
    label: str
    plan: Plan
    cost: CostBreakdown
    dispatch: DispatchResult
    history: list[ibpso.IterationRecord]
    genome: np.ndarray
    feasible: bool
    n_evaluations: int = 0
    stages: list["PlanningReport"] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.cost.total


def _report(problem: PlanningProblem, evaluator: UpperEvaluator, result: ibpso.SwarmResult,
            label: str) -> PlanningReport:
    genome = result.best_position
    ev = evaluator.evaluation(genome)
    if not ev.feasible:
        # the empty plan is always admissible; fall back rather than report a broken plan
        zero = np.zeros(problem.spec.width, dtype=np.int8)
        fallback = evaluator.evaluation(zero)
        if fallback.feasible or fallback.fitness < ev.fitness:
            log.warning("%s: best genome infeasible, reporting the empty plan", label)
            genome, ev = zero, fallback
    if ev.cost is None:
        ev = evaluator._price(ev.plan)
    return PlanningReport(label, ev.plan, ev.cost, ev.dispatch, result.history,
                          np.asarray(genome, dtype=np.int8), ev.feasible, result.n_evaluations)


def plan(problem: PlanningProblem, *, evaluator: UpperEvaluator | None = None,
         map_fn=map) -> PlanningReport:
    """Run the outer swarm with one full lower-level optimisation per evaluation."""
    evaluator = evaluator or UpperEvaluator(problem)
    if problem.spec.width == 0:
        ev = evaluator.evaluate_plan(evaluator.fixed)
        result = ibpso.SwarmResult(np.zeros(0, dtype=np.int8), ev.fitness)
        if ev.cost is None:
            ev = evaluator._price(ev.plan)
        return PlanningReport(problem.label, ev.plan, ev.cost, ev.dispatch, [],
                              result.best_position, ev.feasible, 1)
    width = problem.spec.width
    initial = np.zeros((1, width), dtype=np.int8) if problem.warm_start else None
    result = ibpso.run(evaluator, width, problem.upper, map_fn=map_fn, initial=initial)
    if problem.polish_rounds:
        genome, fit, n = polish_genome(evaluator, result.best_position, result.best_fitness,
                                       problem.spec, problem.polish_rounds, map_fn)
        result = replace(result, best_position=genome, best_fitness=fit,
                         n_evaluations=result.n_evaluations + n)
    return _report(problem, evaluator, result, problem.label)


def _field_values(genome: np.ndarray, spec: EncodingSpec) -> list[int]:
    out, pos = [], 0
    for f in spec.fields:
        n = 0
        for b in genome[pos : pos + f.bits]:
            n = (n << 1) | int(b)
        out.append(n)
        pos += f.bits
    return out


def _genome_from_values(values: list[int], spec: EncodingSpec) -> np.ndarray:
    bits = []
    for n, f in zip(values, spec.fields):
        bits.extend((n >> (f.bits - 1 - k)) & 1 for k in range(f.bits))
    return np.array(bits, dtype=np.int8)


def neighbours(genome, spec: EncodingSpec) -> np.ndarray:
    """Single bit flips, one-unit steps per field and one-unit transfers
    between fields of the same device."""
    genome = np.asarray(genome, dtype=np.int8)
    moves = np.repeat(genome[None], genome.size, axis=0)
    idx = np.arange(genome.size)
    moves[idx, idx] ^= 1
    out = [moves]
    values = _field_values(genome, spec)
    tops = [(1 << f.bits) - 1 for f in spec.fields]
    extra = []
    for a, fa in enumerate(spec.fields):
        for step in (-1, 1):
            if 0 <= values[a] + step <= tops[a]:
                v = list(values)
                v[a] += step
                extra.append(v)
        for b, fb in enumerate(spec.fields):
            if b != a and fb.device == fa.device and values[a] > 0 and values[b] < tops[b]:
                v = list(values)
                v[a] -= 1
                v[b] += 1
                extra.append(v)
    if extra:
        out.append(np.stack([_genome_from_values(v, spec) for v in extra]))
    return np.unique(np.concatenate(out), axis=0)


def polish_genome(fitness, genome, fit: float, spec: EncodingSpec, rounds: int, map_fn=map):
    """Steepest descent over :func:`neighbours`. Returns (genome, fitness, evaluations)."""
    best = np.asarray(genome, dtype=np.int8).copy()
    n_evals = 0
    for _ in range(rounds):
        cand = neighbours(best, spec)
        values = np.fromiter(map_fn(fitness, list(cand)), dtype=float)
        n_evals += len(cand)
        k = int(np.argmin(values))
        if values[k] >= fit:
            break
        best, fit = cand[k], float(values[k])
    return best, fit, n_evals


def sequential_baseline(problem: PlanningProblem, *, map_fn=map) -> PlanningReport:
    """Plan DGs without storage, freeze them, then plan storage alone."""
    dg_spec = problem.spec.restricted({"wt", "pv"})
    st_spec = problem.spec.restricted({"storage_kwh", "storage_kw"})
    stage1 = plan(problem.with_spec(dg_spec, f"{problem.label} stage 1"), map_fn=map_fn)
    stage2_problem = problem.with_spec(st_spec, f"{problem.label} stage 2")
    evaluator = UpperEvaluator(stage2_problem, fixed=stage1.plan)
    stage2 = plan(stage2_problem, evaluator=evaluator, map_fn=map_fn)
    best = stage2
    if stage1.feasible and stage1.total < stage2.total:
        # stage 2 can always keep storage at zero; guard against search noise
        best = stage1
    return PlanningReport(problem.label, best.plan, best.cost, best.dispatch,
                          stage1.history + stage2.history, stage2.genome, best.feasible,
                          stage1.n_evaluations + stage2.n_evaluations, [stage1, stage2])


def enumerate_genomes(width: int):
    """All ``2**width`` bit vectors, in counting order (MSB first)."""
    for n in range(1 << width):
        yield np.array([(n >> (width - 1 - k)) & 1 for k in range(width)], dtype=np.int8)

