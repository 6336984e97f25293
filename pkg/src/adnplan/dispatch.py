"""Lower level: storage state of charge, schedule checks and daily dispatch.

Each season's representative day is optimised on its own. A schedule holds
one signed power per storage unit and hour (charge positive, discharge
negative). The search runs the binary swarm over per-hour level codes; every
decoded candidate is repaired onto the state-of-charge box and the
end-of-day balance before its cost is computed, and network losses come from
exact power-flow solves cached per (hour, set-point).
"""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import ibpso
from .grid import RadialNetwork, limit_excess, solve_power_flow
from .plan import Plan
from .sequences import N_HOURS, N_SEASONS

log = logging.getLogger(__name__)

SOC_TOL = 1e-6  # kWh


@dataclass(frozen=True)
class StorageUnit:
    bus: int
    energy_capacity: float  # kWh
    power_rating: float  # kW
    soc_min_frac: float = 0.1
    soc_max_frac: float = 0.9
    eta_ch: float = 0.9
    eta_dc: float = 0.9
    soc_init_frac: float = 0.5

    def __post_init__(self):
        if not 0 <= self.soc_min_frac < self.soc_max_frac <= 1:
            raise ValueError("need 0 <= soc_min_frac < soc_max_frac <= 1")
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dc <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.energy_capacity < 0 or self.power_rating < 0:
            raise ValueError("capacity and rating must be non-negative")
        if not self.soc_min_frac <= self.soc_init_frac <= self.soc_max_frac:
            raise ValueError("initial state of charge lies outside the allowed band")

    @property
    def soc_min(self) -> float:
        return self.soc_min_frac * self.energy_capacity

    @property
    def soc_max(self) -> float:
        return self.soc_max_frac * self.energy_capacity

    @property
    def soc_init(self) -> float:
        return self.soc_init_frac * self.energy_capacity

    def energy_delta(self, p):
        """Change of stored energy over one hour at signed power ``p``."""
        p = np.asarray(p, dtype=float)
        return np.where(p > 0, self.eta_ch * p, p / self.eta_dc)

    def power_for_delta(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(e > 0, e / self.eta_ch, e * self.eta_dc)


@dataclass(frozen=True)
class StorageDefaults:
    """Operating parameters applied to every storage unit a plan installs."""

    soc_min_frac: float = 0.1
    soc_max_frac: float = 0.9
    eta_ch: float = 0.9
    eta_dc: float = 0.9
    soc_init_frac: float = 0.5

    def units_for(self, plan: Plan) -> list[StorageUnit]:
        return [
            StorageUnit(bus, kwh, plan.storage_kw.get(bus, 0.0), self.soc_min_frac,
                        self.soc_max_frac, self.eta_ch, self.eta_dc, self.soc_init_frac)
            for bus, kwh in sorted(plan.storage_kwh.items())
        ]


@dataclass
class DispatchSchedule:
    """Signed storage power, ``p_e[season, hour, unit]`` in kW."""

    units: list[StorageUnit]
    p_e: np.ndarray

    @classmethod
    def zeros(cls, units: list[StorageUnit]) -> "DispatchSchedule":
        return cls(list(units), np.zeros((N_SEASONS, N_HOURS, len(units))))

    @property
    def net_power(self) -> np.ndarray:
        """Total storage draw per (season, hour)."""
        return self.p_e.sum(-1)

    @property
    def charge(self) -> np.ndarray:
        return np.clip(self.p_e, 0, None).sum(-1)

    @property
    def discharge(self) -> np.ndarray:
        return np.clip(-self.p_e, 0, None).sum(-1)


def soc_trajectory(levels, unit: StorageUnit) -> np.ndarray:
    """Stored energy (kWh) at the 25 hour boundaries of one day."""
    levels = np.asarray(levels, dtype=float)
    deltas = unit.energy_delta(levels)
    return unit.soc_init + np.concatenate([[0.0], np.cumsum(deltas)])


@dataclass(frozen=True)
class ScheduleViolation:
    kind: str  # "power", "soc", "end_of_day"
    hour: int
    value: float
    limit: float


def validate_schedule(levels, unit: StorageUnit, tol: float = SOC_TOL) -> list[ScheduleViolation]:
    out = []
    levels = np.asarray(levels, dtype=float)
    for h, p in enumerate(levels):
        if abs(p) > unit.power_rating + 1e-9:
            out.append(ScheduleViolation("power", h, float(p), unit.power_rating))
    soc = soc_trajectory(levels, unit)
    for h in range(1, soc.size):
        if soc[h] < unit.soc_min - tol:
            out.append(ScheduleViolation("soc", h, float(soc[h]), unit.soc_min))
        elif soc[h] > unit.soc_max + tol:
            out.append(ScheduleViolation("soc", h, float(soc[h]), unit.soc_max))
    if abs(soc[-1] - soc[0]) > tol:
        out.append(ScheduleViolation("end_of_day", levels.size, float(soc[-1]), float(soc[0])))
    return out


# -- level encoding ----------------------------------------------------------


def level_values(bits: int, rating: float) -> np.ndarray:
    """Power for each code: ``2**bits - 1`` uniform levels from -rating to
    +rating (zero included); the top code repeats +rating."""
    if bits < 2:
        raise ValueError("need at least two bits per hour")
    n_levels = (1 << bits) - 1
    vals = -rating + 2.0 * rating * np.arange(n_levels) / (n_levels - 1)
    return np.append(vals, rating)


def codes_from_bits(bits: np.ndarray, width: int) -> np.ndarray:
    """Group bit columns into integer codes, most significant bit first."""
    bits = np.asarray(bits, dtype=np.int64)
    shaped = bits.reshape(bits.shape[:-1] + (-1, width))
    weights = 1 << np.arange(width - 1, -1, -1)
    return shaped @ weights


def repair(p: np.ndarray, unit: StorageUnit) -> np.ndarray:
    """Project candidate schedules ``(n, 24)`` onto the feasible set.

    A forward pass shortens any hour that would push the state of charge out
    of its band; a backward pass then restores the end-of-day balance by
    adjusting the latest hours first, within each hour's power limit and the
    headroom of all later states.
    """
    p = np.array(p, dtype=float, copy=True)
    n, hours = p.shape
    e = unit.energy_delta(p)
    lo, hi, s0 = unit.soc_min, unit.soc_max, unit.soc_init
    soc = np.empty((n, hours + 1))
    soc[:, 0] = s0
    for h in range(hours):
        e[:, h] = np.clip(e[:, h], lo - soc[:, h], hi - soc[:, h])
        soc[:, h + 1] = soc[:, h] + e[:, h]

    e_min = unit.energy_delta(-unit.power_rating)
    e_max = unit.energy_delta(unit.power_rating)
    need = soc[:, -1] - s0  # >0: surplus to remove, <0: deficit to add
    for h in range(hours - 1, -1, -1):
        active = np.abs(need) > 1e-12
        if not active.any():
            break
        later = soc[:, h + 1 :]
        down_room = np.minimum(e[:, h] - e_min, (later - lo).min(axis=1))
        up_room = np.minimum(e_max - e[:, h], (hi - later).min(axis=1))
        shift = np.where(need > 0, -np.minimum(need, np.clip(down_room, 0, None)),
                         np.minimum(-need, np.clip(up_room, 0, None)))
        shift = np.where(active, shift, 0.0)
        e[:, h] += shift
        soc[:, h + 1 :] += shift[:, None]
        need = need + shift
    out = unit.power_for_delta(e)
    return np.clip(out, -unit.power_rating, unit.power_rating)


# -- operating context -------------------------------------------------------


@dataclass
class OperatingContext:
    """Everything the lower level needs besides the plan.

    ``wt_per_kw``/``pv_per_kw``/``tariff``/``load_scale`` are ``(4, 24)``
    arrays; loads are the network's nominal bus loads times ``load_scale``.
    """

    net: RadialNetwork
    wt_per_kw: np.ndarray
    pv_per_kw: np.ndarray
    tariff: np.ndarray  # $/kWh
    load_scale: np.ndarray = field(default_factory=lambda: np.ones((N_SEASONS, N_HOURS)))
    dg_power_factor: float = 1.0
    storage: StorageDefaults = field(default_factory=StorageDefaults)

    def __post_init__(self):
        for name in ("wt_per_kw", "pv_per_kw", "tariff", "load_scale"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (N_SEASONS, N_HOURS):
                raise ValueError(f"{name} must have shape (4, 24), got {arr.shape}")
            setattr(self, name, arr)
        if not 0 < self.dg_power_factor <= 1:
            raise ValueError("DG power factor must lie in (0, 1]")

    @property
    def q_per_p(self) -> float:
        pf = self.dg_power_factor
        return float(np.sqrt(1.0 - pf * pf) / pf)

    def system_load(self) -> np.ndarray:
        """Total active load (kW) per (season, hour)."""
        return self.net.total_p_load * self.load_scale

    def dg_output(self, plan: Plan) -> tuple[np.ndarray, np.ndarray]:
        """Expected WT and PV output (kW) per (season, hour)."""
        return plan.total_wt * self.wt_per_kw, plan.total_pv * self.pv_per_kw

    def base_injections(self, plan: Plan, season: int) -> tuple[np.ndarray, np.ndarray]:
        """Net bus injections ``(24, n_bus)`` before storage, for a 0-based season."""
        net = self.net
        scale = self.load_scale[season][:, None]
        p = -net.p_load[None, :] * scale
        q = -net.q_load[None, :] * scale
        for bus, kw in plan.wt_kw.items():
            j = net.index_of(bus)
            p[:, j] += kw * self.wt_per_kw[season]
            q[:, j] += kw * self.wt_per_kw[season] * self.q_per_p
        for bus, kw in plan.pv_kw.items():
            j = net.index_of(bus)
            p[:, j] += kw * self.pv_per_kw[season]
            q[:, j] += kw * self.pv_per_kw[season] * self.q_per_p
        return p, q


_HASH_MULT = np.array([0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9,
                       0xD6E8FEB86659FD93], dtype=np.uint64)


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``np.unique(rows, axis=0)`` via a 1-D integer hash, which sorts far faster."""
    if rows.shape[1] > len(_HASH_MULT):
        return np.unique(rows, axis=0, return_inverse=True)
    ints = np.round(rows * 1e6).astype(np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        h = (ints * _HASH_MULT[: rows.shape[1]]).sum(axis=1)
    _, first, inverse = np.unique(h, return_index=True, return_inverse=True)
    uniq = rows[first]
    if not np.array_equal(uniq[inverse.ravel()], rows):  # hash collision
        return np.unique(rows, axis=0, return_inverse=True)
    return uniq, inverse


class LossTable:
    """Exact power-flow losses for one season, memoised by storage set-point."""

    def __init__(self, net: RadialNetwork, p_base: np.ndarray, q_base: np.ndarray,
                 unit_idx: list[int]):
        self.net = net
        self.p_base = p_base
        self.q_base = q_base
        self.unit_idx = unit_idx
        self._memo: dict[tuple, tuple[float, float]] = {}
        self.n_solves = 0

    def evaluate(self, p_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Losses and limit excess for schedules ``p_e`` of shape ``(n, 24, units)``."""
        n, hours, n_units = p_e.shape
        rows = np.empty((n, hours, 1 + n_units))
        rows[:, :, 0] = np.arange(hours)
        rows[:, :, 1:] = np.round(p_e, 9)
        uniq, inverse = _unique_rows(rows.reshape(-1, 1 + n_units))
        vals = np.empty((len(uniq), 2))
        todo = []
        for k, key in enumerate(map(tuple, uniq.tolist())):
            hit = self._memo.get(key)
            if hit is None:
                todo.append(k)
            else:
                vals[k] = hit
        if todo:
            keys = uniq[todo]
            hrs = keys[:, 0].astype(int)
            p = self.p_base[hrs].copy()
            q = self.q_base[hrs].copy()
            p[:, self.unit_idx] -= keys[:, 1:]
            res = solve_power_flow(self.net, p, q)
            self.n_solves += len(todo)
            vals[todo, 0] = res.p_loss_total
            vals[todo, 1] = limit_excess(res, self.net)
            for k in todo:
                self._memo[tuple(uniq[k].tolist())] = (float(vals[k, 0]), float(vals[k, 1]))
        out = vals[inverse.ravel()].reshape(n, hours, 2)
        return out[..., 0], out[..., 1]


@dataclass
class SeasonResult:
    p_e: np.ndarray  # (24, units)
    f2: float  # $/day
    losses: np.ndarray  # kW per hour
    v_mag: np.ndarray  # (24, n_bus)
    feasible: bool
    history: list = field(default_factory=list)


@dataclass
class DispatchResult:
    schedule: DispatchSchedule
    f2: np.ndarray  # (4,) $/day
    losses: np.ndarray  # (4, 24) kW
    v_mag: np.ndarray  # (4, 24, n_bus)
    feasible: bool
    seasons: list[SeasonResult] = field(default_factory=list)


@dataclass(frozen=True)
class LowerConfig:
    swarm: ibpso.SwarmConfig = ibpso.SwarmConfig(n_particles=20, max_iter=30)
    bits_per_hour: int = 3
    polish_rounds: int = 50


class SeasonProblem:
    """Fitness and decoding for one season's storage schedule."""

    def __init__(self, ctx: OperatingContext, plan: Plan, units: list[StorageUnit],
                 season: int, bits_per_hour: int):
        self.ctx = ctx
        self.units = units
        self.season = season
        self.bits = bits_per_hour
        p, q = ctx.base_injections(plan, season)
        self.table = LossTable(ctx.net, p, q, [ctx.net.index_of(u.bus) for u in units])
        self.price = ctx.tariff[season]
        self.levels = [level_values(bits_per_hour, u.power_rating) for u in units]
        revenue = float(self.price.max() * sum(u.power_rating for u in units) * N_HOURS)
        self.penalty_weight = 10.0 * max(revenue, 1.0)

    @property
    def n_bits(self) -> int:
        return len(self.units) * N_HOURS * self.bits

    def codes(self, genomes: np.ndarray) -> np.ndarray:
        c = codes_from_bits(genomes, self.bits)
        return c.reshape(len(genomes), len(self.units), N_HOURS)

    def schedules(self, codes: np.ndarray) -> np.ndarray:
        """Repaired schedules ``(n, 24, units)`` from level codes ``(n, units, 24)``."""
        out = np.empty((codes.shape[0], N_HOURS, len(self.units)))
        for u, unit in enumerate(self.units):
            out[:, :, u] = repair(self.levels[u][codes[:, u, :]], unit)
        return out

    def cost(self, p_e: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(penalised fitness, F2, losses) for schedules ``(n, 24, units)``."""
        loss, excess = self.table.evaluate(p_e)
        f2 = (self.price * (loss + p_e.sum(-1))).sum(-1)
        mismatch = np.zeros(len(p_e))
        for u, unit in enumerate(self.units):
            soc_end = unit.soc_init + unit.energy_delta(p_e[:, :, u]).sum(-1)
            mismatch += ((soc_end - unit.soc_init) / max(unit.energy_capacity, 1.0)) ** 2
        penalty = self.penalty_weight * (mismatch + excess.sum(-1) ** 2 + (excess.sum(-1) > 0))
        return f2 + penalty, f2, loss

    def fitness(self, genomes: np.ndarray) -> np.ndarray:
        return self.cost(self.schedules(self.codes(genomes)))[0]

    def neighbours(self, codes: np.ndarray) -> np.ndarray:
        """Single-hour level changes, swaps of two hours' levels, opposite
        one-level steps at two hours, and a step of every hour towards idle, per unit.

        The multi-hour moves matter because the end-of-day repair undoes most
        single-hour changes, so single changes alone cannot shrink a cycle.
        """
        n_codes = (1 << self.bits) - 1  # top code duplicates +rating
        idle = n_codes // 2
        codes = np.minimum(codes, n_codes - 1)
        moves = []
        hours = np.arange(N_HOURS)
        for u in range(len(self.units)):
            if np.any(codes[u] != idle):
                cand = codes.copy()
                cand[u] -= np.sign(cand[u] - idle)
                moves.append(cand[None])
            for c in range(n_codes):
                cand = np.repeat(codes[None], N_HOURS, axis=0)
                cand[hours, u, hours] = c
                moves.append(cand[codes[u] != c])
            h1, h2 = np.triu_indices(N_HOURS, 1)
            keep = codes[u, h1] != codes[u, h2]
            h1, h2 = h1[keep], h2[keep]
            cand = np.repeat(codes[None], len(h1), axis=0)
            rows = np.arange(len(h1))
            cand[rows, u, h1] = codes[u, h2]
            cand[rows, u, h2] = codes[u, h1]
            moves.append(cand)
            h1, h2 = np.nonzero(np.not_equal.outer(hours, hours))
            keep = (codes[u, h1] > 0) & (codes[u, h2] < n_codes - 1)
            h1, h2 = h1[keep], h2[keep]
            cand = np.repeat(codes[None], len(h1), axis=0)
            rows = np.arange(len(h1))
            cand[rows, u, h1] -= 1
            cand[rows, u, h2] += 1
            moves.append(cand)
        return np.concatenate(moves)

    def canonical(self, codes: np.ndarray) -> np.ndarray:
        """Codes nearest to the repaired schedule, so later moves act on what actually runs."""
        p = self.schedules(codes[None])[0]
        n_levels = (1 << self.bits) - 1
        out = np.empty_like(codes)
        for u, unit in enumerate(self.units):
            frac = (p[:, u] + unit.power_rating) / (2.0 * unit.power_rating)
            out[u] = np.clip(np.rint(frac * (n_levels - 1)), 0, n_levels - 1)
        return out

    def polish(self, codes: np.ndarray, rounds: int) -> np.ndarray:
        """Steepest descent over :meth:`neighbours` until no move improves the cost."""
        best = codes.copy()
        best_fit = self.cost(self.schedules(best[None]))[0][0]
        snapped = self.canonical(best)
        snapped_fit = self.cost(self.schedules(snapped[None]))[0][0]
        if snapped_fit <= best_fit:
            best, best_fit = snapped, snapped_fit
        for _ in range(rounds):
            cand = self.neighbours(best)
            if not len(cand):
                break
            fit = self.cost(self.schedules(cand))[0]
            k = int(np.argmin(fit))
            if fit[k] < best_fit - 1e-9:
                best, best_fit = cand[k], fit[k]
            else:
                break
        return best


def _season_seed(seed: int, plan: Plan, season: int) -> int:
    tag = repr(sorted(plan.rows())).encode()
    return int(np.random.SeedSequence([seed, zlib.crc32(tag), season]).generate_state(1)[0])


def optimize_season(ctx: OperatingContext, plan: Plan, season: int,
                    cfg: LowerConfig = LowerConfig()) -> SeasonResult:
    """Best feasible 24-hour schedule for a 0-based season index."""
    units = [u for u in ctx.storage.units_for(plan) if u.power_rating > 0 and u.energy_capacity > 0]
    if not units:
        p, q = ctx.base_injections(plan, season)
        res = solve_power_flow(ctx.net, p, q)
        loss = res.p_loss_total
        f2 = float((ctx.tariff[season] * loss).sum())
        ok = bool((limit_excess(res, ctx.net) == 0).all())
        n_units = len(ctx.storage.units_for(plan))
        return SeasonResult(np.zeros((N_HOURS, n_units)), f2, loss, res.v_mag, ok)

    prob = SeasonProblem(ctx, plan, units, season, cfg.bits_per_hour)
    swarm_cfg = ibpso.SwarmConfig(**{**cfg.swarm.__dict__,
                                    "seed": _season_seed(cfg.swarm.seed, plan, season)})
    result = ibpso.run(prob.fitness, prob.n_bits, swarm_cfg, vectorized=True)
    codes = prob.codes(result.best_position[None])[0]
    if cfg.polish_rounds:
        codes = prob.polish(codes, cfg.polish_rounds)
    p_e = prob.schedules(codes[None])[0]

    p, q = ctx.base_injections(plan, season)
    for u, unit in enumerate(units):
        p[:, ctx.net.index_of(unit.bus)] -= p_e[:, u]
    res = solve_power_flow(ctx.net, p, q)
    loss = res.p_loss_total
    f2 = float((prob.price * (loss + p_e.sum(-1))).sum())
    feasible = all(not validate_schedule(p_e[:, u], unit) for u, unit in enumerate(units))
    feasible = feasible and bool((limit_excess(res, ctx.net) == 0).all())
    if not feasible:
        log.warning("season %d: no feasible schedule found", season + 1)

    # re-expand onto every unit the plan installs (zero-rated ones stay idle)
    all_units = ctx.storage.units_for(plan)
    full = np.zeros((N_HOURS, len(all_units)))
    lookup = {u.bus: k for k, u in enumerate(units)}
    for k, u in enumerate(all_units):
        if u.bus in lookup:
            full[:, k] = p_e[:, lookup[u.bus]]
    return SeasonResult(full, f2, loss, res.v_mag, feasible, result.history)


def optimize_dispatch(ctx: OperatingContext, plan: Plan,
                      cfg: LowerConfig = LowerConfig()) -> DispatchResult:
    """Optimise all four seasons independently for a fixed plan."""
    seasons = [optimize_season(ctx, plan, s, cfg) for s in range(N_SEASONS)]
    units = ctx.storage.units_for(plan)
    schedule = DispatchSchedule(units, np.stack([s.p_e for s in seasons]))
    return DispatchResult(
        schedule,
        np.array([s.f2 for s in seasons]),
        np.stack([s.losses for s in seasons]),
        np.stack([s.v_mag for s in seasons]),
        all(s.feasible for s in seasons),
        seasons,
    )


def write_intraday_report(path, ctx: OperatingContext, plan: Plan, result: DispatchResult,
                          season: int | None = None) -> None:
    """Hourly DG output, signed storage power and active loss per season."""
    wt, pv = ctx.dg_output(plan)
    seasons = range(N_SEASONS) if season is None else [season]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["season", "hour", "wt_kw", "pv_kw", "storage_kw_signed", "loss_kw"])
        for s in seasons:
            for h in range(N_HOURS):
                w.writerow([s + 1, h, f"{wt[s, h]:.6g}", f"{pv[s, h]:.6g}",
                            f"{result.schedule.net_power[s, h]:.6g}",
                            f"{result.losses[s, h]:.6g}"])
