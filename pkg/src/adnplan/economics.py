"""Annual cost model: investment, operation and maintenance, and grid purchase.

Storage investment pairs the installation cost per kW with the power rating
and the per-kWh cost with the energy capacity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .plan import Plan
from .sequences import N_HOURS, N_SEASONS

DAYS_PER_SEASON = 91


@dataclass(frozen=True)
class EconParams:
    c_wd: float = 1230.0  # $/kW WT investment
    c_pv: float = 1540.0  # $/kW PV investment
    z: float = 0.015  # $/kWh DG operation
    y: float = 0.015  # maintenance per year, fraction of investment
    c_f: float = 0.0802  # WT present-value coefficient
    c_g: float = 0.071  # PV present-value coefficient
    c_e: float = 0.037  # storage present-value coefficient
    c_st_inse: float = 232.0  # $/kW of rated power
    c_st_inss: float = 180.0  # $/kWh of capacity
    c_st_om: float = 21.0  # $ per unit capacity per year

    def __post_init__(self):
        bad = [f.name for f in fields(self) if getattr(self, f.name) < 0]
        if bad:
            raise ValueError(f"economic parameters must be non-negative: {', '.join(bad)}")


@dataclass(frozen=True)
class Tariff:
    """Grid purchase price in $/kWh per (season, hour)."""

    prices: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        if p.shape != (N_SEASONS, N_HOURS):
            raise ValueError(f"tariff must have shape (4, 24), got {p.shape}")
        if np.any(p < 0):
            raise ValueError("tariff prices must be non-negative")
        object.__setattr__(self, "prices", p)

    @classmethod
    def flat(cls, price: float) -> "Tariff":
        return cls(np.full((N_SEASONS, N_HOURS), float(price)))

    @classmethod
    def read_csv(cls, path) -> "Tariff":
        prices = np.full((N_SEASONS, N_HOURS), np.nan)
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                prices[int(row["season"]) - 1, int(row["hour"])] = float(row["price_per_kwh"])
        missing = np.argwhere(np.isnan(prices))
        if missing.size:
            slots = ", ".join(f"({s + 1}, {h})" for s, h in missing[:10])
            raise ValueError(f"tariff file {path} lacks prices for (season, hour): {slots}")
        return cls(prices)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["season", "hour", "price_per_kwh"])
            for s in range(N_SEASONS):
                for h in range(N_HOURS):
                    w.writerow([s + 1, h, f"{self.prices[s, h]:.6g}"])


@dataclass(frozen=True)
class CostBreakdown:
    c1: float
    c2: float
    c3: float

    @property
    def total(self) -> float:
        return self.c1 + self.c2 + self.c3


def investment_cost(plan: Plan, ep: EconParams) -> float:
    return (
        ep.c_f * ep.c_wd * plan.total_wt
        + ep.c_g * ep.c_pv * plan.total_pv
        + ep.c_e * (ep.c_st_inse * plan.total_storage_kw + ep.c_st_inss * plan.total_storage_kwh)
    )


def om_cost(plan: Plan, wt_per_kw: np.ndarray, pv_per_kw: np.ndarray, ep: EconParams) -> float:
    """Fixed maintenance, energy-proportional DG operation and storage upkeep.

    ``wt_per_kw``/``pv_per_kw`` are ``(4, 24)`` expected outputs per kW installed.
    """
    fixed = (ep.c_wd * plan.total_wt + ep.c_pv * plan.total_pv) * ep.y
    energy = plan.total_wt * np.sum(wt_per_kw) + plan.total_pv * np.sum(pv_per_kw)
    return float(fixed + DAYS_PER_SEASON * ep.z * energy + ep.c_st_om * plan.total_storage_kwh)


def purchase_cost(
    load_kw: np.ndarray,
    dg_kw: np.ndarray,
    losses_kw: np.ndarray,
    storage_kw: np.ndarray,
    tariff: Tariff,
    *,
    clamp_export: bool = False,
) -> float:
    """Yearly cost of energy bought from the upstream grid.

    All arrays are ``(4, 24)``: system load, total DG output, network loss and
    net storage draw (charge positive). Exports are credited at the purchase
    price unless ``clamp_export`` is set.
    """
    grid = np.asarray(load_kw) - np.asarray(dg_kw) + np.asarray(losses_kw) + np.asarray(storage_kw)
    if clamp_export:
        grid = np.clip(grid, 0.0, None)
    return float(DAYS_PER_SEASON * np.sum(tariff.prices * grid))


def fluctuating_cost(storage_kw, losses_kw, prices) -> float:
    """Daily cost of losses plus storage draw for one season ($/day)."""
    return float(np.sum(np.asarray(prices) * (np.asarray(losses_kw) + np.asarray(storage_kw))))


def annual_cost(
    plan: Plan,
    load_kw: np.ndarray,
    wt_per_kw: np.ndarray,
    pv_per_kw: np.ndarray,
    losses_kw: np.ndarray,
    storage_kw: np.ndarray,
    tariff: Tariff,
    ep: EconParams,
    *,
    clamp_export: bool = False,
) -> CostBreakdown:
    dg = plan.total_wt * np.asarray(wt_per_kw) + plan.total_pv * np.asarray(pv_per_kw)
    return CostBreakdown(
        investment_cost(plan, ep),
        om_cost(plan, wt_per_kw, pv_per_kw, ep),
        purchase_cost(load_kw, dg, losses_kw, storage_kw, tariff, clamp_export=clamp_export),
    )
