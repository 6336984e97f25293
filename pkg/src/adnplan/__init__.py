"""Joint siting and sizing of wind, PV and battery storage in radial distribution networks."""

from .dispatch import optimize_dispatch
from .economics import CostBreakdown, EconParams, Tariff, annual_cost
from .grid import RadialNetwork, pge69, solve_power_flow
from .plan import CandidateSite, EncodingSpec, Plan, decode, encode
from .planner import PlanningProblem, PlanningReport, plan, sequential_baseline

__version__ = "0.1.0"
