"""Probabilistic sequences: discretised output distributions and their algebra.

A sequence holds the probability of each power level ``0, q, 2q, ..., Nq``.
Addition-type convolution (ATC) gives the distribution of a sum of independent
outputs; subtraction-type convolution (STC) gives the positive part of a
difference, with all non-positive outcomes collected at level zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .uncertainty import (
    BetaParams,
    OutputDistribution,
    PointMass,
    PVOutputDistribution,
    WeibullParams,
    WTCurve,
    WTOutputDistribution,
    beta_shapes_from_moments,
)

log = logging.getLogger(__name__)

N_SEASONS = 4
N_HOURS = 24
MASS_DEFICIT_WARN = 1e-3


class DegenerateStepError(ValueError):
    pass


class IncompatibleSequenceError(ValueError):
    pass


class IncompleteProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ProbSeq:
    step_q: float
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probability sequence must be a non-empty 1-D array")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if not self.step_q > 0:
            raise ValueError("step size must be positive")
        object.__setattr__(self, "probs", probs)

    @property
    def length(self) -> int:
        """Highest index N (the sequence has N + 1 entries)."""
        return self.probs.size - 1

    @property
    def levels(self) -> np.ndarray:
        return self.step_q * np.arange(self.probs.size)


def discretize(dist: OutputDistribution, q: float, p_max: float | None = None) -> ProbSeq:
    """Bucket a mixed output distribution into a sequence with step ``q``.

    Level 0 collects ``[0, q/2]`` plus any atom at zero, level ``i`` collects
    ``[iq - q/2, iq + q/2]`` and the last level collects the upper tail plus
    any atom at ``p_max``.
    """
    if p_max is None:
        p_max = dist.p_max
    if not q > 0:
        raise DegenerateStepError("step size must be positive")
    if p_max < 0:
        raise ValueError("p_max must be non-negative")
    if p_max == 0:
        return ProbSeq(q, np.array([1.0]))
    if q > p_max:
        raise DegenerateStepError(f"step {q} exceeds the support width {p_max}")

    n = math.ceil(p_max / q - 1e-12)
    edges = (np.arange(n + 1) - 0.5) * q
    edges[0] = 0.0
    edges = np.append(edges, p_max)
    edges[-2] = min(edges[-2], p_max)
    probs = np.array([dist.interval_mass(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])
    for at, mass in dist.atoms.items():
        probs[0 if at <= 0 else (n if at >= p_max else int(round(at / q)))] += mass

    total = probs.sum()
    if abs(1.0 - total) > MASS_DEFICIT_WARN:
        log.warning("discretisation lost %.3g of probability mass; renormalising", 1.0 - total)
    return ProbSeq(q, probs / total)


def expectation(seq: ProbSeq) -> float:
    """Expected power (kW) of a sequence: ``q * sum(i * a(i))``."""
    return float(seq.step_q * np.dot(np.arange(seq.probs.size), seq.probs))


def _check_compatible(a: ProbSeq, b: ProbSeq):
    if not math.isclose(a.step_q, b.step_q, rel_tol=1e-12):
        raise IncompatibleSequenceError(
            f"step sizes differ: {a.step_q} vs {b.step_q}"
        )


def atc(a: ProbSeq, b: ProbSeq) -> ProbSeq:
    """Addition-type convolution."""
    _check_compatible(a, b)
    out = np.convolve(a.probs, b.probs)
    return ProbSeq(a.step_q, np.clip(out, 0.0, None) / out.sum())


def stc(a: ProbSeq, b: ProbSeq) -> ProbSeq:
    """Subtraction-type convolution, negative differences folded into level 0."""
    _check_compatible(a, b)
    nb = b.length
    # corr[k] = sum_j a[j + k - nb] * b[j], i.e. lag (ia - ib) = k - nb
    corr = np.correlate(a.probs, b.probs, mode="full")
    out = np.empty(a.probs.size)
    out[0] = corr[: nb + 1].sum()
    out[1:] = corr[nb + 1 :]
    return ProbSeq(a.step_q, np.clip(out, 0.0, None) / out.sum())


@dataclass(frozen=True)
class SlotWeather:
    """Distribution parameters for one representative hour."""

    season: int
    hour: int
    wind: WeibullParams
    pv_mu: float | None = None
    pv_sigma2: float | None = None
    pv_dark: bool = False

    def __post_init__(self):
        if not self.pv_dark and (self.pv_mu is None or self.pv_sigma2 is None):
            raise ValueError(
                f"slot (season={self.season}, hour={self.hour}) needs PV moments or the dark flag"
            )


@dataclass(frozen=True)
class HourlyExpectation:
    season: int  # 1..4
    hour: int  # 0..23
    e_wt_per_kw: float
    e_pv_per_kw: float


def wt_sequence(curve: WTCurve, wind: WeibullParams, q: float) -> ProbSeq:
    return discretize(WTOutputDistribution(curve, wind), q)


def pv_sequence(slot: SlotWeather, q: float, p_max: float = 1.0) -> ProbSeq:
    if slot.pv_dark:
        return discretize(PointMass(0.0), q, p_max=0.0)
    l1, l2 = beta_shapes_from_moments(slot.pv_mu, slot.pv_sigma2)
    return discretize(PVOutputDistribution(BetaParams(l1, l2, p_max)), q)


def hourly_expected_profiles(
    slots: Mapping[tuple[int, int], SlotWeather] | list[SlotWeather],
    curve: WTCurve | None = None,
    q: float = 0.01,
) -> list[HourlyExpectation]:
    """Expected per-kW WT and PV output for all 96 representative hours.

    The turbine curve is normalised to a 1 kW rating, so ``q`` is a fraction
    of rated power.
    """
    if not isinstance(slots, Mapping):
        slots = {(s.season, s.hour): s for s in slots}
    missing = [
        (s, h)
        for s in range(1, N_SEASONS + 1)
        for h in range(N_HOURS)
        if (s, h) not in slots
    ]
    if missing:
        raise IncompleteProfileError(
            "missing weather parameters for (season, hour): "
            + ", ".join(map(str, missing[:10]))
            + (" ..." if len(missing) > 10 else "")
        )
    curve = curve or WTCurve()
    unit_curve = WTCurve(curve.v_in, curve.v_rated, curve.v_out, 1.0)
    out = []
    for s in range(1, N_SEASONS + 1):
        for h in range(N_HOURS):
            slot = slots[(s, h)]
            e_wt = expectation(wt_sequence(unit_curve, slot.wind, q))
            e_pv = expectation(pv_sequence(slot, q))
            out.append(HourlyExpectation(s, h, min(e_wt, 1.0), min(e_pv, 1.0)))
    return out


def profile_arrays(profiles: list[HourlyExpectation]) -> tuple[np.ndarray, np.ndarray]:
    """Per-kW expectations as two ``(4, 24)`` arrays (WT, PV)."""
    wt = np.zeros((N_SEASONS, N_HOURS))
    pv = np.zeros((N_SEASONS, N_HOURS))
    for p in profiles:
        wt[p.season - 1, p.hour] = p.e_wt_per_kw
        pv[p.season - 1, p.hour] = p.e_pv_per_kw
    return wt, pv
