"""Probability models for wind-turbine and photovoltaic output.

Wind speed is Weibull distributed and is pushed through the piecewise-linear
turbine curve, which produces a *mixed* output distribution: a continuous
density on the ramp plus point masses at zero (calm or cut-out) and at rated
power (plateau). PV output follows a Beta law scaled to the panel rating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class ParameterDomainError(ValueError):
    """A distribution parameter lies outside its admissible domain."""


class InfeasibleMomentsError(ValueError):
    """Mean/variance pair that no Beta distribution can realise."""


@dataclass(frozen=True)
class WeibullParams:
    shape_t: float
    scale_gamma: float  # m/s

    def __post_init__(self):
        if not (self.shape_t > 0 and self.scale_gamma > 0):
            raise ParameterDomainError(
                f"Weibull parameters must be positive, got t={self.shape_t}, "
                f"gamma={self.scale_gamma}"
            )

    def cdf(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        return -np.expm1(-((v / self.scale_gamma) ** self.shape_t))

    def survival(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        return np.exp(-((v / self.scale_gamma) ** self.shape_t))


@dataclass(frozen=True)
class WTCurve:
    v_in: float = 3.0
    v_rated: float = 12.0
    v_out: float = 25.0
    p_rated: float = 1.0  # kW

    def __post_init__(self):
        if not (0 < self.v_in < self.v_rated < self.v_out):
            raise ParameterDomainError(
                "turbine curve needs 0 < v_in < v_rated < v_out, got "
                f"({self.v_in}, {self.v_rated}, {self.v_out})"
            )
        if not self.p_rated > 0:
            raise ParameterDomainError("p_rated must be positive")

    @property
    def h_ratio(self) -> float:
        return self.v_rated / self.v_in - 1.0

    def speed_at(self, p):
        """Inverse of the ramp: wind speed producing output ``p`` (kW)."""
        return self.v_in * (1.0 + self.h_ratio * np.asarray(p, dtype=float) / self.p_rated)


@dataclass(frozen=True)
class BetaParams:
    lambda1: float
    lambda2: float
    p_max: float = 1.0  # kW

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0 and self.p_max > 0):
            raise ParameterDomainError(
                f"Beta parameters must be positive, got {self.lambda1}, "
                f"{self.lambda2}, p_max={self.p_max}"
            )


@dataclass(frozen=True)
class PVPanelSpec:
    eta_m: float
    area_apv: float  # m^2
    eta_pv: float
    incident_angle_theta: float = 0.0  # rad

    def __post_init__(self):
        for name in ("eta_m", "eta_pv"):
            val = getattr(self, name)
            if not 0 < val <= 1:
                raise ParameterDomainError(f"{name} must lie in (0, 1], got {val}")
        if not self.area_apv > 0:
            raise ParameterDomainError("panel area must be positive")


def weibull_pdf(v, params: WeibullParams):
    """Weibull density of wind speed ``v`` (per m/s)."""
    v = np.asarray(v, dtype=float)
    t, g = params.shape_t, params.scale_gamma
    x = np.maximum(v, 0.0) / g
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = (t / g) * x ** (t - 1.0) * np.exp(-(x**t))
    dens = np.where(v < 0, 0.0, dens)
    return dens if dens.ndim else float(dens)


def wt_power(v, curve: WTCurve):
    """Turbine output (kW) for wind speed ``v``."""
    v = np.asarray(v, dtype=float)
    ramp = (v - curve.v_in) / (curve.v_rated - curve.v_in) * curve.p_rated
    out = np.where(
        (v < curve.v_in) | (v >= curve.v_out),
        0.0,
        np.where(v < curve.v_rated, ramp, curve.p_rated),
    )
    return out if out.ndim else float(out)


def wt_output_pdf(p, curve: WTCurve, params: WeibullParams):
    """Continuous part of the turbine output density (per kW).

    The point masses at 0 and at rated power are not included here; see
    :func:`wt_point_masses`.
    """
    p = np.asarray(p, dtype=float)
    h = curve.h_ratio
    t, g = params.shape_t, params.scale_gamma
    x = curve.speed_at(p) / g
    dens = (t * h * curve.v_in / (g * curve.p_rated)) * x ** (t - 1.0) * np.exp(-(x**t))
    dens = np.where((p < 0) | (p > curve.p_rated), 0.0, dens)
    return dens if dens.ndim else float(dens)


def wt_point_masses(curve: WTCurve, params: WeibullParams) -> tuple[float, float]:
    """Probability of zero output and of rated output, from the Weibull CDF."""
    s_in = float(params.survival(curve.v_in))
    s_rated = float(params.survival(curve.v_rated))
    s_out = float(params.survival(curve.v_out))
    at_zero = (1.0 - s_in) + s_out
    at_rated = s_rated - s_out
    return at_zero, at_rated


def beta_shapes_from_moments(mu: float, sigma2: float) -> tuple[float, float]:
    """Beta shape factors matching mean ``mu`` and variance ``sigma2``."""
    if not 0 < mu < 1:
        raise InfeasibleMomentsError(f"mean must lie in (0, 1), got {mu}")
    limit = mu * (1.0 - mu)
    if not 0 < sigma2 < limit:
        raise InfeasibleMomentsError(
            f"variance {sigma2} must lie in (0, mu(1-mu)={limit})"
        )
    k = limit / sigma2 - 1.0
    return mu * k, (1.0 - mu) * k


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def pv_output_pdf(p, params: BetaParams):
    """PV output density (per kW), a Beta law on ``[0, p_max]``."""
    p = np.asarray(p, dtype=float)
    a, b = params.lambda1, params.lambda2
    u = p / params.p_max
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        log_d = special.xlogy(a - 1.0, uc) + special.xlog1py(b - 1.0, -uc) - _log_beta(a, b)
    dens = np.exp(log_d) / params.p_max
    dens = np.where(inside, np.nan_to_num(dens, nan=0.0), 0.0)
    return dens if dens.ndim else float(dens)


def pv_power_from_irradiance(xi, spec: PVPanelSpec):
    """Panel output in kW for irradiance ``xi`` in W/m^2."""
    xi = np.asarray(xi, dtype=float)
    watts = xi * spec.eta_m * spec.area_apv * spec.eta_pv * math.cos(spec.incident_angle_theta)
    out = watts / 1000.0
    return out if out.ndim else float(out)


class OutputDistribution:
    """A mixed distribution on ``[0, p_max]``: continuous density plus atoms.

    Subclasses provide :meth:`interval_mass` for the continuous part; atoms
    are a mapping ``power -> probability`` and may only sit at 0 or ``p_max``.
    """

    p_max: float
    atoms: dict[float, float]

    def density(self, p):
        raise NotImplementedError

    def interval_mass(self, lo: float, hi: float) -> float:
        raise NotImplementedError


class WTOutputDistribution(OutputDistribution):
    def __init__(self, curve: WTCurve, params: WeibullParams):
        self.curve = curve
        self.params = params
        self.p_max = curve.p_rated
        zero, rated = wt_point_masses(curve, params)
        self.atoms = {0.0: zero, curve.p_rated: rated}

    def density(self, p):
        return wt_output_pdf(p, self.curve, self.params)

    def interval_mass(self, lo, hi):
        lo = min(max(lo, 0.0), self.p_max)
        hi = min(max(hi, 0.0), self.p_max)
        if hi <= lo:
            return 0.0
        s = self.params.survival
        return float(s(self.curve.speed_at(lo)) - s(self.curve.speed_at(hi)))


class PVOutputDistribution(OutputDistribution):
    def __init__(self, params: BetaParams):
        self.params = params
        self.p_max = params.p_max
        self.atoms = {}

    def density(self, p):
        return pv_output_pdf(p, self.params)

    def interval_mass(self, lo, hi):
        a, b = self.params.lambda1, self.params.lambda2
        lo = min(max(lo / self.p_max, 0.0), 1.0)
        hi = min(max(hi / self.p_max, 0.0), 1.0)
        if hi <= lo:
            return 0.0
        return float(special.betainc(a, b, hi) - special.betainc(a, b, lo))


class PointMass(OutputDistribution):
    """Degenerate output, e.g. PV during dark hours (all mass at 0)."""

    def __init__(self, at: float = 0.0, p_max: float = 0.0):
        self.p_max = max(p_max, at)
        self.atoms = {float(at): 1.0}

    def density(self, p):
        return np.zeros_like(np.asarray(p, dtype=float))

    def interval_mass(self, lo, hi):
        return 0.0
