"""Run configuration: YAML loading, validation and input-file readers.

Every key carries its unit in the name. Keys missing from a config file take
the defaults below; ``echo`` labels each value as user-supplied, a
published case-study value, or a placeholder default of this package.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import ibpso
from .dispatch import LowerConfig, OperatingContext, StorageDefaults
from .economics import EconParams, Tariff
from .grid import RadialNetwork, bundled_data_path, read_network
from .planner import PenetrationCaps, PlanningProblem
from .plan import CandidateSite, EncodingSpec
from .sequences import (
    N_HOURS,
    N_SEASONS,
    IncompleteProfileError,
    SlotWeather,
    hourly_expected_profiles,
    profile_arrays,
)
from .uncertainty import WeibullParams, WTCurve

DEFAULTS: dict = {
    "network": {
        "branches_csv": None,  # None selects the bundled 69-bus feeder
        "buses_csv": None,
        "slack_bus": 1,
        "v_base_kv": 12.66,
        "s_base_kva": 10000.0,
        "v_min_pu": 0.90,
        "v_max_pu": 1.05,
    },
    "data": {
        "tariff_csv": None,
        "weather_csv": None,
        "load_profile_csv": None,
        "scenario1_price_per_kwh": 0.05,
    },
    "turbine": {"v_in_mps": 3.0, "v_rated_mps": 12.0, "v_out_mps": 25.0},
    "sequence_step_frac": 0.01,
    "dg_power_factor": 1.0,
    "economics": {
        "c_wd_per_kw": 1230.0,
        "c_pv_per_kw": 1540.0,
        "z_per_kwh": 0.015,
        "y_frac_per_yr": 0.015,
        "c_f": 0.0802,
        "c_g": 0.071,
        "c_e": 0.037,
        "c_st_inse_per_kw": 232.0,
        "c_st_inss_per_kwh": 180.0,
        "c_st_om_per_kwh_yr": 21.0,
    },
    "storage": {
        "soc_min_frac": 0.1,
        "soc_max_frac": 0.9,
        "soc_init_frac": 0.5,
        "eta_ch": 0.9,
        "eta_dc": 0.9,
        "kw_per_kwh": 0.25,
    },
    "caps": {"dg_frac": 0.30, "storage_frac": 0.10, "reference_load_kw": 3715.0},
    "encoding": {
        "sites": [49, 50, 61, 64],
        "dg_bits": 5,
        "dg_unit_kw": 50.0,
        "storage_bits": 3,
        "storage_unit_kwh": 50.0,
        "power_bits": 3,
        "power_unit_kw": 25.0,
    },
    "upper_swarm": {"n_particles": 20, "max_iter": 30, "w_max": 0.9, "w_min": 0.4,
                    "c1": 2.0, "c2": 2.0, "v_clamp": 6.0, "low_thr": 0.99, "up_thr": 1.01},
    "lower_swarm": {"n_particles": 20, "max_iter": 30},
    "lower": {"bits_per_hour": 3, "polish_rounds": 50},
    "clamp_export": False,
    "seed": 0,
    "output_dir": "out",
}

# values taken from the published case study; everything else is a placeholder
PUBLISHED = {
    "network.v_base_kv", "data.scenario1_price_per_kwh", "caps.dg_frac", "caps.storage_frac",
    "caps.reference_load_kw", "encoding.sites", "upper_swarm.w_max", "upper_swarm.w_min",
    "upper_swarm.low_thr", "upper_swarm.up_thr",
    *(f"economics.{k}" for k in DEFAULTS["economics"]),
}

FILE_KEYS = ("network.branches_csv", "network.buses_csv", "data.tariff_csv",
             "data.weather_csv", "data.load_profile_csv")

BUNDLED = {
    "network.branches_csv": "pge69_branches.csv",
    "network.buses_csv": "pge69_buses.csv",
    "data.tariff_csv": "default_tariff.csv",
    "data.weather_csv": "default_weather.csv",
    "data.load_profile_csv": "default_load_profile.csv",
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


def _merge(defaults: dict, user: dict, prefix: str, errors: list[str]) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            errors.append(f"{path}: unknown key")
        elif isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected a mapping")
            else:
                out[key] = _merge(defaults[key], value, path + ".", errors)
        else:
            out[key] = value
    return out


def _get(tree: dict, path: str):
    node = tree
    for part in path.split("."):
        node = node[part]
    return node


def _set(tree: dict, path: str, value) -> None:
    *head, last = path.split(".")
    node = tree
    for part in head:
        node = node[part]
    node[last] = value


def _flatten(tree: dict, prefix: str = ""):
    for key, value in tree.items():
        if isinstance(value, dict):
            yield from _flatten(value, f"{prefix}{key}.")
        else:
            yield f"{prefix}{key}", value


@dataclass
class RunConfig:
    values: dict
    user_keys: frozenset
    source: Path | None = None

    def __getitem__(self, path: str):
        return _get(self.values, path)

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def with_overrides(self, **flat) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``{"caps.storage_frac": 0.2}``."""
        values = copy.deepcopy(self.values)
        for path, value in flat.items():
            _set(values, path.replace("__", "."), value)
        return RunConfig(values, self.user_keys | set(flat), self.source)

    def echo(self) -> list[str]:
        lines = []
        for path, value in _flatten(self.values):
            if path in self.user_keys:
                tag = "user"
            elif path in PUBLISHED:
                tag = "published case-study value"
            else:
                tag = "package default (not from the case study)"
            lines.append(f"{path} = {value!r}  # {tag}")
        return lines

    # -- builders ------------------------------------------------------------

    def network(self) -> RadialNetwork:
        n = self.values["network"]
        return read_network(
            n["branches_csv"], n["buses_csv"], slack_bus=n["slack_bus"], v_base=n["v_base_kv"],
            s_base=n["s_base_kva"], v_min=n["v_min_pu"], v_max=n["v_max_pu"],
        )

    def curve(self) -> WTCurve:
        t = self.values["turbine"]
        return WTCurve(t["v_in_mps"], t["v_rated_mps"], t["v_out_mps"], 1.0)

    def profiles(self) -> tuple[np.ndarray, np.ndarray]:
        slots = read_weather(self["data.weather_csv"])
        return profile_arrays(
            hourly_expected_profiles(slots, self.curve(), self["sequence_step_frac"])
        )

    def tariff(self) -> Tariff:
        return Tariff.read_csv(self["data.tariff_csv"])

    def load_scale(self) -> np.ndarray:
        return read_load_profile(self["data.load_profile_csv"])

    def storage_defaults(self) -> StorageDefaults:
        s = self.values["storage"]
        return StorageDefaults(s["soc_min_frac"], s["soc_max_frac"], s["eta_ch"], s["eta_dc"],
                               s["soc_init_frac"])

    def context(self, tariff: Tariff | None = None, net: RadialNetwork | None = None,
                profiles: tuple[np.ndarray, np.ndarray] | None = None) -> OperatingContext:
        wt, pv = profiles or self.profiles()
        return OperatingContext(
            net or self.network(), wt, pv, (tariff or self.tariff()).prices, self.load_scale(),
            self["dg_power_factor"], self.storage_defaults(),
        )

    def econ(self) -> EconParams:
        e = self.values["economics"]
        return EconParams(
            e["c_wd_per_kw"], e["c_pv_per_kw"], e["z_per_kwh"], e["y_frac_per_yr"], e["c_f"],
            e["c_g"], e["c_e"], e["c_st_inse_per_kw"], e["c_st_inss_per_kwh"],
            e["c_st_om_per_kwh_yr"],
        )

    def caps(self) -> PenetrationCaps:
        c = self.values["caps"]
        return PenetrationCaps(c["dg_frac"], c["storage_frac"], c["reference_load_kw"])

    def encoding(self, devices: set[str] | None = None) -> EncodingSpec:
        e = self.values["encoding"]
        sites = []
        for s in e["sites"]:
            if isinstance(s, dict):
                sites.append(CandidateSite(int(s["bus"]), s.get("allow_wt", True),
                                           s.get("allow_pv", True), s.get("allow_storage", True)))
            else:
                sites.append(CandidateSite(int(s)))
        spec = EncodingSpec.build(
            sites, dg_bits=e["dg_bits"], dg_unit_kw=e["dg_unit_kw"],
            storage_bits=e["storage_bits"], storage_unit_kwh=e["storage_unit_kwh"],
            power_bits=e["power_bits"], power_unit_kw=e["power_unit_kw"],
            storage_kw_per_kwh=self["storage.kw_per_kwh"],
        )
        return spec if devices is None else spec.restricted(devices)

    def upper_swarm(self) -> ibpso.SwarmConfig:
        return ibpso.SwarmConfig(**self.values["upper_swarm"], seed=self.seed)

    def lower(self) -> LowerConfig:
        swarm = ibpso.SwarmConfig(**self.values["lower_swarm"], seed=self.seed)
        return LowerConfig(swarm, **self.values["lower"])

    def problem(self, ctx: OperatingContext, devices: set[str] | None = None,
                label: str = "") -> PlanningProblem:
        return PlanningProblem(ctx, self.encoding(devices), self.econ(), self.caps(),
                               self.upper_swarm(), self.lower(), self["clamp_export"], label)


def load_config(path=None, **overrides) -> RunConfig:
    """Read, merge with defaults and validate a YAML config.

    Relative file paths resolve against the config file's directory.
    """
    base = Path.cwd()
    user: dict = {}
    if path is not None:
        path = Path(path)
        with open(path) as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        base = path.parent
    errors: list[str] = []
    values = _merge(DEFAULTS, user, "", errors)
    user_keys = {p for p, _ in _flatten(user)} if isinstance(user, dict) else set()
    for key, value in overrides.items():
        _set(values, key.replace("__", "."), value)
        user_keys.add(key.replace("__", "."))

    for key in FILE_KEYS:
        value = _get(values, key)
        if value is None:
            _set(values, key, str(bundled_data_path(BUNDLED[key])))
            continue
        p = Path(value)
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            errors.append(f"{key}: file not found: {p}")
        _set(values, key, str(p))
    _validate_values(values, errors)
    if errors:
        raise ConfigError(errors)
    out = Path(values["output_dir"])
    if path is not None and not out.is_absolute():
        values["output_dir"] = str(base / out)
    return RunConfig(values, frozenset(user_keys), path)


def _validate_values(values: dict, errors: list[str]) -> None:
    def positive(path):
        v = _get(values, path)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
            errors.append(f"{path}: must be a positive number, got {v!r}")

    for path in ("network.v_base_kv", "network.s_base_kva", "sequence_step_frac",
                 "encoding.dg_unit_kw", "encoding.storage_unit_kwh", "encoding.power_unit_kw",
                 "caps.reference_load_kw", "storage.kw_per_kwh"):
        positive(path)
    for path, _ in _flatten(values["economics"], "economics."):
        v = _get(values, path)
        if not isinstance(v, (int, float)) or v < 0:
            errors.append(f"{path}: must be a non-negative number, got {v!r}")
    for path in ("caps.dg_frac", "caps.storage_frac"):
        v = _get(values, path)
        if v is not None and (not isinstance(v, (int, float)) or v < 0):
            errors.append(f"{path}: must be a non-negative fraction or null, got {v!r}")
    for path in ("encoding.dg_bits", "encoding.storage_bits", "lower.bits_per_hour",
                 "upper_swarm.n_particles", "lower_swarm.n_particles"):
        v = _get(values, path)
        if not isinstance(v, int) or v < 1:
            errors.append(f"{path}: must be a positive integer, got {v!r}")
    pb = values["encoding"]["power_bits"]
    if pb is not None and (not isinstance(pb, int) or pb < 1):
        errors.append(f"encoding.power_bits: must be a positive integer or null, got {pb!r}")
    if not isinstance(values["seed"], int):
        errors.append(f"seed: must be an integer, got {values['seed']!r}")
    if not values["encoding"]["sites"]:
        errors.append("encoding.sites: need at least one candidate site")


# -- input files ---------------------------------------------------------------


def read_weather(path) -> list[SlotWeather]:
    """Per-slot Weibull and Beta parameters; raises when any of the 96 slots is missing."""
    slots = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            dark = str(row.get("pv_dark", "")).strip() in ("1", "true", "True")
            slots.append(SlotWeather(
                int(row["season"]), int(row["hour"]),
                WeibullParams(float(row["wind_t"]), float(row["wind_gamma"])),
                None if dark else float(row["pv_mu"]),
                None if dark else float(row["pv_sigma2"]),
                dark,
            ))
    have = {(s.season, s.hour) for s in slots}
    missing = [(s, h) for s in range(1, N_SEASONS + 1) for h in range(N_HOURS)
               if (s, h) not in have]
    if missing:
        raise IncompleteProfileError(
            f"{path}: missing weather parameters for (season, hour): "
            + ", ".join(map(str, missing[:10]))
        )
    return slots


def read_load_profile(path) -> np.ndarray:
    scale = np.full((N_SEASONS, N_HOURS), np.nan)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            scale[int(row["season"]) - 1, int(row["hour"])] = float(row["scale"])
    missing = np.argwhere(np.isnan(scale))
    if missing.size:
        raise IncompleteProfileError(
            f"{path}: missing load scale for (season, hour): "
            + ", ".join(f"({s + 1}, {h})" for s, h in missing[:10])
        )
    if np.any(scale < 0):
        raise ValueError(f"{path}: load scale factors must be non-negative")
    return scale
