"""Siting-and-sizing decisions and their fixed-width bit-vector encoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEVICES = ("wt", "pv", "storage_kwh", "storage_kw")
DEVICE_UNITS = {"wt": "kW", "pv": "kW", "storage_kwh": "kWh", "storage_kw": "kW"}


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSite:
    bus: int
    allow_wt: bool = True
    allow_pv: bool = True
    allow_storage: bool = True


@dataclass
class Plan:
    """Installed capacity per candidate bus. Missing keys mean zero."""

    wt_kw: dict[int, float] = field(default_factory=dict)
    pv_kw: dict[int, float] = field(default_factory=dict)
    storage_kwh: dict[int, float] = field(default_factory=dict)
    storage_kw: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("wt_kw", "pv_kw", "storage_kwh", "storage_kw"):
            d = getattr(self, name)
            if any(v < 0 for v in d.values()):
                raise ValueError(f"{name} capacities must be non-negative")
            # drop zero entries so that equal plans compare equal
            setattr(self, name, {int(k): float(v) for k, v in sorted(d.items()) if v > 0})

    @property
    def total_wt(self) -> float:
        return sum(self.wt_kw.values())

    @property
    def total_pv(self) -> float:
        return sum(self.pv_kw.values())

    @property
    def total_dg(self) -> float:
        return self.total_wt + self.total_pv

    @property
    def total_storage_kwh(self) -> float:
        return sum(self.storage_kwh.values())

    @property
    def total_storage_kw(self) -> float:
        return sum(self.storage_kw.values())

    @property
    def storage_buses(self) -> list[int]:
        return sorted(self.storage_kwh)

    def is_empty(self) -> bool:
        return not (self.wt_kw or self.pv_kw or self.storage_kwh)

    def rows(self):
        """(bus, device, capacity) triples, in a stable order."""
        for bus, v in self.wt_kw.items():
            yield bus, "wt", v
        for bus, v in self.pv_kw.items():
            yield bus, "pv", v
        for bus, v in self.storage_kwh.items():
            yield bus, "storage_kwh", v
        for bus, v in self.storage_kw.items():
            yield bus, "storage_kw", v

    def without_storage(self) -> "Plan":
        return Plan(dict(self.wt_kw), dict(self.pv_kw))


@dataclass(frozen=True)
class Field:
    bus: int
    device: str
    bits: int
    unit: float

    def __post_init__(self):
        if self.device not in DEVICES:
            raise EncodingError(f"unknown device {self.device!r}")
        if self.bits < 1:
            raise EncodingError("field widths must be at least one bit")
        if not self.unit > 0:
            raise EncodingError("unit size must be positive")

    @property
    def max_value(self) -> float:
        return ((1 << self.bits) - 1) * self.unit


@dataclass(frozen=True)
class EncodingSpec:
    """Ordered genome fields; bits within a field are most-significant first.

    ``storage_kw_per_kwh`` sets the power rating of a storage site that has
    no ``storage_kw`` field of its own.
    """

    fields: tuple[Field, ...]
    storage_kw_per_kwh: float = 0.25

    @property
    def width(self) -> int:
        return sum(f.bits for f in self.fields)

    @classmethod
    def build(
        cls,
        sites: list[CandidateSite],
        *,
        dg_bits: int = 5,
        dg_unit_kw: float = 50.0,
        storage_bits: int = 3,
        storage_unit_kwh: float = 50.0,
        power_bits: int | None = 3,
        power_unit_kw: float = 25.0,
        storage_kw_per_kwh: float = 0.25,
    ) -> "EncodingSpec":
        """Fields per site in the order WT, PV, storage energy, storage power.

        ``power_bits=None`` drops the power fields in favour of the fixed
        power/energy ratio.
        """
        fields = []
        for s in sites:
            if s.allow_wt:
                fields.append(Field(s.bus, "wt", dg_bits, dg_unit_kw))
            if s.allow_pv:
                fields.append(Field(s.bus, "pv", dg_bits, dg_unit_kw))
            if s.allow_storage:
                fields.append(Field(s.bus, "storage_kwh", storage_bits, storage_unit_kwh))
                if power_bits:
                    fields.append(Field(s.bus, "storage_kw", power_bits, power_unit_kw))
        return cls(tuple(fields), storage_kw_per_kwh)

    def has_storage(self) -> bool:
        return any(f.device == "storage_kwh" for f in self.fields)

    def restricted(self, devices: set[str]) -> "EncodingSpec":
        return EncodingSpec(
            tuple(f for f in self.fields if f.device in devices), self.storage_kw_per_kwh
        )


def decode(genome, spec: EncodingSpec) -> Plan:
    bits = np.asarray(genome, dtype=np.int64).ravel()
    if bits.size != spec.width:
        raise EncodingError(f"genome has {bits.size} bits, encoding needs {spec.width}")
    values: dict[str, dict[int, float]] = {d: {} for d in DEVICES}
    pos = 0
    for f in spec.fields:
        chunk = bits[pos : pos + f.bits]
        pos += f.bits
        n = 0
        for b in chunk:
            n = (n << 1) | int(b)
        values[f.device][f.bus] = values[f.device].get(f.bus, 0.0) + n * f.unit
    powered = {f.bus for f in spec.fields if f.device == "storage_kw"}
    for bus, kwh in values["storage_kwh"].items():
        if bus not in powered:
            values["storage_kw"][bus] = kwh * spec.storage_kw_per_kwh
    # a rating without an energy capacity is meaningless
    values["storage_kw"] = {
        b: v for b, v in values["storage_kw"].items() if values["storage_kwh"].get(b, 0) > 0
    }
    return Plan(values["wt"], values["pv"], values["storage_kwh"], values["storage_kw"])


def encode(plan: Plan, spec: EncodingSpec) -> np.ndarray:
    """Inverse of :func:`decode` for plans aligned to the field units."""
    lookup = {
        "wt": plan.wt_kw,
        "pv": plan.pv_kw,
        "storage_kwh": plan.storage_kwh,
        "storage_kw": plan.storage_kw,
    }
    out = []
    for f in spec.fields:
        value = lookup[f.device].get(f.bus, 0.0)
        n = value / f.unit
        if abs(n - round(n)) > 1e-9 or round(n) > (1 << f.bits) - 1:
            raise EncodingError(f"{f.device} at bus {f.bus} = {value} is not representable")
        n = int(round(n))
        out.extend((n >> (f.bits - 1 - k)) & 1 for k in range(f.bits))
    return np.array(out, dtype=np.int8)
