"""Radial network model and forward-backward sweep power flow.

Everything is solved in per unit on ``s_base_kva`` / ``v_base_kv``; the public
results are in kW, kVar and per-unit voltage. The solver is vectorised over
leading batch dimensions so that many operating points (hours, particles)
share one sweep loop.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e} pu)")
        self.residual = residual


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0  # kW
    q_load: float = 0.0  # kVar


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # ohm
    x: float  # ohm
    i_max: float | None = None  # A


@dataclass
class RadialNetwork:
    buses: list[Bus]
    branches: list[Branch]
    slack_bus: int = 1
    v_base: float = 12.66  # kV
    s_base: float = 10_000.0  # kVA
    v_min: float = 0.90
    v_max: float = 1.05
    _topo: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise TopologyError("bus ids are not unique")
        if any(b.p_load < 0 or b.q_load < 0 for b in self.buses):
            raise ValueError("bus loads must be non-negative")
        if any(br.r < 0 or br.x < 0 for br in self.branches):
            raise ValueError("branch impedances must be non-negative")
        if self.slack_bus not in ids:
            raise TopologyError(f"slack bus {self.slack_bus} not in bus list")
        if len(self.branches) != len(self.buses) - 1:
            raise TopologyError(
                f"a radial network needs {len(self.buses) - 1} branches, got {len(self.branches)}"
            )
        self._topo = self._build_topology()

    # -- topology -----------------------------------------------------------

    def _build_topology(self):
        index = {b.id: k for k, b in enumerate(self.buses)}
        adj = {b.id: [] for b in self.buses}
        for k, br in enumerate(self.branches):
            if br.from_bus not in index or br.to_bus not in index:
                raise TopologyError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
            adj[br.from_bus].append((br.to_bus, k))
            adj[br.to_bus].append((br.from_bus, k))

        parent_branch = {self.slack_bus: None}
        order = [self.slack_bus]
        queue = deque([self.slack_bus])
        while queue:
            u = queue.popleft()
            for v, k in adj[u]:
                if v in parent_branch:
                    if parent_branch[u] != k:
                        raise TopologyError("network contains a loop")
                    continue
                parent_branch[v] = k
                order.append(v)
                queue.append(v)
        if len(order) != len(self.buses):
            raise TopologyError("network is not connected")

        n = len(self.buses)
        nb = len(self.branches)
        # sending/receiving ends oriented away from the slack
        send = np.empty(nb, dtype=int)
        recv = np.empty(nb, dtype=int)
        for bus_id, k in parent_branch.items():
            if k is None:
                continue
            br = self.branches[k]
            other = br.from_bus if br.to_bus == bus_id else br.to_bus
            send[k] = index[other]
            recv[k] = index[bus_id]

        # downstream[k, j] = 1 when bus j is fed through branch k
        downstream = np.zeros((nb, n))
        for bus_id in order[1:]:
            j = index[bus_id]
            node = bus_id
            while parent_branch[node] is not None:
                k = parent_branch[node]
                downstream[k, j] = 1.0
                node = self.buses[send[k]].id
        z_base = self.v_base**2 * 1000.0 / self.s_base
        r_pu = np.array([br.r for br in self.branches]) / z_base
        x_pu = np.array([br.x for br in self.branches]) / z_base
        return {
            "index": index,
            "slack": index[self.slack_bus],
            "send": send,
            "recv": recv,
            "down": downstream,
            "z": r_pu + 1j * x_pu,
            "r": r_pu,
            "x": x_pu,
            "order": [index[b] for b in order],
        }

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index_of(self, bus_id: int) -> int:
        try:
            return self._topo["index"][bus_id]
        except KeyError:
            raise KeyError(f"unknown bus {bus_id}") from None

    @property
    def p_load(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses])

    @property
    def q_load(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses])

    @property
    def total_p_load(self) -> float:
        return float(self.p_load.sum())

    @property
    def total_q_load(self) -> float:
        return float(self.q_load.sum())

    @property
    def i_base(self) -> float:
        """Base current in A for the three-phase base."""
        return self.s_base / (math.sqrt(3) * self.v_base)

    def load_injections(self) -> tuple[np.ndarray, np.ndarray]:
        """Net injections (kW, kVar) of the bare network: minus the loads."""
        return -self.p_load, -self.q_load

    def with_limits(self, v_min: float | None = None, v_max: float | None = None,
                    i_max: dict[int, float] | None = None) -> "RadialNetwork":
        branches = self.branches
        if i_max:
            branches = [
                Branch(b.from_bus, b.to_bus, b.r, b.x, i_max.get(k, b.i_max))
                for k, b in enumerate(self.branches)
            ]
        return RadialNetwork(
            self.buses, branches, self.slack_bus, self.v_base, self.s_base,
            self.v_min if v_min is None else v_min,
            self.v_max if v_max is None else v_max,
        )


def read_network(branches_csv: str | Path, buses_csv: str | Path, **kwargs) -> RadialNetwork:
    """Load a network from a branch CSV (from_bus,to_bus,r_ohm,x_ohm[,i_max_a])
    and a bus CSV (bus,p_kw,q_kvar)."""
    with open(buses_csv, newline="") as f:
        buses = [
            Bus(int(row["bus"]), float(row["p_kw"]), float(row["q_kvar"]))
            for row in csv.DictReader(f)
        ]
    with open(branches_csv, newline="") as f:
        branches = []
        for row in csv.DictReader(f):
            i_max = row.get("i_max_a")
            branches.append(
                Branch(
                    int(row["from_bus"]), int(row["to_bus"]),
                    float(row["r_ohm"]), float(row["x_ohm"]),
                    float(i_max) if i_max not in (None, "") else None,
                )
            )
    return RadialNetwork(buses, branches, **kwargs)


def bundled_data_path(name: str) -> Path:
    return Path(resources.files("adnplan") / "data" / name)


def pge69(**kwargs) -> RadialNetwork:
    """The bundled 69-bus PG&E feeder (12.66 kV, 10 MVA base)."""
    return read_network(
        bundled_data_path("pge69_branches.csv"),
        bundled_data_path("pge69_buses.csv"),
        **kwargs,
    )


@dataclass
class PowerFlowResult:
    """Converged operating point. Arrays carry any leading batch dimensions."""

    v: np.ndarray  # complex pu, (..., n_bus)
    branch_i: np.ndarray  # complex pu, (..., n_branch), oriented away from slack
    branch_p: np.ndarray  # kW at sending end
    branch_q: np.ndarray  # kVar at sending end
    p_loss_total: np.ndarray  # kW
    q_loss_total: np.ndarray  # kVar
    slack_p: np.ndarray  # kW
    slack_q: np.ndarray  # kVar
    iterations: int

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def branch_i_mag(self) -> np.ndarray:
        return np.abs(self.branch_i)


def _as_injection(net: RadialNetwork, values, default) -> np.ndarray:
    if values is None:
        return default
    arr = np.asarray(values, dtype=float)
    if arr.shape[-1] != len(net.buses):
        raise ValueError(f"injection vector needs {len(net.buses)} entries, got {arr.shape[-1]}")
    return arr


def _flows_from_voltages(net: RadialNetwork, v: np.ndarray):
    t = net._topo
    i_br = (v[..., t["send"]] - v[..., t["recv"]]) / t["z"]
    return i_br


def _assemble(net: RadialNetwork, v, i_br, iterations) -> PowerFlowResult:
    t = net._topo
    sb = net.s_base
    s_send = v[..., t["send"]] * np.conj(i_br)
    i2 = np.abs(i_br) ** 2
    root = t["send"] == t["slack"]
    s_slack = v[..., t["slack"], None] * np.conj(i_br[..., root])
    return PowerFlowResult(
        v=v,
        branch_i=i_br,
        branch_p=s_send.real * sb,
        branch_q=s_send.imag * sb,
        p_loss_total=(i2 * t["r"]).sum(-1) * sb,
        q_loss_total=(i2 * t["x"]).sum(-1) * sb,
        slack_p=s_slack.real.sum(-1) * sb,
        slack_q=s_slack.imag.sum(-1) * sb,
        iterations=iterations,
    )


def solve_power_flow(
    net: RadialNetwork,
    p_inj=None,
    q_inj=None,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
    v_slack: float = 1.0,
) -> PowerFlowResult:
    """Forward-backward sweep for net bus injections (generation minus load).

    ``p_inj``/``q_inj`` are kW/kVar per bus, optionally with leading batch
    dimensions; the slack entry is ignored. ``None`` means the bare loads.
    Each sweep accumulates branch currents from the leaves towards the slack
    (backward) and then recomputes voltage drops from the slack outwards
    (forward). The starting profile is flat.
    """
    t = net._topo
    p0, q0 = net.load_injections()
    p = _as_injection(net, p_inj, p0)
    q = _as_injection(net, q_inj, q0)
    p, q = np.broadcast_arrays(p, q)
    s_inj = (p + 1j * q) / net.s_base
    s_inj = s_inj.copy()
    s_inj[..., t["slack"]] = 0.0

    down = t["down"]
    z = t["z"]
    path_z = (down * z[:, None])  # (n_branch, n_bus): impedance of path slack->bus
    v = np.full(s_inj.shape, v_slack, dtype=complex)
    residual = math.inf
    for it in range(1, max_iter + 1):
        i_bus = np.conj(s_inj / v)  # injected current
        i_br = -(i_bus @ down.T)  # backward: branch current = downstream draw
        v_new = v_slack - i_br @ path_z  # forward: accumulate drops
        residual = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if residual < tol:
            break
    else:
        raise DivergenceError(f"sweep did not converge in {max_iter} iterations", residual)
    if np.any(np.abs(v) <= 0) or not np.all(np.isfinite(v)):
        raise DivergenceError("sweep produced non-physical voltages", residual)
    return _assemble(net, v, _flows_from_voltages(net, v), it)


@dataclass(frozen=True)
class Violation:
    kind: str  # "undervoltage", "overvoltage", "overcurrent"
    element: int  # bus id or branch index
    value: float
    limit: float
    batch_index: tuple = ()


def check_limits(result: PowerFlowResult, net: RadialNetwork) -> list[Violation]:
    """Bus voltages outside ``[v_min, v_max]`` and branches above ``i_max``."""
    out: list[Violation] = []
    vm = result.v_mag
    ids = net.bus_ids
    for idx in zip(*np.nonzero(vm < net.v_min - 1e-12)):
        out.append(Violation("undervoltage", ids[idx[-1]], float(vm[idx]), net.v_min, idx[:-1]))
    for idx in zip(*np.nonzero(vm > net.v_max + 1e-12)):
        out.append(Violation("overvoltage", ids[idx[-1]], float(vm[idx]), net.v_max, idx[:-1]))
    amps = result.branch_i_mag * net.i_base
    for k, br in enumerate(net.branches):
        if br.i_max is None:
            continue
        a = amps[..., k]
        for idx in zip(*np.nonzero(np.atleast_1d(a > br.i_max))):
            val = float(np.atleast_1d(a)[idx])
            out.append(Violation("overcurrent", k, val, br.i_max, idx if a.ndim else ()))
    return out


def limit_excess(result: PowerFlowResult, net: RadialNetwork) -> np.ndarray:
    """Summed per-unit limit violations, reduced over buses and branches."""
    vm = result.v_mag
    ex = np.clip(net.v_min - vm, 0, None).sum(-1) + np.clip(vm - net.v_max, 0, None).sum(-1)
    i_max = np.array([np.inf if b.i_max is None else b.i_max for b in net.branches])
    if np.isfinite(i_max).any():
        amps = result.branch_i_mag * net.i_base
        ex = ex + (np.clip(amps - i_max, 0, None) / np.where(np.isfinite(i_max), i_max, 1.0)).sum(-1)
    return ex


def balance_residual(result: PowerFlowResult, net: RadialNetwork, p_inj=None, q_inj=None):
    """System-wide active/reactive balance mismatch (kW, kVar).

    Slack supply and losses are re-derived from the result's voltages through
    the branch impedances, so inconsistent voltages show up as a mismatch.
    """
    t = net._topo
    p0, q0 = net.load_injections()
    p = _as_injection(net, p_inj, p0).copy()
    q = _as_injection(net, q_inj, q0).copy()
    p[..., t["slack"]] = 0.0
    q[..., t["slack"]] = 0.0
    check = _assemble(net, result.v, _flows_from_voltages(net, result.v), result.iterations)
    dp = check.slack_p + p.sum(-1) - check.p_loss_total
    dq = check.slack_q + q.sum(-1) - check.q_loss_total
    return dp, dq


def branch_flow_residuals(result: PowerFlowResult, net: RadialNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch residuals of the voltage-drop and complex-flow relations (pu).

    Returns ``(|Ui^2 - Uj^2 - 2(rP + xQ) + (r^2 + x^2) I^2|, |I^2 Ui^2 - P^2 - Q^2|)``.
    """
    t = net._topo
    sb = net.s_base
    ui = np.abs(result.v[..., t["send"]])
    uj = np.abs(result.v[..., t["recv"]])
    pp = result.branch_p / sb
    qq = result.branch_q / sb
    i2 = np.abs(result.branch_i) ** 2
    r, x = t["r"], t["x"]
    drop = np.abs(ui**2 - uj**2 - 2 * (r * pp + x * qq) + (r**2 + x**2) * i2)
    flow = np.abs(i2 * ui**2 - pp**2 - qq**2)
    return drop, flow
