"""Binary particle swarm optimisation with chaotic restarts.

Plain sigmoid-transfer BPSO, extended with a population-fitness-variance
(PFV) monitor: when the PFV stops changing between iterations the swarm is
considered stagnant and every particle except the global best is replaced by
a Tent-map chaotic position.

All problems are minimisations. Random streams are derived per particle from
``(seed, particle, iteration)``, so results do not depend on the order in
which fitness values are computed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

TENT_SPECIAL_POINTS = (0.0, 0.25, 0.5, 0.75, 0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class SwarmConfig:
    n_particles: int = 50
    max_iter: int = 100
    w_max: float = 0.9
    w_min: float = 0.4
    c1: float = 2.0
    c2: float = 2.0
    v_clamp: float = 6.0
    low_thr: float = 0.99
    up_thr: float = 1.01
    seed: int = 0
    chaos_steps: int = 5

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("a swarm needs at least two particles")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if not 0 < self.low_thr < 1 < self.up_thr:
            raise ValueError("stagnation band must satisfy 0 < low_thr < 1 < up_thr")
        if self.v_clamp <= 0:
            raise ValueError("v_clamp must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    best_fitness: float
    mean_fitness: float
    pfv: float
    chaos_triggered: bool


@dataclass
class SwarmResult:
    best_position: np.ndarray
    best_fitness: float
    history: list[IterationRecord] = field(default_factory=list)
    n_evaluations: int = 0

    @property
    def chaos_iterations(self) -> list[int]:
        return [h.iteration for h in self.history if h.chaos_triggered]


def particle_rng(seed: int, particle: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, particle, iteration])


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=float)))


def velocity_update(velocity, position, pbest, gbest, w, c1, c2, rng, v_clamp=6.0):
    """Inertia plus cognitive and social pulls, with fresh random factors per bit."""
    v = np.asarray(velocity, dtype=float)
    x = np.asarray(position, dtype=float)
    r1 = rng.random(v.shape)
    r2 = rng.random(v.shape)
    new = w * v + c1 * r1 * (np.asarray(pbest) - x) + c2 * r2 * (np.asarray(gbest) - x)
    return np.clip(new, -v_clamp, v_clamp)


def position_update(velocity, rng) -> np.ndarray:
    """Each bit becomes 1 with probability sigmoid(v)."""
    v = np.asarray(velocity, dtype=float)
    return (rng.random(v.shape) < sigmoid(v)).astype(np.int8)


def pfv(fitnesses) -> float:
    """Population fitness variance normalised by the best (minimum) fitness."""
    f = np.fromiter(fitnesses, dtype=float)
    if f.size == 0:
        raise ValueError("cannot compute PFV of an empty population")
    f_best = f.min()
    norm = f_best if abs(f_best) >= 1e-12 else 1.0
    return float(np.sum(((f - f.mean()) / norm) ** 2))


def stagnation_detected(sigma2_prev: float, sigma2_curr: float,
                        low_thr: float = 0.99, up_thr: float = 1.01) -> bool:
    if sigma2_prev == 0:
        return True
    ratio = sigma2_curr / sigma2_prev
    return low_thr < ratio < up_thr


def tent_step(t: float, rng) -> float:
    """One Tent-map iterate, kicked off fixed and periodic points."""
    nxt = 2.0 * t if t <= 0.5 else 2.0 * (1.0 - t)
    if any(abs(nxt - p) < 1e-12 for p in TENT_SPECIAL_POINTS):
        nxt = (nxt + rng.random()) / 2.0
    return min(max(nxt, 0.0), 1.0)


def chaotic_position(position, rng, steps: int = 5) -> np.ndarray:
    """Map a bit vector to a chaotic seed and expand it back to bits.

    The seed mixes the fractional Hamming weight with a per-particle uniform,
    is iterated ``steps`` times, and then one further iterate per dimension is
    thresholded at 1/2.
    """
    x = np.asarray(position)
    k = x.size
    t = (x.sum() / k + rng.random()) / 2.0
    for _ in range(steps):
        t = tent_step(t, rng)
    out = np.empty(k, dtype=np.int8)
    for j in range(k):
        t = tent_step(t, rng)
        out[j] = 1 if t >= 0.5 else 0
    return out


def _evaluate(fitness, positions: np.ndarray, vectorized: bool, map_fn) -> np.ndarray:
    if vectorized:
        return np.asarray(fitness(positions), dtype=float).reshape(len(positions))
    return np.array(list(map_fn(fitness, list(positions))), dtype=float)


def run(
    fitness: Callable,
    n_bits: int,
    cfg: SwarmConfig = SwarmConfig(),
    *,
    vectorized: bool = False,
    map_fn: Callable[[Callable, Iterable], Iterable] = map,
    initial=None,
) -> SwarmResult:
    """Minimise ``fitness`` over bit vectors of length ``n_bits``.

    With ``vectorized=True`` the fitness receives the whole ``(n, n_bits)``
    population and returns ``n`` values. ``map_fn`` lets callers dispatch
    per-particle evaluations to a pool. Rows of ``initial`` replace the first
    random starting positions.
    """
    if n_bits < 1:
        raise ValueError("need at least one bit")
    n = cfg.n_particles
    positions = np.empty((n, n_bits), dtype=np.int8)
    for i in range(n):
        positions[i] = particle_rng(cfg.seed, i, 0).integers(0, 2, n_bits)
    if initial is not None:
        initial = np.atleast_2d(np.asarray(initial, dtype=np.int8))
        if initial.shape[1] != n_bits or len(initial) > n:
            raise ValueError(f"initial positions must be at most {n} rows of {n_bits} bits")
        positions[: len(initial)] = initial
    velocities = np.zeros((n, n_bits))
    fit = _evaluate(fitness, positions, vectorized, map_fn)
    n_evals = n
    pbest = positions.copy()
    pbest_fit = fit.copy()
    g = int(np.argmin(pbest_fit))
    gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])

    sigma_prev = pfv(fit)
    history = [IterationRecord(0, gbest_fit, float(fit.mean()), sigma_prev, False)]

    for it in range(1, cfg.max_iter + 1):
        frac = (it - 1) / max(cfg.max_iter - 1, 1)
        w = cfg.w_max - (cfg.w_max - cfg.w_min) * frac
        for i in range(n):
            rng = particle_rng(cfg.seed, i, it)
            velocities[i] = velocity_update(
                velocities[i], positions[i], pbest[i], gbest, w, cfg.c1, cfg.c2, rng, cfg.v_clamp
            )
            positions[i] = position_update(velocities[i], rng)
        fit = _evaluate(fitness, positions, vectorized, map_fn)
        n_evals += n
        better = fit < pbest_fit
        pbest[better] = positions[better]
        pbest_fit[better] = fit[better]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit:
            gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])

        sigma = pfv(fit)
        chaos = stagnation_detected(sigma_prev, sigma, cfg.low_thr, cfg.up_thr)
        if chaos:
            keep = g
            reseeded = [i for i in range(n) if i != keep]
            for i in reseeded:
                # separate stream from the move step of this iteration
                rng = np.random.default_rng([cfg.seed, i, it, 1])
                positions[i] = chaotic_position(positions[i], rng, cfg.chaos_steps)
                velocities[i] = rng.uniform(-1.0, 1.0, n_bits)
            new_fit = _evaluate(fitness, positions[reseeded], vectorized, map_fn)
            n_evals += len(reseeded)
            fit[reseeded] = new_fit
            better = fit < pbest_fit
            pbest[better] = positions[better]
            pbest_fit[better] = fit[better]
            g = int(np.argmin(pbest_fit))
            if pbest_fit[g] < gbest_fit:
                gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
            sigma = pfv(fit)
        sigma_prev = sigma
        history.append(IterationRecord(it, gbest_fit, float(fit.mean()), sigma, chaos))

    return SwarmResult(gbest, gbest_fit, history, n_evals)


def write_history(history: list[IterationRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "best_fitness", "mean_fitness", "pfv", "chaos_triggered"])
        for h in history:
            w.writerow([h.iteration, f"{h.best_fitness:.6g}", f"{h.mean_fitness:.6g}",
                        f"{h.pfv:.6g}", int(h.chaos_triggered)])


def read_history(path) -> list[IterationRecord]:
    with open(path, newline="") as f:
        return [
            IterationRecord(int(r["iteration"]), float(r["best_fitness"]),
                            float(r["mean_fitness"]), float(r["pfv"]),
                            bool(int(r["chaos_triggered"])))
            for r in csv.DictReader(f)
        ]
