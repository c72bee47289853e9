"""Genetic-algorithm baseline planner.

A chromosome holds one gene per (fire point, drone) slot: ``-1`` for
unassigned, otherwise the base the drone flies from.  Only eligible bases
are ever written into a gene, so decoding never needs repair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .firegrid import FireMap
from .model import Decision, FleetState, Instance, Scenario, default_tau_max, extract_instance
from .solver.branch_cut import CostOracle

UNASSIGNED = -1


@dataclass
class GaParams:
    population: int = 60
    generations: int = 120
    tournament: int = 3
    crossover: float = 0.8
    mutation: float = 0.05
    elite: int = 2
    mode: str = "ccro"


@dataclass
class Chromosome:
    genes: np.ndarray

    def decode(self, instance: Instance) -> Decision:
        return _decode_one(self.genes, instance)


def _decode_one(genes, instance: Instance) -> Decision:
    x, b = _decode(np.asarray(genes)[None], instance)
    return Decision(x[0], b[0])


def _decode(G: np.ndarray, instance: Instance):
    """Stacked genes ``(P, I, L)`` to ``x (P, I, J, L)`` and ``b (P, J)``."""
    P, I, L = G.shape
    J = instance.J
    X = np.zeros((P, I, J, L), dtype=np.int8)
    p, i, l = np.nonzero(G >= 0)
    X[p, i, G[p, i, l], l] = 1
    B = (X.sum(axis=(1, 3)) > 0).astype(np.int8)
    return X, B


def gene_choices(instance: Instance) -> list:
    """Allowed values of each (i, l) gene: unassigned plus eligible bases."""
    ok = instance.eligible()
    return [[np.concatenate([[UNASSIGNED], np.nonzero(ok[i, :, l])[0]]) for l in range(instance.L)]
            for i in range(instance.I)]


def _time_margins(X, instance: Instance, scenario: Scenario, mode: str, tau_max=None) -> np.ndarray:
    """Per-chromosome, per-drone time-constraint excess ``(P, L)``; ``<= 0`` is feasible."""
    P, I, J, L = X.shape
    out = np.full((P, L), -scenario.period)
    if mode == "none" or I == 0:
        return out
    xs = X.transpose(0, 3, 1, 2).reshape(P, L, I * J).astype(float)
    d = instance.D.reshape(-1)
    if mode == "plain":
        tau = default_tau_max(instance, scenario) if tau_max is None else tau_max
        unit = d / scenario.speed + tau
    else:
        unit = d / scenario.speed + np.repeat(instance.mu, J)
    busy = xs.any(axis=2)
    k = np.argmax(np.where(xs > 0, d, -np.inf), axis=2)
    m = np.zeros_like(xs)
    np.put_along_axis(m, k[..., None], 1.0, axis=2)
    w = 2.0 * xs - m * busy[..., None]
    mean = w @ unit
    if mode == "plain":
        excess = mean - scenario.period
    else:
        agg = w.reshape(P, L, I, J).sum(axis=3)
        var = np.einsum("pli,ik,plk->pl", agg, instance.sigma, agg)
        excess = mean + np.sqrt(scenario.kappa * np.maximum(var, 0.0)) - scenario.period
    return np.where(busy, excess, out)


@dataclass
class Evaluation:
    fitness: np.ndarray
    objective: np.ndarray
    violation: np.ndarray     # sum of squared violations


def evaluate_population(G, instance: Instance, oracle: CostOracle, scenario: Scenario, mode="ccro") -> Evaluation:
    X, B = _decode(np.asarray(G), instance)
    w1, w2, w3 = scenario.weights
    move = 2.0 * np.einsum("pijl,ij->p", X, instance.D)
    obj = w1 * oracle.values(X) + w2 * B.sum(axis=1) + w3 * move
    used = 2.0 * np.einsum("pijl,ij->pjl", X, instance.D)
    battery = np.maximum(0.0, used - (instance.battery * instance.u)[None, None, :])
    cap = np.maximum(0, X.sum(axis=(2, 3)) - instance.demand[None, :]).astype(float)
    time = np.maximum(0.0, _time_margins(X, instance, scenario, mode))
    viol = (battery**2).sum(axis=(1, 2)) + (cap**2).sum(axis=1) + (time**2).sum(axis=1)
    penalty = 1e3 * sum(scenario.weights)
    return Evaluation(obj + penalty * viol, obj, viol)


def fitness(chromosome, instance: Instance, sq_model, scenario: Scenario, mode: str = "ccro") -> float:
    genes = chromosome.genes if isinstance(chromosome, Chromosome) else np.asarray(chromosome)
    ev = evaluate_population(genes[None], instance, CostOracle(sq_model, instance), scenario, mode)
    return float(ev.fitness[0])


@dataclass
class GaResult:
    decision: Decision
    value: float
    feasible: bool
    instance: Instance
    fitness: float = 0.0
    history: list = field(default_factory=list)


def _random_genes(choices, rng, n) -> np.ndarray:
    I = len(choices)
    L = len(choices[0]) if I else 0
    G = np.empty((n, I, L), dtype=int)
    for i in range(I):
        for l in range(L):
            G[:, i, l] = rng.choice(choices[i][l], size=n)
    return G


def ga_plan(
    fire: FireMap,
    scenario: Scenario,
    fleet: Optional[FleetState],
    sq_model,
    seed: int = 0,
    params: Optional[GaParams] = None,
    **overrides,
) -> GaResult:
    params = params or GaParams(**overrides)
    instance = extract_instance(fire, scenario, fleet)
    oracle = CostOracle(sq_model, instance)
    I, J, L = instance.I, instance.J, instance.L
    if I == 0:
        zero = Decision.zeros(0, J, L)
        cost, _ = oracle(zero.x)
        value = scenario.weights[0] * cost
        return GaResult(zero, value, True, instance, value)

    rng = np.random.default_rng(seed)
    choices = gene_choices(instance)
    n = params.population
    G = _random_genes(choices, rng, n)
    G[0] = UNASSIGNED
    ev = evaluate_population(G, instance, oracle, scenario, params.mode)

    best_feasible = (np.inf, None)
    history = []

    def remember(G, ev):
        nonlocal best_feasible
        ok = np.nonzero(ev.violation <= 0.0)[0]
        if ok.size:
            k = ok[np.argmin(ev.objective[ok])]
            if ev.objective[k] < best_feasible[0]:
                best_feasible = (float(ev.objective[k]), G[k].copy())

    remember(G, ev)
    history.append(float(ev.fitness.min()))
    for _ in range(params.generations):
        order = np.argsort(ev.fitness, kind="stable")
        children = [G[k].copy() for k in order[: params.elite]]
        while len(children) < n:
            parents = []
            for _ in range(2):
                cand = rng.integers(0, n, size=params.tournament)
                parents.append(G[cand[np.argmin(ev.fitness[cand])]])
            a, b = parents[0].copy(), parents[1].copy()
            if rng.random() < params.crossover:
                swap = rng.random(a.shape) < 0.5
                a[swap], b[swap] = b[swap], a[swap]
            for child in (a, b):
                hit = np.argwhere(rng.random(child.shape) < params.mutation)
                for i, l in hit:
                    child[i, l] = rng.choice(choices[i][l])
                children.append(child)
        G = np.stack(children[:n])
        ev = evaluate_population(G, instance, oracle, scenario, params.mode)
        remember(G, ev)
        history.append(float(ev.fitness.min()))

    if best_feasible[1] is not None:
        genes = best_feasible[1]
        feasible = True
    else:
        genes = G[int(np.argmin(ev.fitness))]
        feasible = False
    decision = _decode_one(genes, instance)
    single = evaluate_population(genes[None], instance, oracle, scenario, params.mode)
    return GaResult(decision, float(single.objective[0]), feasible, instance, float(single.fitness[0]), history)
