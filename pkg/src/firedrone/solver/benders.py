"""Benders loop over base activation patterns.

The master enumerates the ``2^J`` activation patterns in a fixed order
(fewest bases first, then lexicographic) and lower-bounds the assignment
value ``X`` of each from the accumulated combinatorial cuts.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..firegrid import FireMap
from ..model import Decision, FleetState, Instance, Scenario, extract_instance, objective
from .branch_cut import CUTOFF, CostOracle, TimeRule, candidate_triples, solve_subproblem
from .lp import INFEASIBLE

MAX_BASES = 12
GAP_TOL = 1e-6


@dataclass
class BendersState:
    n_bases: int
    allowed: np.ndarray = None
    optimality: list = field(default_factory=list)    # (pattern, value) pairs
    infeasible: list = field(default_factory=list)    # patterns
    incumbent_b: Optional[np.ndarray] = None
    incumbent_x: Optional[np.ndarray] = None
    incumbent: float = np.inf
    bound: float = -np.inf
    iterations: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_bases > MAX_BASES:
            raise ValueError(f"{self.n_bases} bases exceed the enumeration limit of {MAX_BASES}")
        if self.allowed is None:
            self.allowed = np.ones(self.n_bases, dtype=bool)

    @property
    def gap(self) -> float:
        return self.incumbent - self.bound

    def add_optimality_cut(self, pattern, value: float) -> None:
        self.optimality.append((np.asarray(pattern, dtype=int).copy(), float(value)))

    def add_feasibility_cut(self, pattern) -> None:
        self.infeasible.append(np.asarray(pattern, dtype=int).copy())

    def lower_bound(self, pattern) -> float:
        """Largest ``X`` implied by the optimality cuts at ``pattern``."""
        p = np.asarray(pattern, dtype=int)
        lb = 0.0
        for q, v in self.optimality:
            ham = int(np.sum(p != q))
            lb = max(lb, v - v * ham)
            # fewer open bases can only raise the assignment value
            if np.all(p <= q):
                lb = max(lb, v * (1 - int(np.sum(p * (1 - q)))))
        return lb

    def excluded(self, pattern) -> bool:
        p = np.asarray(pattern, dtype=int)
        return any(np.all(p <= q) for q in self.infeasible)


def patterns(n_bases: int, allowed=None):
    """All activation patterns, fewest bases first then lexicographic."""
    allowed = np.ones(n_bases, dtype=bool) if allowed is None else np.asarray(allowed, dtype=bool)
    free = np.nonzero(allowed)[0]
    for k in range(free.size + 1):
        for combo in itertools.combinations(free, k):
            p = np.zeros(n_bases, dtype=int)
            p[list(combo)] = 1
            yield p


def solve_master(instance: Optional[Instance], state: BendersState, scenario: Scenario):
    """Pattern minimizing ``w2 * sum(b) + X`` under the cuts, and that minimum."""
    if state.n_bases > MAX_BASES:
        raise ValueError(f"{state.n_bases} bases exceed the enumeration limit of {MAX_BASES}")
    w2 = scenario.weights[1]
    best_b, best = None, np.inf
    for p in patterns(state.n_bases, state.allowed):
        if state.excluded(p):
            continue
        val = w2 * p.sum() + state.lower_bound(p)
        if val < best - 1e-12:
            best_b, best = p, val
    return best_b, best


@dataclass
class SolveStats:
    instance_id: str = ""
    I: int = 0
    J: int = 0
    L: int = 0
    iterations: int = 0
    nodes: int = 0
    cuts: int = 0
    value: float = 0.0
    gap: float = 0.0
    wall_ms: float = 0.0
    feasible: bool = True

    def row(self) -> dict:
        return asdict(self)


STATS_FIELDS = ["instance_id", "I", "J", "L", "iterations", "nodes", "cuts", "value", "gap", "wall_ms", "feasible"]


def write_stats(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.row() if isinstance(r, SolveStats) else r)


@dataclass
class PlanResult:
    decision: Decision
    value: float
    cost: float
    stats: SolveStats
    instance: Instance

    @property
    def feasible(self) -> bool:
        return self.stats.feasible


def plan_instance(
    instance: Instance,
    scenario: Scenario,
    sq_model,
    mode: str = "ccro",
    terminal: bool = False,
    tau_max: Optional[float] = None,
    instance_id: str = "",
) -> PlanResult:
    start = time.perf_counter()
    I, J, L = instance.I, instance.J, instance.L
    stats = SolveStats(instance_id, I, J, L)
    oracle = CostOracle(sq_model, instance)
    w1 = 0.0 if terminal else scenario.weights[0]
    state = BendersState(J)
    zero = Decision.zeros(I, J, L)

    if I == 0:
        cost, _ = oracle(zero.x)
        stats.iterations = 1
        stats.value = w1 * cost
        stats.wall_ms = (time.perf_counter() - start) * 1e3
        return PlanResult(zero, stats.value, cost, stats, instance)

    # bases with no usable assignment only add activation cost
    rule = TimeRule(instance, scenario, mode, tau_max)
    trip = candidate_triples(instance, np.ones(J, dtype=int), rule)
    state.allowed = np.isin(np.arange(J), trip[:, 1]) if len(trip) else np.zeros(J, dtype=bool)
    costs = {}
    cap = 2 ** int(state.allowed.sum())
    first = state.allowed.astype(int)
    while True:
        b, bound = solve_master(instance, state, scenario)
        state.bound = max(state.bound, bound)
        state.history.append(state.bound)
        if b is None or state.gap <= GAP_TOL or state.iterations >= cap:
            break
        if first is not None:
            # every base open gives the smallest assignment value, a strong early incumbent
            b, first = first, None
        state.iterations += 1
        # only assignments that beat the incumbent are of interest
        cutoff = state.incumbent - scenario.weights[1] * b.sum()
        sub = solve_subproblem(instance, b, sq_model, scenario, mode, tau_max, terminal, cutoff=cutoff)
        stats.nodes += sub.nodes
        stats.cuts += sub.cuts
        if sub.status == INFEASIBLE:
            state.add_feasibility_cut(b)
            continue
        state.add_optimality_cut(b, sub.value)
        if sub.status == CUTOFF:
            continue
        total = scenario.weights[1] * b.sum() + sub.value
        if total < state.incumbent - 1e-12:
            state.incumbent = total
            state.incumbent_b = b.copy()
            state.incumbent_x = sub.x.copy()
            costs["best"] = sub.cost
    stats.iterations = max(state.iterations, 1)
    stats.cuts += len(state.optimality) + len(state.infeasible)

    if state.incumbent_x is None:
        cost, _ = oracle(zero.x)
        stats.feasible = False
        stats.value = objective(instance, zero, cost, scenario)
        stats.gap = np.inf
        stats.wall_ms = (time.perf_counter() - start) * 1e3
        return PlanResult(zero, stats.value, cost, stats, instance)

    decision = Decision(state.incumbent_x, state.incumbent_b)
    stats.value = float(state.incumbent)
    stats.gap = max(0.0, float(state.gap))
    stats.wall_ms = (time.perf_counter() - start) * 1e3
    return PlanResult(decision, stats.value, float(costs["best"]), stats, instance)


def plan_period(
    fire: FireMap,
    scenario: Scenario,
    fleet: Optional[FleetState],
    s_model,
    sq_model,
    mode: str = "ccro",
    terminal: bool = False,
    tau_max: Optional[float] = None,
    instance_id: str = "",
) -> PlanResult:
    """Base activation and assignment for one period.

    ``s_model`` is accepted for interface symmetry with the rollout; the
    one-step lookahead only needs the quench-aware model.
    """
    del s_model
    instance = extract_instance(fire, scenario, fleet)
    return plan_instance(instance, scenario, sq_model, mode, terminal, tau_max, instance_id)
