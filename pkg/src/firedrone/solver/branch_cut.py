"""LP-based branch-and-cut for the assignment subproblem at a fixed base pattern.

The relaxation carries an epigraph variable ``eta`` for the predicted burn
cost, cut from below by tangents of the convex cost head, and per-drone
linear outer approximations of the robust time constraint.  Integer LP
optima are checked exactly; an infeasible drone schedule is removed by a
cover cut (when every superset is also infeasible) or a no-good cut.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..model import Instance, Scenario, default_tau_max, service_costs, time_margin
from .lp import INFEASIBLE, OPTIMAL, BasisHint, LinearProgram, WarmResult, solve_dual_warm

INT_TOL = 1e-6
CUT_TOL = 1e-7
PRUNE_TOL = 1e-9
NODE_CAP = 100_000
RESTART_EVERY = 64
CUT_ROUNDS = 8          # at the root; deeper nodes get DEEP_ROUNDS
DEEP_ROUNDS = 2
SOC_TOL = 1e-4
CUTOFF = "cutoff"


class CostOracle:
    """Predicted next-period burn cost as a function of the assignment tensor."""

    def __init__(self, model, instance: Instance):
        self.model = model
        self.instance = instance
        self.calls = 0

    def __call__(self, x) -> tuple[float, np.ndarray]:
        inst = self.instance
        x = np.asarray(x, dtype=float)
        if self.model is None:
            return 0.0, np.zeros(x.shape)
        self.calls += 1
        if inst.I == 0:
            value, _ = self.model.cost_and_grad(inst.context, np.zeros(inst.shape))
            return float(value), np.zeros(x.shape)
        value, grad = self.model.cost_and_grad(inst.context, inst.quench_grid(x))
        per_fire = grad.reshape(-1)[inst.cell_index] / inst.demand
        return float(value), np.broadcast_to(per_fire[:, None, None], x.shape).copy()

    def values(self, xs) -> np.ndarray:
        """Batch of costs for stacked assignment tensors ``(n, I, J, L)``."""
        inst = self.instance
        xs = np.asarray(xs, dtype=float)
        if self.model is None or len(xs) == 0:
            return np.zeros(len(xs))
        q = np.zeros((len(xs),) + inst.shape)
        if inst.I:
            q[:, inst.cells[:, 0], inst.cells[:, 1]] = xs.sum(axis=(2, 3)) / inst.demand
        ctx = np.broadcast_to(inst.context, q.shape)
        return np.asarray(self.model.cost(ctx, q), dtype=float).reshape(-1)


@dataclass
class TimeRule:
    """Per-drone operating-time predicate in one of the modes ``ccro``, ``plain``, ``none``."""

    instance: Instance
    scenario: Scenario
    mode: str = "ccro"
    tau_max: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("ccro", "plain", "none"):
            raise ValueError(f"unknown time-constraint mode {self.mode!r}")
        inst = self.instance
        if self.mode == "plain" and self.tau_max is None:
            self.tau_max = default_tau_max(inst, self.scenario)
        if self.mode == "plain":
            self.unit = (inst.D / inst.speed + self.tau_max).reshape(-1)
        else:
            self.unit = service_costs(inst) if inst.I else np.zeros(0)
        # superset-closed infeasibility holds when the variance term cannot shrink
        self.monotone = self.mode != "ccro" or bool(np.all(inst.sigma >= 0))
        self.sd = np.sqrt(np.diag(inst.sigma)) if inst.I else np.zeros(0)

    def margin(self, x_l) -> float:
        return time_margin(x_l, self.instance, self.scenario, self.mode, self.tau_max)

    def feasible(self, x_l) -> bool:
        return self.margin(x_l) <= 1e-12

    def single_ok(self, i: int, j: int) -> bool:
        x = np.zeros((self.instance.I, self.instance.J))
        x[i, j] = 1
        return self.feasible(x)

    def max_tasks(self, fires, bases) -> int:
        """Upper bound on how many of the given (fire, base) pairs one drone can serve.

        Any schedule of ``n`` tasks has mean time at least the sum of the ``n``
        and ``n - 1`` smallest per-task times; with nonnegative covariances its
        variance is at least the matching sum of single-task variances.
        """
        fires = np.asarray(fires, dtype=int)
        if fires.size == 0:
            return 0
        unit = np.sort(self.unit[fires * self.instance.J + np.asarray(bases, dtype=int)])
        var = np.sort(self.sd[fires] ** 2) if (self.mode == "ccro" and self.monotone) else np.zeros(fires.size)
        cu, cv = np.cumsum(unit), np.cumsum(var)
        root = math.sqrt(self.scenario.kappa) if self.mode == "ccro" else 0.0
        most = 1
        for n in range(2, fires.size + 1):
            mean = cu[n - 1] + cu[n - 2]
            v = cv[n - 1] + 3.0 * cv[n - 2]
            if mean + root * math.sqrt(v) > self.scenario.period + 1e-12:
                break
            most = n
        return most

    def mean_exceeds(self, x_l) -> bool:
        """True when the mean part alone already breaks the period length."""
        x = np.asarray(x_l, dtype=float).reshape(-1)
        if not x.any():
            return False
        d = self.instance.D.reshape(-1)
        k = int(np.argmax(np.where(x > 0, d, -np.inf)))
        return float(2.0 * x @ self.unit - self.unit[k]) > self.scenario.period


@dataclass
class SubproblemResult:
    status: str
    x: np.ndarray
    value: float
    cost: float
    nodes: int = 0
    cuts: int = 0
    lp_solves: int = 0


@dataclass
class _Node:
    lo: np.ndarray
    hi: np.ndarray
    bound: float
    depth: int = 0
    basis: Optional[BasisHint] = None


@dataclass
class _Problem:
    instance: Instance
    scenario: Scenario
    oracle: CostOracle
    rule: TimeRule
    terminal: bool
    triples: np.ndarray            # (n, 3) i, j, l of each variable
    base_lp: LinearProgram
    root_lo: np.ndarray
    root_hi: np.ndarray
    cut_rows: list = field(default_factory=list)
    cut_keys: set = field(default_factory=set)
    active: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.triples)

    @property
    def width(self) -> int:
        # x variables, one coverage count per fire point, then the epigraph variable
        return self.n + self.instance.I + 1

    def to_tensor(self, v) -> np.ndarray:
        inst = self.instance
        x = np.zeros((inst.I, inst.J, inst.L))
        if self.n:
            x[self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]] = v[: self.n]
        return x

    def add_cut(self, coef, rhs) -> bool:
        key = (tuple(np.round(coef, 10)), round(float(rhs), 10))
        if key in self.cut_keys:
            return False
        self.cut_keys.add(key)
        self.active.append(len(self.cut_rows))
        self.cut_rows.append((np.asarray(coef, dtype=float), float(rhs)))
        return True

    def reactivate(self, v) -> int:
        """Bring back pooled cuts that ``v`` violates."""
        on = set(self.active)
        back = [k for k, (c, r) in enumerate(self.cut_rows) if k not in on and c @ v > r + CUT_TOL]
        self.active.extend(back)
        return len(back)

    def purge(self, v) -> None:
        """Drop active cuts that are slack at ``v``; they stay in the pool."""
        if len(self.active) > 2 * self.n + 40:
            self.active = [k for k in self.active if self.cut_rows[k][0] @ v >= self.cut_rows[k][1] - 1e-6]


def candidate_triples(instance: Instance, b, rule: TimeRule) -> np.ndarray:
    """Assignments worth a variable: eligible, battery-feasible alone, time-feasible alone."""
    ok = instance.eligible(b)
    out = []
    for i, j, l in np.argwhere(ok):
        if 2.0 * instance.D[i, j] > instance.battery[l] * instance.u[l] + 1e-9:
            continue
        one = np.zeros((instance.I, instance.J))
        one[i, j] = 1
        # a lone task that is infeasible stays infeasible in every schedule that
        # contains it under a monotone rule, or when its mean time alone is too long
        if not rule.feasible(one) and (rule.monotone or rule.mean_exceeds(one)):
            continue
        out.append((i, j, l))
    return np.asarray(out, dtype=int).reshape(-1, 3)


def _twin_pairs(instance: Instance, trip: np.ndarray) -> list:
    """Consecutive pairs of drones that no constraint can tell apart."""
    groups = {}
    for l in range(instance.L):
        sel = trip[:, 2] == l
        if not sel.any():
            continue
        key = (
            tuple(map(tuple, trip[sel, :2])),
            float(instance.battery[l]),
            float(instance.u[l]),
        )
        groups.setdefault(key, []).append(l)
    return [(g[k], g[k + 1]) for g in groups.values() for k in range(len(g) - 1)]


def _build(instance, scenario, oracle, rule, b, terminal) -> _Problem:
    trip = candidate_triples(instance, b, rule)
    n = len(trip)
    w1, _, w3 = scenario.weights
    if terminal:
        w1 = 0.0
    I = instance.I
    width = n + I + 1
    D = instance.D[trip[:, 0], trip[:, 1]] if n else np.zeros(0)
    c = np.concatenate([2.0 * w3 * D, np.zeros(I), [w1]])
    demand = instance.demand.astype(float)
    lo = np.concatenate([np.zeros(n), demand if terminal else np.zeros(I), [0.0]])
    hi = np.concatenate([np.ones(n), demand, [np.inf]])
    lp = LinearProgram(c, lo=lo, hi=hi)
    for l in range(instance.L):
        for j in range(instance.J):
            sel = (trip[:, 1] == j) & (trip[:, 2] == l)
            budget = instance.battery[l] * instance.u[l]
            if sel.any() and 2.0 * D[sel].sum() > budget + 1e-9:
                row = np.zeros(width)
                row[:n][sel] = 2.0 * D[sel]
                lp.add_row(row, "<=", budget)
        if rule.mode != "none":
            sel = trip[:, 2] == l
            if sel.sum() > 1:
                k = trip[sel, 0] * instance.J + trip[sel, 1]
                unit = rule.unit[k]
                row = np.zeros(width)
                row[:n][sel] = 2.0 * unit
                lp.add_row(row, "<=", scenario.period + unit.max())
        if rule.mode != "none":
            sel = trip[:, 2] == l
            most = rule.max_tasks(trip[sel, 0], trip[sel, 1])
            if most < sel.sum():
                row = np.zeros(width)
                row[:n][sel] = 1.0
                lp.add_row(row, "<=", most)
    for first, second in _twin_pairs(instance, trip):
        # interchangeable drones are ordered by a weighted workload
        row = np.zeros(width)
        for l, sign in ((first, -1.0), (second, 1.0)):
            sel = trip[:, 2] == l
            row[:n][sel] = sign * (1.0 + (trip[sel, 0] + 1.0) / (instance.I + 1.0))
        lp.add_row(row, "<=", 0.0)
    for i in range(I):
        row = np.zeros(width)
        row[:n][trip[:, 0] == i] = 1.0
        row[n + i] = -1.0
        lp.add_row(row, "=", 0.0)
    return _Problem(instance, scenario, oracle, rule, terminal, trip, lp, lo, hi)


def _epigraph_cut(prob: _Problem, v) -> bool:
    """Tangent of the cost head at ``v``; returns True if it cuts ``v`` off."""
    if prob.terminal or prob.scenario.weights[0] == 0.0 or prob.oracle.model is None:
        return False
    x = prob.to_tensor(v)
    value, grad = prob.oracle(x)
    if value <= v[-1] + CUT_TOL:
        return False
    # the cost depends on x only through the per-fire coverage counts
    g = grad[:, 0, 0] if grad.size else np.zeros(prob.instance.I)
    q = v[prob.n: prob.n + prob.instance.I]
    coef = np.concatenate([np.zeros(prob.n), g, [-1.0]])
    return prob.add_cut(coef, float(g @ q - value))


def _time_cuts(prob: _Problem, v) -> int:
    """Linear outer approximation of the ccro constraint at a fractional point."""
    rule = prob.rule
    if rule.mode != "ccro" or prob.n == 0:
        return 0
    inst, sc = prob.instance, prob.scenario
    kappa = sc.kappa
    added = 0
    for l in range(inst.L):
        sel = np.nonzero(prob.triples[:, 2] == l)[0]
        if sel.size < 2:
            continue
        fires = prob.triples[sel, 0]
        k = fires * inst.J + prob.triples[sel, 1]
        s_hat = np.bincount(fires, weights=v[sel], minlength=inst.I)
        norm2 = float(s_hat @ inst.sigma @ s_hat)
        if norm2 <= 1e-12:
            continue
        norm = math.sqrt(norm2)
        cap = sc.period + float(np.max(rule.unit[k] + math.sqrt(kappa) * rule.sd[fires]))
        lhs = 2.0 * float(rule.unit[k] @ v[sel]) + 2.0 * math.sqrt(kappa) * norm
        # shallow violations are left to branching; chasing them stalls on the curved boundary
        if lhs <= cap + SOC_TOL * max(1.0, cap):
            continue
        grad = (inst.sigma @ s_hat)[fires] / norm
        coef = np.zeros(prob.width)
        coef[sel] = 2.0 * rule.unit[k] + 2.0 * math.sqrt(kappa) * grad
        added += prob.add_cut(coef, cap)
    return added


def _schedule_cuts(prob: _Problem, xi: np.ndarray) -> int:
    """Exact per-drone time check at an integer point; cut off offending schedules."""
    inst = prob.instance
    rule = prob.rule
    added = 0
    for l in range(inst.L):
        sel = np.nonzero(prob.triples[:, 2] == l)[0]
        on = sel[xi[sel] > 0.5]
        if on.size == 0:
            continue
        x_l = np.zeros((inst.I, inst.J))
        x_l[prob.triples[on, 0], prob.triples[on, 1]] = 1
        if rule.feasible(x_l):
            continue
        coef = np.zeros(prob.width)
        coef[on] = 1.0
        if not (rule.monotone or rule.mean_exceeds(x_l)):
            off = np.setdiff1d(sel, on)
            coef[off] = -1.0
        added += prob.add_cut(coef, on.size - 1)
    return added


def _node_lp(prob: _Problem, node: _Node, hint) -> WarmResult:
    base = prob.base_lp
    A, senses, b = base.A, list(base.senses), base.b
    keys = [("base", i) for i in range(A.shape[0])]
    if prob.active:
        order = sorted(prob.active)
        A = np.vstack([A] + [prob.cut_rows[k][0][None, :] for k in order])
        senses = senses + ["<="] * len(order)
        b = np.concatenate([b, [prob.cut_rows[k][1] for k in order]])
        keys += [("cut", k) for k in order]
    return solve_dual_warm(base.c, A, b, senses, node.lo, node.hi, keys, hint)


def _true_value(prob: _Problem, xi) -> tuple[float, float]:
    x = prob.to_tensor(xi)
    cost, _ = prob.oracle(x)
    w1, _, w3 = prob.scenario.weights
    move = 2.0 * float(np.einsum("ijl,ij->", x, prob.instance.D))
    if prob.terminal:
        return w3 * move, cost
    return w1 * cost + w3 * move, cost


def solve_subproblem(
    instance: Instance,
    b_fixed,
    sq_model,
    scenario: Scenario,
    mode: str = "ccro",
    tau_max: Optional[float] = None,
    terminal: bool = False,
    node_cap: int = NODE_CAP,
    cutoff: float = np.inf,
) -> SubproblemResult:
    """Optimal assignment restricted to the active bases in ``b_fixed``.

    Only assignments valued below ``cutoff`` are searched for.  When none
    exists the status is ``CUTOFF`` and ``value`` holds ``cutoff``, which is
    then a lower bound on the restricted optimum.
    """
    b = np.asarray(b_fixed, dtype=int).reshape(-1)
    if b.shape != (instance.J,):
        raise ValueError(f"base pattern has {b.size} entries, expected {instance.J}")
    oracle = CostOracle(sq_model, instance)
    shape = (instance.I, instance.J, instance.L)
    if instance.I == 0:
        cost, _ = oracle(np.zeros(shape))
        return SubproblemResult(OPTIMAL, np.zeros(shape, dtype=np.int8), scenario.weights[0] * cost, cost)

    rule = TimeRule(instance, scenario, mode, tau_max)
    prob = _build(instance, scenario, oracle, rule, b, terminal)
    n, nq = prob.n, instance.I

    best_v, best_x, best_cost = cutoff, None, np.nan
    if not terminal:
        zero = np.zeros(prob.width)
        value, cost = _true_value(prob, zero)
        if value < best_v:
            best_v, best_x, best_cost = value, zero[:n].copy(), cost
        _epigraph_cut(prob, zero)

    root = _Node(prob.root_lo.copy(), prob.root_hi.copy(), -np.inf)
    open_nodes = [root]
    processed = lp_solves = 0
    while open_nodes:
        if processed and processed % RESTART_EVERY == 0:
            k = min(range(len(open_nodes)), key=lambda t: (open_nodes[t].bound, -open_nodes[t].depth))
            node = open_nodes.pop(k)
        else:
            node = open_nodes.pop()
        if node.bound >= best_v - PRUNE_TOL:
            continue
        processed += 1
        if processed > node_cap:
            raise RuntimeError(f"branch-and-cut node cap {node_cap} exceeded")

        branch_on = None
        rounds = 0
        hint = node.basis
        while True:
            res = _node_lp(prob, node, hint)
            lp_solves += 1
            if res.status != OPTIMAL:
                break
            hint = res.basis
            v = res.x
            if res.objective >= best_v - PRUNE_TOL:
                break
            if prob.reactivate(v):
                continue
            xi = v[:n + nq]
            frac = np.abs(xi - np.round(xi))
            if frac.max(initial=0.0) <= INT_TOL:
                vi = np.concatenate([np.round(xi), [v[-1]]])
                if _schedule_cuts(prob, vi[:n]):
                    continue
                if _epigraph_cut(prob, vi):
                    continue
                value, cost = _true_value(prob, vi)
                if value < best_v - PRUNE_TOL:
                    best_v, best_x, best_cost = value, vi[:n].copy(), cost
                break
            if rounds < (CUT_ROUNDS if node.depth == 0 else DEEP_ROUNDS) and _cut_round(prob, v):
                rounds += 1
                continue
            # coverage counts first, then the most fractional x; ties to the lowest index
            spread = np.round(frac, 12)
            if spread[n:].max(initial=0.0) > INT_TOL:
                branch_on = n + int(np.argmax(spread[n:]))
            else:
                branch_on = int(np.argmax(spread[:n]))
            bound = res.objective
            prob.purge(v)
            break
        if branch_on is None:
            continue
        down_hi = node.hi.copy()
        down_hi[branch_on] = math.floor(v[branch_on])
        up_lo = node.lo.copy()
        up_lo[branch_on] = math.ceil(v[branch_on])
        down = _Node(node.lo.copy(), down_hi, bound, node.depth + 1, hint)
        up = _Node(up_lo, node.hi.copy(), bound, node.depth + 1, hint)
        # the child nearer the LP value is explored first
        if v[branch_on] - math.floor(v[branch_on]) >= 0.5:
            open_nodes += [down, up]
        else:
            open_nodes += [up, down]

    if best_x is None and np.isfinite(cutoff):
        return SubproblemResult(CUTOFF, np.zeros(shape, dtype=np.int8), float(cutoff), np.nan,
                                processed, len(prob.cut_rows), lp_solves)
    if best_x is None:
        return SubproblemResult(INFEASIBLE, np.zeros(shape, dtype=np.int8), np.inf, np.nan,
                                processed, len(prob.cut_rows), lp_solves)
    x = prob.to_tensor(best_x).astype(np.int8)
    return SubproblemResult(OPTIMAL, x, float(best_v), float(best_cost), processed, len(prob.cut_rows), lp_solves)


def _cut_round(prob: _Problem, v) -> bool:
    added = _epigraph_cut(prob, v)
    added = _time_cuts(prob, v) or added
    return bool(added)
