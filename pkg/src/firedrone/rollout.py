"""Multi-period controller: plan, act on the true simulator, advance the fleet."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .firegrid import DEFAULT_SPREAD, FireMap, SpreadConfig, Weather, apply_quench, burn_cost, step_spread
from .model import Decision, FleetState, Instance, Scenario, extract_instance, movement

log = logging.getLogger(__name__)

PLANNERS = ("mip_ccro", "mip_plain", "ga")
DEFAULT_HORIZON = 8


class FleetError(RuntimeError):
    """A decision asked a drone for more energy than it had."""


class PlannerError(RuntimeError):
    pass


@dataclass
class PlanOutcome:
    decision: Decision
    value: float
    feasible: bool
    instance: Instance


def advance_fleet(fleet: FleetState, decision: Decision, instance: Instance, tau, scenario: Scenario) -> FleetState:
    """Battery, swap, overtime and availability after executing ``decision``.

    ``tau`` holds one realized delivery time per fire point of the instance.
    """
    x = decision.x.astype(float)
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if tau.size != instance.I:
        raise ValueError(f"expected {instance.I} delivery times, got {tau.size}")
    if instance.I:
        flown = 2.0 * np.einsum("ijl,ij->l", x, instance.D)
        work = np.einsum("ijl,ij->l", x, 2.0 * instance.D / scenario.speed + tau[:, None])
    else:
        flown = work = np.zeros(scenario.L)
    residual = fleet.u - flown / scenario.battery
    if np.any(residual < -1e-9):
        l = int(np.argmin(residual))
        raise FleetError(f"drone {l} would end with battery fraction {residual[l]:.4f}")
    upsilon = (residual > scenario.reserve).astype(int)
    u = np.where(upsilon == 1, np.maximum(residual, 0.0), 1.0)
    zeta = np.maximum(0.0, fleet.zeta + work - scenario.period)
    availability = 1 - np.minimum(1, np.ceil(zeta / scenario.big_m)).astype(int)
    return FleetState(u=u, zeta=zeta, upsilon=upsilon, availability=availability)


def terminal_check(instance: Instance, decision: Decision) -> bool:
    """Every remaining fire point gets exactly ``ceil(g)`` drones."""
    if instance.I == 0:
        return True
    load = decision.x.sum(axis=(1, 2))
    fractional = ~np.isclose(instance.intensity, np.round(instance.intensity))
    if np.any(fractional):
        log.info("terminal coverage checked against ceil(g) for %d fractional fire points", int(fractional.sum()))
    return bool(np.all(load == instance.demand))


def sample_delivery_times(mu, var, rng: np.random.Generator) -> np.ndarray:
    """Lognormal draws with the given means and variances."""
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if mu.size == 0:
        return np.zeros(0)
    if np.any(mu <= 0):
        raise ValueError("lognormal delivery times need positive means")
    s2 = np.log1p(var / mu**2)
    return rng.lognormal(np.log(mu) - 0.5 * s2, np.sqrt(s2))


def initial_conditions(scenario: Scenario, shape=None) -> tuple[FireMap, Weather]:
    """Starting map and weather described by the scenario's ``environment`` block."""
    env = scenario.environment or {}
    h, w = shape or env.get("grid", (20, 20))
    rng = np.random.default_rng(env.get("seed", 0))
    fuel = rng.random((h, w)) < env.get("fuel_density", 1.0)
    for r0, c0, r1, c1 in env.get("firebreaks", []):
        fuel[r0:r1 + 1, c0:c1 + 1] = False
    g = np.zeros((h, w))
    for rec in env.get("ignitions", []):
        r, c = int(rec[0]), int(rec[1])
        fuel[r, c] = True
        g[r, c] = float(rec[2]) if len(rec) > 2 else 1.0
    weather = Weather(
        wind_direction=env.get("wind_direction", "E"),
        wind_speed=float(env.get("wind_speed", 0.0)),
        moisture=float(env.get("moisture", 0.0)),
    )
    return FireMap(fuel, g), weather


@dataclass
class PeriodRecord:
    t: int
    fire: FireMap
    decision: Decision
    tau: np.ndarray
    burn_cost: int
    moves: float
    active_bases: int
    planned_value: float
    feasible: bool
    fleet_before: FleetState
    fleet_after: FleetState
    cells: np.ndarray
    bases: tuple
    terminal: bool = False
    terminal_ok: Optional[bool] = None

    @property
    def sorties(self) -> int:
        return int(self.decision.x.sum())

    def to_json(self) -> dict:
        x = self.decision.x
        return {
            "t": self.t,
            "burn_cost": self.burn_cost,
            "moves": round(self.moves, 9),
            "active_bases": self.active_bases,
            "sorties": self.sorties,
            "planned_value": round(float(self.planned_value), 9),
            "feasible": self.feasible,
            "terminal": self.terminal,
            "terminal_ok": self.terminal_ok,
            "assignments": [[int(i), int(j), int(l)] for i, j, l in np.argwhere(x > 0)],
            "cells": self.cells.tolist(),
            "b": self.decision.b.tolist(),
            "tau": [round(float(v), 9) for v in self.tau],
            "intensity": np.round(self.fire.intensity, 9).tolist(),
            "u": np.round(self.fleet_after.u, 9).tolist(),
            "zeta": np.round(self.fleet_after.zeta, 9).tolist(),
        }


@dataclass
class EpisodeTrace:
    planner: str
    seed: int
    periods: list = field(default_factory=list)
    final: Optional[FireMap] = None
    status: str = "contained"
    shape: tuple = (20, 20)
    bases: tuple = ()

    @property
    def moves(self) -> float:
        return float(sum(p.moves for p in self.periods))

    @property
    def rounds(self) -> int:
        return sum(1 for p in self.periods if p.sorties > 0)

    @property
    def final_cost(self) -> int:
        return burn_cost(self.final) if self.final is not None else 0

    @property
    def burn_cost(self) -> int:
        """Burning cells summed over every period start and the final map."""
        return int(sum(p.burn_cost for p in self.periods) + self.final_cost)

    def summary(self) -> dict:
        return {
            "summary": True,
            "planner": self.planner,
            "seed": self.seed,
            "periods": len(self.periods),
            "moves": round(self.moves, 9),
            "rounds": self.rounds,
            "burn_cost": self.burn_cost,
            "final_burning": self.final_cost,
            "status": self.status,
            "bases": [list(map(int, b)) for b in self.bases],
            "shape": list(self.shape),
        }

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for p in self.periods:
                fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")
            fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


def make_planner(name: str, s_model=None, sq_model=None, tau_max=None, ga_params=None) -> Callable:
    """Planner callable ``(fire, scenario, fleet, terminal, seed) -> PlanOutcome``."""
    if name in ("mip_ccro", "mip_plain"):
        from .solver import plan_period

        mode = "ccro" if name == "mip_ccro" else "plain"

        def mip(fire, scenario, fleet, terminal, seed):
            res = plan_period(fire, scenario, fleet, s_model, sq_model, mode, terminal=terminal, tau_max=tau_max)
            return PlanOutcome(res.decision, res.value, res.feasible, res.instance)

        return mip
    if name == "ga":
        from .baseline_ga import ga_plan

        def ga(fire, scenario, fleet, terminal, seed):
            res = ga_plan(fire, scenario, fleet, sq_model, seed, **(ga_params or {}))
            return PlanOutcome(res.decision, res.value, res.feasible, res.instance)

        return ga
    raise ValueError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")


def run_episode(
    initial: FireMap,
    scenario: Scenario,
    planner,
    horizon: int = DEFAULT_HORIZON,
    seed: int = 0,
    weather: Optional[Weather] = None,
    s_model=None,
    sq_model=None,
    config: SpreadConfig = DEFAULT_SPREAD,
    name: Optional[str] = None,
) -> EpisodeTrace:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if isinstance(planner, str):
        name = name or planner
        planner = make_planner(planner, s_model, sq_model)
    weather = weather or Weather()
    spread_ss, tau_ss, plan_ss = np.random.SeedSequence(seed).spawn(3)
    spread_seeds = np.random.default_rng(spread_ss).integers(0, 2**32, size=horizon)
    plan_seeds = np.random.default_rng(plan_ss).integers(0, 2**32, size=horizon)
    tau_rng = np.random.default_rng(tau_ss)

    trace = EpisodeTrace(planner=name or getattr(planner, "__name__", "custom"), seed=seed,
                         shape=initial.shape, bases=scenario.bases)
    fire = initial
    fleet = FleetState.initial(scenario.L)
    for t in range(horizon):
        if not fire.burning.any():
            break
        terminal = t == horizon - 1
        try:
            out = planner(fire, scenario, fleet, terminal, int(plan_seeds[t]))
            terminal_ok = None
            if terminal:
                if not out.feasible:
                    log.info("period %d: terminal coverage infeasible, planning without it", t)
                    out = planner(fire, scenario, fleet, False, int(plan_seeds[t]))
                terminal_ok = terminal_check(out.instance, out.decision)
        except Exception as exc:
            raise PlannerError(f"planner failed in period {t}: {exc}") from exc
        inst = out.instance
        tau = sample_delivery_times(inst.mu, np.diag(inst.sigma), tau_rng)
        after_fleet = advance_fleet(fleet, out.decision, inst, tau, scenario)
        quenched = apply_quench(fire, inst.quench_counts(out.decision.x))
        nxt = step_spread(quenched, weather, int(spread_seeds[t]), config)
        trace.periods.append(PeriodRecord(
            t=t, fire=fire, decision=out.decision, tau=tau, burn_cost=burn_cost(fire),
            moves=movement(inst, out.decision), active_bases=int(out.decision.b.sum()),
            planned_value=out.value, feasible=out.feasible, fleet_before=fleet, fleet_after=after_fleet,
            cells=inst.cells, bases=scenario.bases, terminal=terminal, terminal_ok=terminal_ok,
        ))
        fire, fleet = nxt, after_fleet
    trace.final = fire
    trace.status = "uncontained" if fire.burning.any() else "contained"
    return trace
