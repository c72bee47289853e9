import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firedrone.firegrid import FireMap, Weather
from firedrone.model import Decision, FleetState, RobustSpec, Scenario, extract_instance
from firedrone.rollout import (
    FleetError,
    PlanOutcome,
    advance_fleet,
    initial_conditions,
    run_episode,
    sample_delivery_times,
    terminal_check,
)

from helpers import random_fire, random_scenario, random_sq_model

SHAPE = (5, 5)


def one_drone(battery=10.0, period=5.0, reserve=0.2, shape=SHAPE, weights=(1, 1, 1)):
    return Scenario(bases=[(0, 0)], drones=[{"home": 0, "battery_range": battery}], speed=2.0,
                    weights=weights, period=period, safe_distance=1.0, reserve=reserve, risk=0.1,
                    robust=RobustSpec.parametric(shape, mean=1.0, std=0.1))


def eager_model(rng, shape=SHAPE):
    """SQ model whose cost drops steeply with quench, so every fire is worth a sortie."""
    m = random_sq_model(shape, rng)
    m.params["vc"][:] = -2.0
    m.params["bc"][:] = 10.0
    return m


# ---------------------------------------------------------------- fleet transitions

def test_zero_decision_keeps_battery():
    sc = one_drone()
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc)
    fleet = FleetState.initial(1)
    fleet.zeta[:] = 7.0
    out = advance_fleet(fleet, Decision.zeros(1, 1, 1), inst, [1.0], sc)
    assert out.u[0] == 1.0 and out.zeta[0] == pytest.approx(2.0)
    fleet.u[:] = 0.1
    assert advance_fleet(fleet, Decision.zeros(1, 1, 1), inst, [1.0], sc).u[0] == 1.0


def test_consumption_without_swap():
    # round trip of 2 on a range of 2/0.3 consumes 0.3
    fleet = FleetState.initial(1)
    sc = one_drone(battery=2.0 / 0.3)
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 1)]), sc)
    out = advance_fleet(fleet, Decision.from_assignment(np.ones((1, 1, 1))), inst, [0.5], sc)
    assert out.upsilon[0] == 1
    assert out.u[0] == pytest.approx(0.7)


def test_low_residual_triggers_swap():
    sc = one_drone(battery=2.0 / 0.3)
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 1)]), sc)
    fleet = FleetState.initial(1)
    fleet.u[:] = 0.35
    out = advance_fleet(fleet, Decision.from_assignment(np.ones((1, 1, 1))), inst, [0.5], sc)
    assert out.upsilon[0] == 0
    assert out.u[0] == 1.0


def test_overdrawn_battery_is_a_fault():
    sc = one_drone(battery=1.0)
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc)
    with pytest.raises(FleetError):
        advance_fleet(FleetState.initial(1), Decision.from_assignment(np.ones((1, 1, 1))), inst, [0.5], sc)


def test_tau_length_checked():
    sc = one_drone()
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc)
    with pytest.raises(ValueError):
        advance_fleet(FleetState.initial(1), Decision.zeros(1, 1, 1), inst, [], sc)


def test_overtime_blocks_the_drone():
    sc = one_drone(period=1.0)
    sc = Scenario(**{**sc.__dict__, "big_m": 1.0})
    inst = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc)
    out = advance_fleet(FleetState.initial(1), Decision.from_assignment(np.ones((1, 1, 1))), inst, [2.0], sc)
    assert out.zeta[0] > 0 and out.availability[0] == 0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fleet_invariants(seed):
    rng = np.random.default_rng(seed)
    sc = random_scenario(rng, SHAPE)
    fire = random_fire(rng, SHAPE)
    fleet = FleetState.initial(sc.L)
    fleet.u = rng.uniform(sc.reserve + 0.01, 1.0, sc.L)
    fleet.zeta = rng.uniform(0, 2 * sc.period, sc.L)
    inst = extract_instance(fire, sc, fleet)
    x = (rng.random((inst.I, inst.J, inst.L)) < 0.4) & inst.eligible()
    used = 2.0 * np.einsum("ijl,ij->l", x, inst.D)
    x &= (used <= inst.battery * inst.u)[None, None, :]
    tau = sample_delivery_times(inst.mu, np.diag(inst.sigma), rng)
    out = advance_fleet(fleet, Decision.from_assignment(x), inst, tau, sc)
    assert np.all((out.u > sc.reserve) | (out.u == 1.0))
    assert np.all((0 <= out.u) & (out.u <= 1))
    work = np.einsum("ijl,ij->l", x, 2 * inst.D / sc.speed + tau[:, None])
    assert np.all(out.zeta >= 0)
    assert np.all(out.zeta - np.maximum(0, fleet.zeta - sc.period) <= work + 1e-9)


def test_delivery_time_moments():
    rng = np.random.default_rng(0)
    draws = np.array([sample_delivery_times([2.0, 0.5], [0.3, 0.01], rng) for _ in range(20000)])
    assert np.allclose(draws.mean(axis=0), [2.0, 0.5], rtol=0.02)
    assert np.allclose(draws.var(axis=0), [0.3, 0.01], rtol=0.1)
    assert np.all(draws > 0)


# ---------------------------------------------------------------- terminal coverage

def test_terminal_check_cases():
    sc = Scenario(bases=[(0, 0)], drones=[{"home": 0, "battery_range": 50}] * 3, speed=2.0,
                  weights=(1, 1, 1), period=9.0, safe_distance=1.0, reserve=0.2, risk=0.1,
                  robust=RobustSpec.parametric(SHAPE))
    empty = extract_instance(FireMap.empty(*SHAPE), sc)
    assert terminal_check(empty, Decision.zeros(0, 1, 3))
    one = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc)
    x = np.zeros((1, 1, 3))
    x[0, 0, 0] = 1
    assert terminal_check(one, Decision.from_assignment(x))
    frac = extract_instance(FireMap.empty(*SHAPE).ignite([(0, 3)], 2.4), sc)
    x[0, 0, 1] = 1
    assert not terminal_check(frac, Decision.from_assignment(x))


# ---------------------------------------------------------------- episodes

def test_episode_without_fire():
    rng = np.random.default_rng(0)
    trace = run_episode(FireMap.empty(*SHAPE), one_drone(), "mip_ccro", 4, sq_model=eager_model(rng))
    assert trace.periods == [] and trace.rounds == 0 and trace.moves == 0
    assert trace.status == "contained"


@pytest.mark.parametrize("planner", ["mip_ccro", "mip_plain", "ga"])
def test_single_fire_one_sortie(planner):
    rng = np.random.default_rng(1)
    fuel = np.zeros(SHAPE, bool)
    fuel[0, 4] = True
    g = np.zeros(SHAPE)
    g[0, 4] = 1.0
    sc = one_drone(battery=100.0, period=20.0, weights=(10, 0.1, 0.01))
    trace = run_episode(FireMap(fuel, g), sc, planner, 5, seed=3, sq_model=eager_model(rng))
    assert trace.rounds == 1
    assert trace.moves == pytest.approx(8.0)
    assert trace.status == "contained" and trace.final_cost == 0


def test_trace_totals_and_determinism(tmp_path):
    rng = np.random.default_rng(2)
    sc = random_scenario(rng, SHAPE, n_bases=2, n_drones=2, period=6.0)
    fire = random_fire(rng, SHAPE, n_fire=2)
    model = eager_model(rng)
    a = run_episode(fire, sc, "mip_ccro", 4, seed=9, weather=Weather("E", 0.4, 0.0), sq_model=model)
    b = run_episode(fire, sc, "mip_ccro", 4, seed=9, weather=Weather("E", 0.4, 0.0), sq_model=model)
    a.write_jsonl(tmp_path / "a.jsonl")
    b.write_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.moves == pytest.approx(sum(p.moves for p in a.periods))
    assert a.rounds == sum(1 for p in a.periods if p.decision.x.sum() > 0)
    assert a.burn_cost == sum(p.burn_cost for p in a.periods) + a.final_cost
    last = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[-1])
    assert last["summary"] and last["moves"] == round(a.moves, 9)


def test_early_stop_means_no_fire():
    rng = np.random.default_rng(3)
    fuel = np.zeros(SHAPE, bool)
    fuel[0, 4] = True
    g = np.zeros(SHAPE)
    g[0, 4] = 1.0
    sc = one_drone(battery=100.0, period=20.0, weights=(10, 0.1, 0.01))
    trace = run_episode(FireMap(fuel, g), sc, "mip_ccro", 6, sq_model=eager_model(rng))
    assert len(trace.periods) < 6
    assert trace.final_cost == 0


def test_custom_planner_faults_are_wrapped():
    from firedrone.rollout import PlannerError

    def broken(fire, scenario, fleet, terminal, seed):
        raise RuntimeError("boom")

    sc = one_drone()
    with pytest.raises(PlannerError, match="period 0"):
        run_episode(FireMap.empty(*SHAPE).ignite([(0, 3)]), sc, broken, 2)


def test_custom_planner_interface():
    def idle(fire, scenario, fleet, terminal, seed):
        inst = extract_instance(fire, scenario, fleet)
        return PlanOutcome(Decision.zeros(inst.I, inst.J, inst.L), 0.0, True, inst)

    sc = one_drone()
    trace = run_episode(FireMap.empty(*SHAPE).ignite([(2, 2)]), sc, idle, 3, weather=Weather("N", 0.5, 0.0))
    assert len(trace.periods) == 3 and trace.moves == 0 and trace.rounds == 0


def test_initial_conditions_from_environment():
    sc = one_drone(shape=(6, 6))
    sc = Scenario(**{**sc.__dict__, "environment": {
        "grid": [6, 6], "seed": 1, "fuel_density": 0.5, "firebreaks": [[0, 0, 0, 5]],
        "ignitions": [[3, 3, 2], [4, 4]], "wind_direction": "S", "wind_speed": 0.3, "moisture": 0.1}})
    fire, weather = initial_conditions(sc)
    assert fire.intensity[3, 3] == 2 and fire.intensity[4, 4] == 1
    assert not fire.fuel[0].any()
    assert weather.wind_direction == "S"
