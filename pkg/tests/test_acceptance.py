"""Acceptance checks; each test prints one PASS/FAIL line.

The lines are also collected and repeated in pytest's terminal summary.
Run alone with ``pytest tests/test_acceptance.py -s`` to watch them live.
"""
import time

import numpy as np
import pytest

from firedrone.bench import BenchConfig, TrainSettings, bundled_scenarios, run_bench
from firedrone.firegrid import generate_pairs
from firedrone.model import FleetState, RobustSpec, build_ccro, cantelli_feasible, extract_instance
from firedrone.predictor import IcnnModel, evaluate
from firedrone.rollout import PLANNERS, run_episode
from firedrone.solver import enumerate_exact, plan_period

from helpers import random_fire, random_scenario, random_sq_model

pytestmark = pytest.mark.slow

RESULTS = []
HELD_OUT_SEED = 2024


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)


def random_pd(rng, n, scale=0.3):
    G = rng.normal(size=(n, n)) * scale
    return G @ G.T + 0.05 * np.eye(n)


# ---------------------------------------------------------------- shared artifacts

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Models trained with the bench's default recipe, plus the training time."""
    d = tmp_path_factory.mktemp("accept_models")
    cfg = BenchConfig(s_model=str(d / "s.icnn"), sq_model=str(d / "sq.icnn"), train=TrainSettings(),
                      output=str(d / "unused"))
    from firedrone.bench import load_or_train

    start = time.perf_counter()
    s, sq = load_or_train(cfg)
    return {"dir": d, "s": s, "sq": sq, "seconds": time.perf_counter() - start}


@pytest.fixture(scope="module")
def held_out():
    return (generate_pairs(20, 20, 9, False, HELD_OUT_SEED),
            generate_pairs(20, 20, 9, True, HELD_OUT_SEED))


@pytest.fixture(scope="module")
def bench_runs(trained, tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_bench")
    runs = []
    for tag in ("first", "second"):
        cfg = BenchConfig(scenarios=[str(p) for p in bundled_scenarios()], planners=list(PLANNERS),
                          seeds=[3], output=str(out / tag), s_model=str(trained["dir"] / "s.icnn"),
                          sq_model=str(trained["dir"] / "sq.icnn"), images=False)
        start = time.perf_counter()
        rep = run_bench(cfg)
        runs.append((rep, out / tag, time.perf_counter() - start))
    return runs


# ---------------------------------------------------------------- criteria

def test_criterion_1_ccro_equivalence():
    rng = np.random.default_rng(101)
    shape = (4, 4)
    start = time.perf_counter()
    probes = disagreements = 0
    while probes < 500:
        rob = RobustSpec(rng.uniform(0.1, 1.0, 16), random_pd(rng, 16))
        sc = random_scenario(rng, shape, n_bases=int(rng.integers(1, 3)), robust=rob,
                             period=float(rng.uniform(1.0, 8.0)))
        inst = extract_instance(random_fire(rng, shape, n_fire=int(rng.integers(1, 4))), sc)
        for l in range(sc.L):
            con = build_ccro(inst, sc, l)
            x = (rng.random(inst.I * inst.J) < 0.5).astype(float)
            disagreements += con.feasible(x) != cantelli_feasible(x, inst, sc)
            probes += 1
    elapsed = time.perf_counter() - start
    ok = disagreements == 0 and elapsed < 5.0
    report(1, ok, f"{probes} probes, {disagreements} disagreements, {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_2_solver_exactness():
    rng = np.random.default_rng(202)
    shape = (5, 5)
    start = time.perf_counter()
    worst = 0.0
    count = 0
    while count < 200:
        mode = ("ccro", "plain")[count % 2]
        rob = RobustSpec(rng.uniform(0.1, 0.8, 25), random_pd(rng, 25)) if count % 4 == 0 else None
        extra = {"robust": rob} if rob is not None else {}
        sc = random_scenario(rng, shape, **extra)
        fire = random_fire(rng, shape)
        fleet = FleetState.initial(sc.L)
        fleet.u = rng.uniform(0.3, 1.0, sc.L)
        inst = extract_instance(fire, sc, fleet)
        if inst.I * inst.J * inst.L > 16:
            continue
        model = random_sq_model(shape, rng)
        got = plan_period(fire, sc, fleet, None, model, mode)
        exact = enumerate_exact(inst, model, sc, mode)
        gap = abs(got.value - exact.value) if exact.feasible else (0.0 if not got.feasible else np.inf)
        worst = max(worst, gap)
        count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 120.0
    report(2, ok, f"{count} instances, max |plan - exact| = {worst:.2e}, {elapsed:.1f} s (limit 120 s)")
    assert ok


def test_criterion_3_predictor_quality(trained, held_out):
    s_pairs, sq_pairs = held_out
    ms, msq = evaluate(trained["s"], s_pairs), evaluate(trained["sq"], sq_pairs)
    ok = (ms.accuracy >= 0.90 and ms.specificity >= 0.95 and msq.accuracy >= 0.90
          and msq.specificity >= 0.95 and trained["seconds"] <= 600)
    report(3, ok, f"S acc {ms.accuracy:.4f} spec {ms.specificity:.4f}; "
                  f"SQ acc {msq.accuracy:.4f} spec {msq.specificity:.4f}; "
                  f"training {trained['seconds']:.0f} s (limit 600 s)")
    assert ok


def test_criterion_4_convexity(trained, held_out):
    sq: IcnnModel = trained["sq"]
    _, pairs = held_out
    rng = np.random.default_rng(404)

    def sample():
        # quench fractions live on burning cells; uniform noise elsewhere would clamp the cost to 0
        ctx = pairs[int(rng.integers(len(pairs)))].context
        return ctx, ctx * rng.random(sq.shape) * rng.random(), ctx * rng.random(sq.shape) * rng.random()

    mid = cut = 0.0
    active = 0
    for _ in range(1000):
        ctx, a, b = sample()
        fa, fb, fm = sq.cost(np.stack([ctx] * 3), np.stack([a, b, (a + b) / 2]))
        mid = max(mid, float(fm - (fa + fb) / 2))
        active += fm > 0
    for _ in range(1000):
        ctx, x, y = sample()
        fx, g = sq.cost_and_grad(ctx, x)
        fy, _ = sq.cost_and_grad(ctx, y)
        cut = max(cut, float(fx + np.sum(g * (y - x)) - fy))
        active += fx > 0
    ok = mid <= 1e-6 and cut <= 1e-6
    report(4, ok, f"1000 midpoint probes, worst violation {max(mid, 0):.2e}; "
                  f"1000 cut probes, worst violation {max(cut, 0):.2e} (limit 1e-6); "
                  f"{active}/2000 probes with positive cost")
    assert ok


def test_criterion_5_move_reduction(bench_runs):
    rep, _, seconds = bench_runs[0]
    parts, ok = [], seconds < 600
    for s in rep.scenarios:
        ccro, plain = rep.mean("moves", "mip_ccro", s), rep.mean("moves", "mip_plain", s)
        bc, bp = rep.mean("burn_cost", "mip_ccro", s), rep.mean("burn_cost", "mip_plain", s)
        ok &= ccro <= plain + 1e-9 and bc == bp
        parts.append(f"{s} {ccro:.1f}/{plain:.1f} burn {bc:.0f}/{bp:.0f}")
    mean = rep.mean_reduction()
    ok &= mean >= 15.0 and len(rep.scenarios) == 4
    report(5, ok, f"moves ccro/plain: {'; '.join(parts)}; mean reduction {mean:.1f}% (need 15%); "
                  f"{seconds:.0f} s (limit 600 s)")
    assert ok


def test_criterion_6_ga_inferiority(bench_runs):
    rep, _, _ = bench_runs[0]
    parts, ok = [], True
    uncontained = 0
    for s in rep.scenarios:
        ccro, ga = rep.mean("burn_cost", "mip_ccro", s), rep.mean("burn_cost", "ga", s)
        ok &= ccro <= ga
        lost = sum(r.status == "uncontained" for r in rep.select("ga", s))
        uncontained += lost > 0
        parts.append(f"{s} {ccro:.0f}/{ga:.0f}{' (GA uncontained)' if lost else ''}")
    ok &= uncontained >= 1
    report(6, ok, f"burn ccro/GA: {'; '.join(parts)}")
    assert ok


def test_criterion_7_fleet_invariants():
    rng = np.random.default_rng(707)
    shape = (5, 5)
    transitions = floor_bad = zeta_bad = 0
    for k in range(100):
        sc = random_scenario(rng, shape, n_bases=int(rng.integers(1, 3)), n_drones=int(rng.integers(1, 4)))
        fire = random_fire(rng, shape, n_fire=int(rng.integers(1, 4)))
        model = random_sq_model(shape, rng)
        model.params["vc"][:] = -1.0
        planner = ("mip_ccro", "mip_plain")[k % 2]
        trace = run_episode(fire, sc, planner, 4, seed=k, sq_model=model)
        for p in trace.periods:
            transitions += 1
            before, after = p.fleet_before, p.fleet_after
            floor_bad += int(np.any(~((after.u > sc.reserve) | (after.u == 1.0))))
            inst = extract_instance(p.fire, sc, before)
            x = p.decision.x.astype(float)
            work = np.einsum("ijl,ij->l", x, 2.0 * inst.D / sc.speed + p.tau[:, None])
            expect = np.maximum(0.0, before.zeta + work - sc.period)
            zeta_bad += int(not np.array_equal(after.zeta, expect))
            zeta_bad += int(np.any(after.zeta - np.maximum(0.0, before.zeta - sc.period) > work + 1e-12))
    ok = floor_bad == 0 and zeta_bad == 0 and transitions > 0
    report(7, ok, f"100 episodes, {transitions} transitions, {floor_bad} battery-floor and "
                  f"{zeta_bad} overtime bookkeeping violations")
    assert ok


def test_criterion_8_determinism(bench_runs):
    (_, first, _), (_, second, _) = bench_runs
    same = (first / "report.csv").read_bytes() == (second / "report.csv").read_bytes()
    report(8, same, f"report.csv byte-identical across two bench runs: {same}")
    assert same
