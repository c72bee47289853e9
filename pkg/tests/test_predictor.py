import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from firedrone.firegrid import FireMap, augment, generate_pairs
from firedrone.predictor import (
    IcnnModel,
    QuenchPredictor,
    SpreadPredictor,
    cost_subgradient,
    evaluate,
    metrics,
    predict_s,
    predict_sq,
    train_s,
    train_sq,
)

from helpers import random_sq_model

SHAPE = (6, 6)


@pytest.fixture(scope="module")
def small_pairs():
    return generate_pairs(8, 12, 5, True, seed=7)


def burning_context(rng, shape=SHAPE, p=0.3):
    return (rng.random(shape) < p).astype(float)


def quench_on(ctx, rng):
    """Random quench fractions on the burning cells only, the planners' domain."""
    return ctx * rng.random(ctx.shape)


# ---------------------------------------------------------------- metrics

def test_metrics_example():
    pred = np.zeros(100, bool)
    true = np.zeros(100, bool)
    true[:10] = True
    pred[:9] = True
    pred[10] = True
    m = metrics(pred, true)
    assert (m.tp, m.fn, m.fp, m.tn) == (9, 1, 1, 89)
    assert m.sensitivity == pytest.approx(0.9)
    assert m.precision == pytest.approx(0.9)
    assert m.specificity == pytest.approx(89 / 90)
    assert m.accuracy == pytest.approx(0.98)


def test_metrics_empty_classes():
    m = metrics(np.zeros(5), np.zeros(5))
    assert m.accuracy == 1.0 and m.sensitivity == 1.0 and m.specificity == 1.0


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        metrics(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- convexity

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(0.0, 1.0))
def test_cost_convex_in_quench(seed, lam):
    rng = np.random.default_rng(seed)
    model = random_sq_model(SHAPE, rng)
    ctx = burning_context(rng)
    a, b = quench_on(ctx, rng), quench_on(ctx, rng)
    f = lambda q: float(model.cost(ctx[None], q[None])[0])
    mix = lam * a + (1 - lam) * b
    assert f(mix) <= lam * f(a) + (1 - lam) * f(b) + 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_subgradient_inequality(seed):
    rng = np.random.default_rng(seed)
    model = random_sq_model(SHAPE, rng)
    ctx = burning_context(rng)
    x, y = quench_on(ctx, rng), quench_on(ctx, rng)
    fx, g = model.cost_and_grad(ctx, x)
    fy, _ = model.cost_and_grad(ctx, y)
    assert fy >= fx + float(np.sum(g * (y - x))) - 1e-9


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    model = random_sq_model(SHAPE, rng)
    ctx = burning_context(rng)
    x = 0.1 * rng.random(SHAPE)
    model.params["bc"] += 5.0  # keep the cost head active around x
    f0, g = model.cost_and_grad(ctx, x)
    assert f0 > 0
    h = 1e-6
    num = np.zeros(SHAPE)
    for idx in np.ndindex(SHAPE):
        e = np.zeros(SHAPE)
        e[idx] = h
        num[idx] = (model.cost_and_grad(ctx, x + e)[0] - model.cost_and_grad(ctx, x - e)[0]) / (2 * h)
    assert np.allclose(num, g, atol=1e-4)


def test_cost_nonincreasing_in_quench():
    rng = np.random.default_rng(2)
    model = random_sq_model(SHAPE, rng)
    ctx = burning_context(rng)
    q = quench_on(ctx, rng) * 0.5
    more = np.minimum(q + quench_on(ctx, rng) * 0.5, 1.0)
    assert model.cost(ctx[None], more[None])[0] <= model.cost(ctx[None], q[None])[0] + 1e-12


def test_projection_restores_constraints():
    rng = np.random.default_rng(0)
    model = IcnnModel.init("SQ", SHAPE, 8, rng)
    for name in ("W1", "wc"):
        model.params[name] -= 5.0
    for name in ("V0", "V1", "vc"):
        model.params[name] += 5.0
    model.project()
    assert model.min_constrained_weight() >= 0
    for name in ("V0", "V1", "vc"):
        assert model.params[name].max() <= 0


def test_s_model_has_no_cost_head():
    model = IcnnModel.init("S", SHAPE, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        model.cost(np.zeros((1,) + SHAPE), np.zeros((1,) + SHAPE))


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("kind", ["S", "SQ"])
def test_checkpoint_round_trip(tmp_path, kind):
    rng = np.random.default_rng(1)
    model = IcnnModel.init(kind, SHAPE, 6, rng)
    path = tmp_path / f"{kind}.icnn"
    model.save(path)
    back = IcnnModel.load(path)
    assert back.kind == kind and back.shape == SHAPE
    ctx = burning_context(rng)[None]
    q = rng.random(SHAPE)[None] if kind == "SQ" else None
    assert np.array_equal(model.burn_probability(ctx, q), back.burn_probability(ctx, q))
    assert back.to_bytes() == model.to_bytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        IcnnModel.from_bytes(b"NOPE" + bytes(20))
    data = IcnnModel.init("S", SHAPE, 4, np.random.default_rng(0)).to_bytes()
    with pytest.raises(ValueError):
        IcnnModel.from_bytes(data + b"\x00")


# ---------------------------------------------------------------- training

def test_training_is_deterministic(small_pairs):
    hyper = {"epochs": 2, "hidden": 8}
    a = train_sq(small_pairs, hyper, seed=3)
    b = train_sq(small_pairs, hyper, seed=3)
    assert a.to_bytes() == b.to_bytes()


def test_trained_models_keep_convexity(small_pairs):
    sq = train_sq(small_pairs, {"epochs": 3, "hidden": 8}, seed=0)
    assert sq.min_constrained_weight() >= 0
    assert sq.params["vc"].max() <= 0
    s = train_s([p for p in small_pairs], {"epochs": 2, "hidden": 8}, seed=0)
    assert s.kind == "S"


def test_training_beats_trivial_baseline(small_pairs):
    sq = train_sq(augment(small_pairs), {"epochs": 4, "hidden": 16}, seed=0)
    m = evaluate(sq, small_pairs)
    assert m.accuracy >= 0.9
    assert m.specificity >= 0.9


def test_train_rejects_bad_input(small_pairs):
    with pytest.raises(ValueError):
        train_s([])
    s_only = generate_pairs(1, 12, 3, False, seed=0)
    with pytest.raises(ValueError):
        train_sq(s_only)


def test_estimators_follow_sklearn_conventions():
    est = SpreadPredictor(hidden=4, epochs=1, random_state=0)
    assert clone(est).get_params() == est.get_params()
    q = QuenchPredictor(hidden=4, epochs=1)
    assert "hidden" in q.get_params()


def test_predict_helpers():
    rng = np.random.default_rng(4)
    sq = random_sq_model(SHAPE, rng)
    fire = FireMap.empty(*SHAPE).ignite([(2, 2), (2, 3)])
    nxt, cost = predict_sq(sq, fire, np.zeros(SHAPE))
    assert nxt.shape == SHAPE and cost >= 0
    _, cost_full = predict_sq(sq, fire, fire.burning.astype(float))
    assert cost_full <= cost + 1e-12
    s = IcnnModel.init("S", SHAPE, 4, rng)
    assert predict_s(s, fire).shape == SHAPE
    with pytest.raises(ValueError):
        predict_sq(sq, FireMap.empty(3, 3), np.zeros((3, 3)))


def test_subgradient_in_assignment_space():
    from firedrone.model import FleetState, extract_instance
    from helpers import random_fire, random_scenario

    rng = np.random.default_rng(9)
    sc = random_scenario(rng, SHAPE, n_bases=1, n_drones=2)
    fire = random_fire(rng, SHAPE, n_fire=2)
    inst = extract_instance(fire, sc, FleetState.initial(sc.L))
    sq = random_sq_model(SHAPE, rng)
    x = np.zeros((inst.I, inst.J, inst.L))
    value, g = cost_subgradient(sq, fire, x, inst)
    assert g.shape == x.shape
    assert value == pytest.approx(cost_subgradient(sq, fire, inst.quench_grid(x))[0])


def test_constant_no_fire_dataset():
    from firedrone.firegrid import TrainingPair

    pairs = [TrainingPair(np.zeros(SHAPE), np.zeros(SHAPE)) for _ in range(20)]
    s = train_s(pairs, {"epochs": 5, "hidden": 8}, seed=0)
    assert evaluate(s, pairs).accuracy == 1.0
    assert not predict_s(s, FireMap.empty(*SHAPE)).burning.any()


def test_full_quench_dataset_predicts_near_zero_cost():
    from firedrone.firegrid import TrainingPair

    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(30):
        burning = rng.random(SHAPE) < 0.3
        pairs.append(TrainingPair(np.where(burning, 2, 0), np.zeros(SHAPE),
                                  quench=burning.astype(float), next_cost=0.0))
    sq = train_sq(pairs, {"epochs": 10, "hidden": 8}, seed=0)
    ctx = np.stack([p.context for p in pairs])
    q = np.stack([p.quench for p in pairs])
    assert np.all(sq.cost(ctx, q) <= 0.5)


def test_cut_is_tight_at_its_point():
    rng = np.random.default_rng(12)
    model = random_sq_model(SHAPE, rng)
    ctx = burning_context(rng)
    x = quench_on(ctx, rng)
    fx, g = model.cost_and_grad(ctx, x)
    assert fx + float(np.sum(g * 0.0)) == fx
    assert fx >= 0
