"""Random tiny instances and models shared by the solver tests."""
import numpy as np

from firedrone.firegrid import FireMap
from firedrone.model import FleetState, RobustSpec, Scenario, extract_instance
from firedrone.predictor import IcnnModel


def random_sq_model(shape, rng, hidden=8):
    m = IcnnModel.init("SQ", shape, hidden, rng)
    n = m.n_cells + 1
    m.params["vc"] = -np.abs(rng.normal(0.0, 1.0, n))
    m.params["uc"] = np.abs(rng.normal(0.0, 0.3, n))
    m.params["bc"] = np.array([rng.uniform(1.0, 4.0)])
    return m


def random_scenario(rng, shape=(5, 5), n_bases=None, n_drones=None, correlation=None, **kw):
    J = n_bases or int(rng.integers(1, 3))
    L = n_drones or int(rng.integers(1, 3))
    bases = [tuple(int(v) for v in rng.integers(0, shape)) for _ in range(J)]
    drones = [{"home": int(rng.integers(0, J)), "battery_range": float(rng.uniform(8, 30))} for _ in range(L)]
    rho = float(rng.uniform(0, 0.6)) if correlation is None else correlation
    robust = RobustSpec.parametric(shape, mean=rng.uniform(0.2, 1.0, shape), std=rng.uniform(0.05, 0.5, shape),
                                   correlation=rho, length_scale=1.5)
    args = dict(bases=bases, drones=drones, speed=float(rng.uniform(2, 5)),
                weights=(float(rng.uniform(0.5, 3)), float(rng.uniform(0, 2)), float(rng.uniform(0.01, 0.3))),
                period=float(rng.uniform(1.5, 8)), safe_distance=1.0, reserve=0.2,
                risk=float(rng.uniform(0.05, 0.3)), robust=robust)
    args.update(kw)
    return Scenario(**args)


def random_fire(rng, shape=(5, 5), n_fire=None):
    k = n_fire if n_fire is not None else int(rng.integers(1, 4))
    flat = rng.choice(shape[0] * shape[1], size=k, replace=False)
    fire = FireMap.empty(*shape)
    cells = [divmod(int(f), shape[1]) for f in flat]
    fire = fire.ignite(cells, 1.0)
    inten = np.array(fire.intensity)
    for r, c in cells:
        inten[r, c] = rng.uniform(0.5, 2.5)
    return FireMap(fire.fuel, inten)


def random_tiny(rng, shape=(5, 5)):
    """Scenario, map, fleet and instance with I*J*L <= 16."""
    while True:
        sc = random_scenario(rng, shape)
        fire = random_fire(rng, shape)
        fleet = FleetState.initial(sc.L)
        fleet.u = rng.uniform(0.3, 1.0, sc.L)
        inst = extract_instance(fire, sc, fleet)
        if inst.I * inst.J * inst.L <= 16:
            return sc, fire, fleet, inst
