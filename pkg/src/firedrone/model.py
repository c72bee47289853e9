"""One-period task-allocation model.

Index conventions: fire points ``i`` (``I``), bases ``j`` (``J``), drones
``l`` (``L``).  A decision holds ``x[i, j, l]`` (drone ``l`` from base ``j``
serves fire point ``i``) and ``b[j]`` (base ``j`` active).  Per-drone vectors
over ``(i, j)`` pairs are flattened row-major, so pair ``(i, j)`` sits at
position ``i * J + j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .firegrid import FireMap

TOL = 1e-9


# ---------------------------------------------------------------------------
# static data


@dataclass(frozen=True, eq=False)
class RobustSpec:
    """Mean and covariance of bomb-delivery times over every map cell."""

    mu: np.ndarray
    sigma: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, RobustSpec):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.sigma, other.sigma)

    __hash__ = object.__hash__

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu of size {mu.size}")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise ValueError("sigma must be positive definite") from None
        if np.any(mu < 0):
            raise ValueError("mean delivery times must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def parametric(cls, shape, mean=1.0, std=0.3, correlation=0.0, length_scale=1.0):
        """``diag(std) [(1-rho) I + rho exp(-dist/length_scale)] diag(std)`` on the grid."""
        h, w = shape
        n = h * w
        mu = np.broadcast_to(np.asarray(mean, dtype=float), (h, w)).reshape(n)
        sd = np.broadcast_to(np.asarray(std, dtype=float), (h, w)).reshape(n)
        if not 0.0 <= correlation < 1.0:
            raise ValueError("correlation must lie in [0, 1)")
        corr = np.eye(n) * (1.0 - correlation)
        if correlation > 0:
            rr, cc = np.divmod(np.arange(n), w)
            dist = np.hypot(rr[:, None] - rr[None, :], cc[:, None] - cc[None, :])
            corr = corr + correlation * np.exp(-dist / length_scale)
        return cls(mu, sd[:, None] * corr * sd[None, :])

    def restrict(self, cells) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(cells, dtype=int)
        return self.mu[idx], self.sigma[np.ix_(idx, idx)]


@dataclass(frozen=True)
class DroneSpec:
    home: int
    battery_range: float


@dataclass(frozen=True)
class Scenario:
    bases: tuple
    drones: tuple
    speed: float
    weights: tuple
    period: float
    safe_distance: float
    reserve: float
    risk: float
    robust: RobustSpec
    big_m: float = 1e6
    tau_max: Optional[float] = None
    environment: Optional[dict] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(tuple(int(v) for v in b) for b in self.bases))
        object.__setattr__(self, "drones", tuple(
            d if isinstance(d, DroneSpec) else DroneSpec(int(d["home"]), float(d["battery_range"]))
            for d in self.drones
        ))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ValueError("weights must be three nonnegative numbers")
        if self.period <= 0:
            raise ValueError("period length must be positive")
        if not 0.0 < self.risk < 0.5:
            raise ValueError("risk level must lie in (0, 0.5)")
        if not 0.0 < self.reserve < 1.0:
            raise ValueError("battery reserve must lie in (0, 1)")
        if self.speed <= 0 or self.big_m <= 0:
            raise ValueError("speed and big_m must be positive")
        for d in self.drones:
            if not 0 <= d.home < len(self.bases):
                raise ValueError(f"drone home base {d.home} out of range")
            if d.battery_range <= 0:
                raise ValueError("battery range must be positive")

    @property
    def J(self) -> int:
        return len(self.bases)

    @property
    def L(self) -> int:
        return len(self.drones)

    @property
    def kappa(self) -> float:
        return (1.0 - self.risk) / self.risk

    @property
    def houses(self) -> np.ndarray:
        """``y[j, l] = 1`` when drone ``l`` is housed at base ``j``."""
        y = np.zeros((self.J, self.L), dtype=bool)
        for l, d in enumerate(self.drones):
            y[d.home, l] = True
        return y

    @property
    def battery(self) -> np.ndarray:
        return np.array([d.battery_range for d in self.drones], dtype=float)


@dataclass
class FleetState:
    """Per-drone battery fraction, carry-over overtime, swap flag and availability."""

    u: np.ndarray
    zeta: np.ndarray
    upsilon: np.ndarray
    availability: np.ndarray

    @classmethod
    def initial(cls, n_drones: int) -> "FleetState":
        return cls(
            u=np.ones(n_drones),
            zeta=np.zeros(n_drones),
            upsilon=np.ones(n_drones, dtype=int),
            availability=np.ones(n_drones, dtype=int),
        )

    def copy(self) -> "FleetState":
        return FleetState(self.u.copy(), self.zeta.copy(), self.upsilon.copy(), self.availability.copy())


# ---------------------------------------------------------------------------
# per-period data


@dataclass(frozen=True)
class Instance:
    cells: np.ndarray          # (I, 2) row/col of each fire point
    intensity: np.ndarray      # g_i
    D: np.ndarray              # (I, J) base-to-fire distance
    pi: np.ndarray             # (I, J) eligibility, D >= D_s
    houses: np.ndarray         # (J, L)
    availability: np.ndarray   # (L,)
    u: np.ndarray              # (L,) battery fraction
    battery: np.ndarray        # (L,) D_l
    mu: np.ndarray             # (I,)
    sigma: np.ndarray          # (I, I)
    context: np.ndarray        # (H, W) burning indicator of the source map
    speed: float

    @property
    def I(self) -> int:
        return len(self.cells)

    @property
    def J(self) -> int:
        return self.houses.shape[0]

    @property
    def L(self) -> int:
        return self.houses.shape[1]

    @property
    def shape(self) -> tuple:
        return self.context.shape

    @property
    def cell_index(self) -> np.ndarray:
        return self.cells[:, 0] * self.shape[1] + self.cells[:, 1]

    @property
    def demand(self) -> np.ndarray:
        """Drones needed to extinguish each fire point, ceil(g_i)."""
        return np.ceil(self.intensity - 1e-12).astype(int)

    def eligible(self, b=None) -> np.ndarray:
        """``(I, J, L)`` mask of assignments allowed by availability, housing and safety."""
        ok = self.pi[:, :, None] & self.houses[None, :, :] & (self.availability[None, None, :] > 0)
        if b is not None:
            ok = ok & (np.asarray(b)[None, :, None] > 0)
        return ok

    def quench_counts(self, x) -> np.ndarray:
        grid = np.zeros(self.shape)
        if self.I:
            grid[self.cells[:, 0], self.cells[:, 1]] = np.asarray(x).sum(axis=(1, 2))
        return grid

    def quench_grid(self, x) -> np.ndarray:
        """Per-cell quench fraction ``sum_jl x_ijl / ceil(g_i)`` fed to the SQ model."""
        grid = np.zeros(self.shape)
        if self.I:
            grid[self.cells[:, 0], self.cells[:, 1]] = np.asarray(x, dtype=float).sum(axis=(1, 2)) / self.demand
        return grid


@dataclass
class Decision:
    x: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x).astype(np.int8)
        self.b = np.asarray(self.b).astype(np.int8)
        if self.x.ndim != 3 or self.b.ndim != 1 or self.x.shape[1] != self.b.shape[0]:
            raise ValueError(f"inconsistent decision shapes x{self.x.shape} b{self.b.shape}")
        if not (np.isin(self.x, (0, 1)).all() and np.isin(self.b, (0, 1)).all()):
            raise ValueError("decision entries must be binary")

    @classmethod
    def zeros(cls, I: int, J: int, L: int) -> "Decision":
        return cls(np.zeros((I, J, L), dtype=np.int8), np.zeros(J, dtype=np.int8))

    @classmethod
    def from_assignment(cls, x) -> "Decision":
        """Decision whose active bases are exactly the ones used by ``x``."""
        x = np.asarray(x)
        return cls(x, (x.sum(axis=(0, 2)) > 0).astype(np.int8))

    @property
    def n_assignments(self) -> int:
        return int(self.x.sum())


def extract_instance(fire: FireMap, scenario: Scenario, fleet: Optional[FleetState] = None) -> Instance:
    fleet = fleet or FleetState.initial(scenario.L)
    cells = np.argwhere(fire.burning)
    flat = cells[:, 0] * fire.width + cells[:, 1]
    if scenario.robust.mu.size != fire.height * fire.width:
        raise ValueError("robust spec does not cover the map")
    bases = np.asarray(scenario.bases, dtype=float).reshape(-1, 2)
    if len(cells):
        D = np.hypot(cells[:, None, 0] - bases[None, :, 0], cells[:, None, 1] - bases[None, :, 1])
    else:
        D = np.zeros((0, scenario.J))
    mu, sigma = scenario.robust.restrict(flat)
    return Instance(
        cells=cells.astype(int),
        intensity=fire.intensity[fire.burning].astype(float),
        D=D,
        pi=D >= scenario.safe_distance,
        houses=scenario.houses,
        availability=np.asarray(fleet.availability, dtype=int).copy(),
        u=np.asarray(fleet.u, dtype=float).copy(),
        battery=scenario.battery,
        mu=mu,
        sigma=sigma,
        context=fire.burning.astype(float),
        speed=float(scenario.speed),
    )


# ---------------------------------------------------------------------------
# objective and deterministic constraints


def movement(instance: Instance, decision: Decision) -> float:
    """Total flown distance, ``2 * sum x_ijl D_ij``."""
    if instance.I == 0:
        return 0.0
    return float(2.0 * np.einsum("ijl,ij->", decision.x, instance.D))


def objective(instance: Instance, decision: Decision, predicted_cost: float, scenario: Scenario) -> float:
    w1, w2, w3 = scenario.weights
    return w1 * float(predicted_cost) + w2 * float(decision.b.sum()) + w3 * movement(instance, decision)


class Violation(NamedTuple):
    constraint: str
    index: tuple
    amount: float


def check_deterministic(instance: Instance, decision: Decision, scenario: Scenario) -> list[Violation]:
    x, b = decision.x, decision.b
    if x.shape != (instance.I, instance.J, instance.L):
        raise ValueError(f"decision shape {x.shape} does not match instance")
    out = []
    # battery, per (j, l)
    used = 2.0 * np.einsum("ijl,ij->jl", x, instance.D) if instance.I else np.zeros((instance.J, instance.L))
    budget = instance.battery * instance.u
    for j, l in zip(*np.nonzero(used > budget[None, :] + TOL)):
        out.append(Violation("eq3_battery", (int(j), int(l)), float(used[j, l] - budget[l])))
    # availability / housing / safety / activation
    cap = instance.eligible(b)
    for i, j, l in np.argwhere((x > 0) & ~cap):
        out.append(Violation("eq4_availability", (int(i), int(j), int(l)), 1.0))
    # per-fire drone cap
    load = x.sum(axis=(1, 2))
    for i in np.nonzero(load > instance.demand)[0]:
        out.append(Violation("eq5_intensity_cap", (int(i),), float(load[i] - instance.demand[i])))
    # safe distance
    lhs = instance.pi * b[None, :] * scenario.safe_distance
    for i, j in np.argwhere(lhs > instance.D + TOL):
        out.append(Violation("eq8_safe_distance", (int(i), int(j)), float(lhs[i, j] - instance.D[i, j])))
    return out


# ---------------------------------------------------------------------------
# robust operating-time constraint


def block_matrix(I: int, J: int) -> np.ndarray:
    """``A`` (I x IJ): row ``i`` has ones in columns ``i*J .. i*J+J-1``."""
    return np.kron(np.eye(I), np.ones((1, J)))


def argmax_selector(x_l, D) -> np.ndarray:
    """One-hot ``m`` at the assigned pair of largest distance (lowest index on ties)."""
    x = np.asarray(x_l).reshape(-1)
    d = np.asarray(D, dtype=float).reshape(-1)
    m = np.zeros(x.size)
    if x.any():
        masked = np.where(x > 0, d, -np.inf)
        m[int(np.argmax(masked))] = 1.0
    return m


def service_costs(instance: Instance) -> np.ndarray:
    """``alpha^-1 D + A^T mu`` per (i, j) pair."""
    return (instance.D / instance.speed + instance.mu[:, None]).reshape(-1)


def time_moments(x_l, instance: Instance) -> tuple[float, float]:
    """Mean and worst-case variance of the drone's operating time for assignment ``x_l``."""
    x = np.asarray(x_l, dtype=float).reshape(-1)
    if not x.any():
        return 0.0, 0.0
    w = 2.0 * x - argmax_selector(x, instance.D)
    mean = float(w @ service_costs(instance))
    agg = w.reshape(instance.I, instance.J).sum(axis=1)
    return mean, float(agg @ instance.sigma @ agg)


def cantelli_margin(x_l, instance: Instance, scenario: Scenario) -> float:
    """``mean + sqrt(kappa * var) - period``; the assignment is robust-feasible iff <= 0."""
    mean, var = time_moments(x_l, instance)
    if mean == 0.0 and var == 0.0:
        return -scenario.period
    return mean + math.sqrt(scenario.kappa * max(var, 0.0)) - scenario.period


def cantelli_feasible(x_l, instance: Instance, scenario: Scenario) -> bool:
    mean, var = time_moments(x_l, instance)
    slack = scenario.period - mean
    return slack >= 0.0 and slack * slack >= scenario.kappa * var


def default_tau_max(instance: Instance, scenario: Scenario) -> float:
    if scenario.tau_max is not None:
        return float(scenario.tau_max)
    if instance.I == 0:
        return 0.0
    return float(np.max(instance.mu + 3.0 * np.sqrt(np.diag(instance.sigma))))


def plain_time(x_l, instance: Instance, tau_max: float) -> float:
    x = np.asarray(x_l, dtype=float).reshape(-1)
    if not x.any():
        return 0.0
    per = (instance.D / instance.speed).reshape(-1) + tau_max
    m = argmax_selector(x, instance.D)
    return float((2.0 * x - m) @ per)


def plain_time_feasible(x_l, instance: Instance, scenario: Scenario, tau_max: Optional[float] = None) -> bool:
    tau = default_tau_max(instance, scenario) if tau_max is None else tau_max
    return plain_time(x_l, instance, tau) <= scenario.period


def time_margin(x_l, instance: Instance, scenario: Scenario, mode: str, tau_max=None) -> float:
    """Amount by which the drone's time constraint is exceeded (``<= 0`` means feasible)."""
    if mode == "ccro":
        return cantelli_margin(x_l, instance, scenario)
    if mode == "plain":
        tau = default_tau_max(instance, scenario) if tau_max is None else tau_max
        return plain_time(x_l, instance, tau) - scenario.period
    if mode == "none":
        return -scenario.period
    raise ValueError(f"unknown time-constraint mode {mode!r}")


@dataclass(frozen=True)
class CcroConstraint:
    """Deterministic equivalent of the per-drone robust time constraint."""

    A: np.ndarray
    Q: np.ndarray
    linear_mean: np.ndarray
    distances: np.ndarray
    period: float
    kappa: float
    big_m: float
    eligible: np.ndarray
    psd: bool

    def quadratic(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.Q @ w + 2.0 * self.period * (w @ self.linear_mean) - self.period**2)

    def linear(self, w) -> float:
        return float(np.asarray(w, dtype=float) @ self.linear_mean - self.period)

    def selectors(self, x) -> list[tuple[np.ndarray, float]]:
        """All ``(m, theta)`` consistent with the max-distance linkage for binary ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if not x.any():
            return [(np.zeros(x.size), 0.0)]
        xd = x * self.distances
        theta = float(xd.max())
        out = []
        for k in np.nonzero(x > 0)[0]:
            m = np.zeros(x.size)
            m[k] = 1.0
            out.append((m, theta))
        return [(m, t) for m, t in out if self.linkage_ok(x, m, t)]

    def linkage_ok(self, x, m, theta, tol=TOL) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        m = np.asarray(m, dtype=float).reshape(-1)
        xd = x * self.distances
        if np.any(xd > theta + tol):
            return False
        if np.any(theta > xd + self.big_m * (1.0 - m) + tol):
            return False
        # exactly one selector when the drone has work, none otherwise
        return abs(m.sum() - float(x.any())) <= tol and np.all(m <= x + tol)

    def satisfied(self, x, m, theta, tol=TOL) -> bool:
        w = 2.0 * np.asarray(x, dtype=float).reshape(-1) - np.asarray(m, dtype=float).reshape(-1)
        return (
            self.linkage_ok(x, m, theta, tol)
            and self.quadratic(w) <= tol
            and self.linear(w) <= tol
        )

    def feasible(self, x, tol=TOL) -> bool:
        return any(self.satisfied(x, m, t, tol) for m, t in self.selectors(x))


def build_ccro(instance: Instance, scenario: Scenario, drone: int) -> CcroConstraint:
    I, J = instance.I, instance.J
    try:
        np.linalg.cholesky(instance.sigma) if I else None
    except np.linalg.LinAlgError:
        raise ValueError("covariance restricted to the fire points is not positive definite") from None
    A = block_matrix(I, J)
    c = service_costs(instance)
    Q = scenario.kappa * (A.T @ instance.sigma @ A) - np.outer(c, c)
    eligible = instance.eligible()[:, :, drone].reshape(-1)
    idx = np.nonzero(eligible)[0]
    psd = True
    if idx.size:
        psd = bool(np.linalg.eigvalsh(Q[np.ix_(idx, idx)]).min() >= -1e-10)
    return CcroConstraint(
        A=A, Q=Q, linear_mean=c, distances=instance.D.reshape(-1), period=scenario.period,
        kappa=scenario.kappa, big_m=scenario.big_m, eligible=eligible, psd=psd,
    )


# ---------------------------------------------------------------------------
# scenario files


def _robust_from_json(rec: dict, shape) -> RobustSpec:
    if "mu" in rec:
        return RobustSpec(np.asarray(rec["mu"], dtype=float), np.asarray(rec["sigma"], dtype=float))
    return RobustSpec.parametric(
        shape,
        mean=rec.get("mean", 1.0),
        std=rec.get("std", 0.3),
        correlation=rec.get("correlation", 0.0),
        length_scale=rec.get("length_scale", 1.0),
    )


def scenario_from_dict(rec: dict) -> Scenario:
    shape = tuple(rec.get("grid", (20, 20)))
    return Scenario(
        bases=rec["bases"],
        drones=rec["drones"],
        speed=float(rec["speed"]),
        weights=rec["weights"],
        period=float(rec["period"]),
        safe_distance=float(rec["safe_distance"]),
        reserve=float(rec.get("reserve", 0.2)),
        risk=float(rec.get("risk", 0.05)),
        robust=_robust_from_json(rec.get("robust", {}), shape),
        big_m=float(rec.get("big_m", 1e6)),
        tau_max=rec.get("tau_max"),
        environment=rec.get("environment"),
        name=rec.get("name", ""),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    rec = json.loads(path.read_text())
    rec.setdefault("name", path.stem)
    return scenario_from_dict(rec)
