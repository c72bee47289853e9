"""Grid fire-spread simulator, quench application and training-pair generation.

The spread model is a probabilistic 8-neighbourhood cellular automaton.  A
non-burning fuel cell next to burning cells ignites with probability
``1 - prod(1 - p_k)`` over its burning neighbours ``k`` where each
``p_k = base_p * wind_alignment * (1 - moisture)`` (clipped to 1).  All
randomness comes from a generator seeded by the caller, so a given
``(map, weather, seed)`` always produces the same next map.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ._validation import check_grid, check_probability

COMPASS = {
    "N": (-1, 0),
    "NE": (-1, 1),
    "E": (0, 1),
    "SE": (1, 1),
    "S": (1, 0),
    "SW": (1, -1),
    "W": (0, -1),
    "NW": (-1, -1),
}
NEIGHBOURS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]

# burning, quenched-and-burning
STATE_BURNING = 1
STATE_QUENCHED = 2


@dataclass(frozen=True)
class FireMap:
    """Per-cell fuel flags and fire intensities (0 means not burning)."""

    fuel: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        fuel = np.asarray(self.fuel, dtype=bool)
        intensity = check_grid(self.intensity, name="intensity")
        if fuel.shape != intensity.shape:
            raise ValueError(f"fuel {fuel.shape} and intensity {intensity.shape} differ")
        if np.any(intensity < 0):
            raise ValueError("intensity must be nonnegative")
        if np.any(intensity[~fuel] > 0):
            raise ValueError("non-fuel cells cannot burn")
        fuel.setflags(write=False)
        intensity.setflags(write=False)
        object.__setattr__(self, "fuel", fuel)
        object.__setattr__(self, "intensity", intensity)

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape

    @property
    def burning(self) -> np.ndarray:
        return self.intensity > 0

    @classmethod
    def empty(cls, height: int, width: int, fuel=True) -> "FireMap":
        return cls(np.full((height, width), bool(fuel)), np.zeros((height, width)))

    def ignite(self, cells: Iterable, intensity: float = 1.0) -> "FireMap":
        """Return a copy with the given ``(row, col)`` cells burning."""
        g = self.intensity.copy()
        for r, c in cells:
            if not self.fuel[r, c]:
                raise ValueError(f"cell {(r, c)} has no fuel")
            g[r, c] = intensity
        return FireMap(self.fuel, g)

    def __eq__(self, other):
        if not isinstance(other, FireMap):
            return NotImplemented
        return np.array_equal(self.fuel, other.fuel) and np.array_equal(
            self.intensity, other.intensity
        )

    __hash__ = None


@dataclass(frozen=True)
class Weather:
    wind_direction: str = "E"
    wind_speed: float = 0.0
    moisture: float = 0.0

    def __post_init__(self):
        if self.wind_direction not in COMPASS:
            raise ValueError(f"unknown wind direction {self.wind_direction!r}")
        check_probability(self.wind_speed, "wind_speed")
        check_probability(self.moisture, "moisture")

    def rotated(self, quarter_turns: int) -> "Weather":
        """Wind direction after rotating the grid counter-clockwise."""
        dr, dc = COMPASS[self.wind_direction]
        for _ in range(quarter_turns % 4):
            dr, dc = -dc, dr
        name = next(k for k, v in COMPASS.items() if v == (dr, dc))
        return replace(self, wind_direction=name)


@dataclass(frozen=True)
class SpreadConfig:
    base_p: float = 0.2
    decay: float = 0.0
    cap: float = 3.0
    ignition_intensity: float = 1.0
    wind_floor: float = 0.2
    cost: str = "count"  # or "intensity_sum"

    def __post_init__(self):
        check_probability(self.base_p, "base_p")
        check_probability(self.decay, "decay")
        if self.cap <= 0 or self.ignition_intensity <= 0:
            raise ValueError("cap and ignition_intensity must be positive")
        if self.cost not in ("count", "intensity_sum"):
            raise ValueError(f"unknown burn cost mode {self.cost!r}")


DEFAULT_SPREAD = SpreadConfig()


def wind_alignment(offset: tuple[int, int], weather: Weather, floor: float = 0.2) -> float:
    """Multiplier ``max(floor, 1 + speed * cos(angle))`` for spreading along ``offset``."""
    w = np.asarray(COMPASS[weather.wind_direction], dtype=float)
    d = np.asarray(offset, dtype=float)
    cos = float(d @ w / (np.linalg.norm(d) * np.linalg.norm(w)))
    return max(floor, 1.0 + weather.wind_speed * cos)


def _shift(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Move ``a`` by ``(dr, dc)`` with zero fill (no wrap-around)."""
    out = np.zeros_like(a)
    h, w = a.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = a[
        max(-dr, 0):h + min(-dr, 0), max(-dc, 0):w + min(-dc, 0)
    ]
    return out


def ignition_probability(
    burning: np.ndarray, weather: Weather, config: SpreadConfig = DEFAULT_SPREAD
) -> np.ndarray:
    """Per-cell probability of being ignited by burning neighbours this step."""
    no_ignite = np.ones(burning.shape)
    damp = 1.0 - weather.moisture
    for off in NEIGHBOURS:
        p = min(1.0, config.base_p * wind_alignment(off, weather, config.wind_floor) * damp)
        if p <= 0.0:
            continue
        src = _shift(burning, *off)
        no_ignite = np.where(src, no_ignite * (1.0 - p), no_ignite)
    return 1.0 - no_ignite


def step_spread(
    fire: FireMap, weather: Weather, seed, config: SpreadConfig = DEFAULT_SPREAD
) -> FireMap:
    rng = np.random.default_rng(seed)
    draws = rng.random(fire.shape)
    burning = fire.burning

    p = ignition_probability(burning, weather, config)
    new = ~burning & fire.fuel & (draws < p)

    fuel = fire.fuel.copy()
    g = np.where(burning, np.minimum(fire.intensity * (1.0 - config.decay), config.cap), 0.0)
    # decay to (numerically) zero exhausts the fuel
    exhausted = burning & (g < 1e-9)
    g[exhausted] = 0.0
    fuel[exhausted] = False
    g[new] = min(config.ignition_intensity, config.cap)
    return FireMap(fuel, g)


def apply_quench(fire: FireMap, quench) -> FireMap:
    """Reduce each cell's intensity by its drone count (capacity 1 per drone)."""
    k = check_grid(quench, name="quench")
    if k.shape != fire.shape:
        raise ValueError(f"quench shape {k.shape} does not match map {fire.shape}")
    if np.any(k < 0):
        raise ValueError("quench counts must be nonnegative")
    bad = (k > 0) & ~fire.burning
    if np.any(bad):
        cells = [tuple(int(v) for v in rc) for rc in np.argwhere(bad)[:5]]
        raise ValueError(f"quench targets non-burning cells {cells}")
    return FireMap(fire.fuel, np.maximum(fire.intensity - k, 0.0))


def burn_cost(fire: FireMap, mode: str = "count"):
    if mode == "count":
        return int(np.count_nonzero(fire.burning))
    if mode == "intensity_sum":
        return float(fire.intensity.sum())
    raise ValueError(f"unknown burn cost mode {mode!r}")


def state_matrix(fire: FireMap, quench=None) -> np.ndarray:
    """0/1 burning matrix, with 2 on burning cells that receive quench."""
    s = fire.burning.astype(np.int8)
    if quench is not None:
        s[(np.asarray(quench) > 0) & fire.burning] = STATE_QUENCHED
    return s


# ---------------------------------------------------------------------------
# training data


@dataclass
class TrainingPair:
    before: np.ndarray
    after: np.ndarray
    quench: Optional[np.ndarray] = None
    next_cost: Optional[float] = None
    step_seed: Optional[int] = None

    def __post_init__(self):
        self.before = np.asarray(self.before, dtype=np.int8)
        self.after = np.asarray(self.after, dtype=np.int8)
        if self.before.shape != self.after.shape:
            raise ValueError("before/after shapes differ")
        if self.quench is None:
            if np.any(self.before == STATE_QUENCHED):
                raise ValueError("state 2 requires a quench mask")
        else:
            self.quench = np.asarray(self.quench, dtype=np.float64)
            if self.quench.shape != self.before.shape:
                raise ValueError("quench mask shape differs from the maps")

    @property
    def has_quench(self) -> bool:
        return self.quench is not None

    @property
    def context(self) -> np.ndarray:
        """Burning indicator of ``before`` (quenched cells count as burning)."""
        return (self.before > 0).astype(np.float64)

    def to_json(self) -> dict:
        rec = {
            "before": self.before.tolist(),
            "after": self.after.tolist(),
            "quench": None if self.quench is None else self.quench.tolist(),
            "next_cost": self.next_cost,
        }
        if self.step_seed is not None:
            rec["step_seed"] = self.step_seed
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "TrainingPair":
        return cls(
            before=rec["before"],
            after=rec["after"],
            quench=rec.get("quench"),
            next_cost=rec.get("next_cost"),
            step_seed=rec.get("step_seed"),
        )


def random_environment(size: int, rng: np.random.Generator) -> tuple[FireMap, Weather]:
    """Random fuel layout, ignition and weather for one training episode."""
    density = rng.uniform(0.8, 0.97)
    fuel = rng.random((size, size)) < density
    # a couple of firebreak strips
    for _ in range(rng.integers(0, 3)):
        if rng.random() < 0.5:
            r = rng.integers(0, size)
            c0 = rng.integers(0, size // 2)
            fuel[r, c0:c0 + rng.integers(size // 4, size // 2 + 1)] = False
        else:
            c = rng.integers(0, size)
            r0 = rng.integers(0, size // 2)
            fuel[r0:r0 + rng.integers(size // 4, size // 2 + 1), c] = False
    g = np.zeros((size, size))
    for _ in range(rng.integers(1, 4)):
        r, c = rng.integers(2, size - 2, size=2)
        fuel[r, c] = True
        g[r, c] = 1.0
    weather = Weather(
        wind_direction=str(rng.choice(list(COMPASS))),
        wind_speed=float(rng.uniform(0.0, 1.0)),
        moisture=float(rng.uniform(0.0, 0.5)),
    )
    return FireMap(fuel, g), weather


def simulate_episode(
    fire: FireMap,
    weather: Weather,
    horizon: int,
    rng: np.random.Generator,
    *,
    with_quench: bool = False,
    config: SpreadConfig = DEFAULT_SPREAD,
):
    """Yield ``(map_k, quench_k, step_seed_k, map_{k+1})`` for ``horizon - 1`` steps."""
    current = fire
    quench_rate = rng.uniform(0.0, 0.6)
    for _ in range(horizon - 1):
        seed = int(rng.integers(0, 2**32))
        quench = None
        source = current
        if with_quench:
            burning = current.burning
            if rng.random() < 0.15:
                chosen = burning.copy()
            else:
                chosen = burning & (rng.random(current.shape) < quench_rate)
            quench = np.where(chosen, np.ceil(current.intensity), 0.0)
            source = apply_quench(current, quench)
        nxt = step_spread(source, weather, seed, config)
        yield current, quench, seed, nxt
        current = nxt


def generate_pairs(
    n_envs: int,
    size: int,
    horizon: int,
    with_quench: bool,
    seed,
    config: SpreadConfig = DEFAULT_SPREAD,
) -> list[TrainingPair]:
    if n_envs < 1:
        raise ValueError("n_envs must be >= 1")
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    pairs = []
    for env_seq in np.random.SeedSequence(seed).spawn(n_envs):
        rng = np.random.default_rng(env_seq)
        fire, weather = random_environment(size, rng)
        for _ in range(int(rng.integers(1, 6) if with_quench else rng.integers(0, 4))):
            fire = step_spread(fire, weather, int(rng.integers(0, 2**32)), config)
        for before, quench, step_seed, after in simulate_episode(
            fire, weather, horizon, rng, with_quench=with_quench, config=config
        ):
            if with_quench:
                pairs.append(
                    TrainingPair(
                        before=state_matrix(before, quench),
                        after=after.burning,
                        quench=(quench > 0).astype(np.float64),
                        next_cost=float(burn_cost(after, config.cost)),
                        step_seed=step_seed,
                    )
                )
            else:
                pairs.append(
                    TrainingPair(before=before.burning, after=after.burning, step_seed=step_seed)
                )
    return pairs


def _symmetries(a: np.ndarray) -> list[np.ndarray]:
    out = []
    for k in range(4):
        r = np.rot90(a, k)
        out.append(r)
        out.append(np.fliplr(r))
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        out.append(np.roll(a, shift, axis=(0, 1)))
    return [np.ascontiguousarray(x) for x in out]


def augment(pairs: list[TrainingPair]) -> list[TrainingPair]:
    """Twelve variants per pair: 8 dihedral symmetries + 4 one-cell cyclic shifts."""
    if not pairs:
        raise ValueError("augment needs at least one pair")
    out = []
    for p in pairs:
        befores = _symmetries(p.before)
        afters = _symmetries(p.after)
        quenches = _symmetries(p.quench) if p.quench is not None else [None] * 12
        for b, a, q in zip(befores, afters, quenches):
            out.append(TrainingPair(before=b, after=a, quench=q, next_cost=p.next_cost))
    return out


# ---------------------------------------------------------------------------
# serialization


def _write_grid(values: np.ndarray, path: Path) -> None:
    h, w = values.shape
    lines = [f"{w} {h}"]
    for row in values:
        lines.append(" ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row.tolist()))
    path.write_text("\n".join(lines) + "\n")


def _read_grid(path: Path) -> np.ndarray:
    tokens = path.read_text().split("\n")
    w, h = (int(t) for t in tokens[0].split())
    rows = [line.split() for line in tokens[1:1 + h]]
    arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
    if arr.shape != (h, w):
        raise ValueError(f"{path}: expected {h}x{w} grid, got {arr.shape}")
    return arr


def fuel_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".fuel")


def save_map(fire: FireMap, path) -> None:
    """Write ``path`` (intensities) and ``path.fuel`` (0/1 mask) in ``W H`` grid format."""
    path = Path(path)
    _write_grid(fire.intensity.astype(float), path)
    _write_grid(fire.fuel.astype(int), fuel_path_for(path))


def load_map(path, fuel_path=None) -> FireMap:
    path = Path(path)
    g = _read_grid(path)
    fp = Path(fuel_path) if fuel_path is not None else fuel_path_for(path)
    fuel = _read_grid(fp) > 0 if fp.exists() else np.ones(g.shape, dtype=bool)
    return FireMap(fuel, g)


def write_pairs(pairs: Iterable[TrainingPair], path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), separators=(",", ":")) + "\n")


def read_pairs(path) -> list[TrainingPair]:
    with open(path) as fh:
        return [TrainingPair.from_json(json.loads(line)) for line in fh if line.strip()]
