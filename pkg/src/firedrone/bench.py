"""Planner comparison harness: run episodes per scenario, write reports and images."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .firegrid import augment, generate_pairs
from .model import load_scenario
from .predictor import IcnnModel, train_s, train_sq
from .rollout import DEFAULT_HORIZON, PLANNERS, EpisodeTrace, initial_conditions, make_planner, run_episode

log = logging.getLogger(__name__)

REPORT_FIELDS = ["env", "scenario", "planner", "seed", "moves", "rounds", "burn_cost", "final_burning", "status"]
SUMMARY_FIELDS = ["scenario", "planner", "runs", "mean_moves", "mean_rounds", "mean_burn_cost", "uncontained"]
CELL_PX = 20


def bundled_scenarios() -> list[Path]:
    """Paths of the scenario files shipped with the package, sorted by name."""
    root = resources.files("firedrone") / "data" / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_scenario(name, base: Path) -> Path:
    if str(name).startswith("bundled:"):
        stem = str(name).split(":", 1)[1]
        for p in bundled_scenarios():
            if p.stem == stem:
                return p
        raise FileNotFoundError(f"no bundled scenario named {stem!r}")
    p = Path(name)
    return p if p.is_absolute() else base / p


@dataclass
class TrainSettings:
    """Dataset size and seed used when models have to be trained first."""

    envs: int = 60
    horizon: int = 9
    seed: int = 1
    model_seed: int = 0


@dataclass
class BenchConfig:
    scenarios: list = field(default_factory=lambda: [str(p) for p in bundled_scenarios()])
    grid: int = 20
    envs: Optional[int] = None          # use only the first ``envs`` scenarios
    horizon: int = DEFAULT_HORIZON
    planners: list = field(default_factory=lambda: list(PLANNERS))
    seeds: list = field(default_factory=lambda: [3])
    output: str = "bench_out"
    s_model: str = "models/s.icnn"
    sq_model: str = "models/sq.icnn"
    train: Optional[TrainSettings] = None
    ga: dict = field(default_factory=dict)
    images: bool = True

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainSettings(**self.train)
        elif self.train is True:
            self.train = TrainSettings()
        elif self.train is False:
            self.train = None
        if not self.planners:
            raise ValueError("at least one planner is required")
        unknown = [p for p in self.planners if p not in PLANNERS]
        if unknown:
            raise ValueError(f"unknown planners {unknown}; choose from {', '.join(PLANNERS)}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.envs is not None and self.envs < 1:
            raise ValueError("envs must be at least 1")

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        """Read a config file; relative paths inside it are taken from the file's directory."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"bench config not found: {path}")
        rec = json.loads(path.read_text())
        unknown = set(rec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = path.parent
        if "scenarios" in rec:
            rec["scenarios"] = [str(_resolve_scenario(s, base)) for s in rec["scenarios"]]
        for key in ("output", "s_model", "sq_model"):
            if key in rec and not Path(rec[key]).is_absolute():
                rec[key] = str(base / rec[key])
        return cls(**rec)


@dataclass
class BenchRow:
    env: int
    scenario: str
    planner: str
    seed: int
    moves: float
    rounds: int
    burn_cost: int
    final_burning: int
    status: str
    wall_ms: float = 0.0

    def csv_row(self) -> dict:
        row = {k: getattr(self, k) for k in REPORT_FIELDS}
        row["moves"] = f"{self.moves:.6f}"
        return row


def move_reduction(plain: float, ccro: float) -> float:
    """Percent fewer moves for ccro; zero when plain made no moves."""
    return 100.0 * (plain - ccro) / plain if plain > 0 else 0.0


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def select(self, planner=None, scenario=None) -> list:
        return [r for r in self.rows if (planner is None or r.planner == planner)
                and (scenario is None or r.scenario == scenario)]

    @property
    def scenarios(self) -> list:
        return list(dict.fromkeys(r.scenario for r in self.rows))

    @property
    def planners(self) -> list:
        return list(dict.fromkeys(r.planner for r in self.rows))

    def mean(self, metric: str, planner=None, scenario=None) -> float:
        rows = self.select(planner, scenario)
        return float(np.mean([getattr(r, metric) for r in rows])) if rows else float("nan")

    def reductions(self, baseline="mip_plain", method="mip_ccro") -> dict:
        """Per-scenario move reduction of ``method`` against ``baseline``."""
        out = {}
        for s in self.scenarios:
            if self.select(baseline, s) and self.select(method, s):
                out[s] = move_reduction(self.mean("moves", baseline, s), self.mean("moves", method, s))
        return out

    def mean_reduction(self, baseline="mip_plain", method="mip_ccro") -> float:
        red = self.reductions(baseline, method)
        return float(np.mean(list(red.values()))) if red else float("nan")

    def summary_rows(self) -> list:
        out = []
        for s in self.scenarios:
            for p in self.planners:
                rows = self.select(p, s)
                if not rows:
                    continue
                out.append({
                    "scenario": s,
                    "planner": p,
                    "runs": len(rows),
                    "mean_moves": f"{self.mean('moves', p, s):.6f}",
                    "mean_rounds": f"{self.mean('rounds', p, s):.6f}",
                    "mean_burn_cost": f"{self.mean('burn_cost', p, s):.6f}",
                    "uncontained": sum(r.status == "uncontained" for r in rows),
                })
        return out

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "report.csv", REPORT_FIELDS, [r.csv_row() for r in self.rows])
        _write_csv(out / "summary.csv", SUMMARY_FIELDS, self.summary_rows())
        red = self.reductions()
        lines = [{"scenario": s, "reduction_pct": f"{v:.6f}"} for s, v in red.items()]
        if red:
            lines.append({"scenario": "mean", "reduction_pct": f"{self.mean_reduction():.6f}"})
        _write_csv(out / "reduction.csv", ["scenario", "reduction_pct"], lines)
        # wall time varies run to run, so it stays out of report.csv
        _write_csv(out / "timing.csv", ["scenario", "planner", "seed", "wall_ms"],
                   [{"scenario": r.scenario, "planner": r.planner, "seed": r.seed,
                     "wall_ms": f"{r.wall_ms:.1f}"} for r in self.rows])


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_or_train(config: BenchConfig) -> tuple[IcnnModel, IcnnModel]:
    s_path, sq_path = Path(config.s_model), Path(config.sq_model)
    missing = [p for p in (s_path, sq_path) if not p.exists()]
    if missing and config.train is None:
        raise FileNotFoundError(f"model file not found: {missing[0]} (set \"train\" in the config to build it)")
    if missing:
        t = config.train
        log.info("training predictors on %d environments", t.envs)
        if not s_path.exists():
            pairs = augment(generate_pairs(t.envs, config.grid, t.horizon, False, t.seed))
            s_path.parent.mkdir(parents=True, exist_ok=True)
            train_s(pairs, seed=t.model_seed).save(s_path)
        if not sq_path.exists():
            pairs = augment(generate_pairs(t.envs, config.grid, t.horizon, True, t.seed))
            sq_path.parent.mkdir(parents=True, exist_ok=True)
            train_sq(pairs, seed=t.model_seed).save(sq_path)
    return IcnnModel.load(s_path), IcnnModel.load(sq_path)


def run_bench(config: BenchConfig) -> BenchReport:
    for p in config.scenarios:
        if not Path(p).exists():
            raise FileNotFoundError(f"scenario file not found: {p}")
    s_model, sq_model = load_or_train(config)
    out = Path(config.output)
    report = BenchReport()
    paths = config.scenarios[: config.envs] if config.envs else config.scenarios
    for env, path in enumerate(paths):
        scenario = load_scenario(path)
        name = scenario.name or Path(path).stem
        fire, weather = initial_conditions(scenario, (config.grid, config.grid))
        for planner in config.planners:
            plan = make_planner(planner, s_model, sq_model, ga_params=config.ga)
            for seed in config.seeds:
                start = time.perf_counter()
                trace = run_episode(fire, scenario, plan, config.horizon, seed, weather,
                                    s_model, sq_model, name=planner)
                wall = (time.perf_counter() - start) * 1e3
                s = trace.summary()
                report.rows.append(BenchRow(env, name, planner, int(seed), trace.moves, s["rounds"],
                                            s["burn_cost"], s["final_burning"], s["status"], wall))
                stem = f"{name}_{planner}_s{seed}"
                trace.write_jsonl(out / "traces" / f"{stem}.jsonl")
                if config.images:
                    render(trace, out, stem)
                log.info("%s %s seed %s: moves %.2f burn %d %s", name, planner, seed,
                         trace.moves, s["burn_cost"], s["status"])
    report.write(out)
    return report


# ----------------------------------------------------------------------- images

def _records(trace) -> tuple[list, tuple, tuple]:
    if isinstance(trace, EpisodeTrace):
        return [p.to_json() for p in trace.periods], tuple(map(tuple, trace.bases)), tuple(trace.shape)
    path = Path(trace)
    lines = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    periods = [r for r in lines if not r.get("summary")]
    summary = next((r for r in lines if r.get("summary")), {})
    bases = tuple(tuple(b) for b in summary.get("bases", ()))
    shape = tuple(summary.get("shape", np.shape(periods[0]["intensity"]) if periods else (20, 20)))
    return periods, bases, shape


def write_pgm(grid, path, top: float = 3.0) -> None:
    """Binary greyscale image, brighter for hotter cells."""
    g = np.asarray(grid, dtype=float)
    h, w = g.shape
    pix = np.clip(np.round(255.0 * g / top), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5 {w} {h} 255\n".encode())
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header, _, body = data.partition(b"\n")
    magic, w, h, top = header.split()
    if magic != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w))


def path_svg(periods, bases, shape) -> str:
    h, w = shape
    px = CELL_PX
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * px}" height="{h * px}" '
           f'viewBox="0 0 {w * px} {h * px}">',
           f'<rect width="{w * px}" height="{h * px}" fill="white" stroke="black"/>']
    colours = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
    for j, (r, c) in enumerate(bases):
        out.append(f'<rect class="base" x="{c * px + 2}" y="{r * px + 2}" width="{px - 4}" height="{px - 4}" '
                   f'fill="none" stroke="black" stroke-width="2"><title>base {j}</title></rect>')
    for rec in periods:
        colour = colours[rec["t"] % len(colours)]
        out.append(f'<g class="period" id="t{rec["t"]}" stroke="{colour}">')
        cells = rec["cells"]
        for r, c in cells:
            out.append(f'<circle class="fire" cx="{c * px + px / 2}" cy="{r * px + px / 2}" r="{px / 4}" '
                       f'fill="{colour}" fill-opacity="0.3" stroke="none"/>')
        for i, j, l in rec["assignments"]:
            br, bc = bases[j]
            fr, fc = cells[i]
            out.append(f'<line class="sortie" x1="{bc * px + px / 2}" y1="{br * px + px / 2}" '
                       f'x2="{fc * px + px / 2}" y2="{fr * px + px / 2}"><title>drone {l}</title></line>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render(trace, out_dir, stem: str = "episode") -> list[Path]:
    """PGM frame per period under ``frames/`` and one sortie map under ``paths/``.

    ``trace`` is an :class:`EpisodeTrace` or the path of a trace JSONL file.
    """
    periods, bases, shape = _records(trace)
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "paths").mkdir(parents=True, exist_ok=True)
    written = []
    for rec in periods:
        p = out / "frames" / f"{stem}_t{rec['t']:02d}.pgm"
        write_pgm(rec["intensity"], p)
        written.append(p)
    p = out / "paths" / f"{stem}.svg"
    p.write_text(path_svg(periods, bases, shape))
    written.append(p)
    return written
