"""Path-quality metrics and the seeded benchmark harness.

Per run we record: path length (L), nodes popped from the open list (N), the
planning wall time (T), the mean clearance to obstacles along the densely
resampled path (MD, safety), and the mean heading change at interior waypoints
(MA, geometric smoothness). The harness executes every algorithm on the same
seeded start/goal pairs, aggregates mean and standard error over runs, and
reports per-metric ratios against a baseline algorithm. Timing covers the
planning call only; distance-field computation is excluded.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .edf import EdfGrid, compute_edf
from .search import NoPathError, PathResult, PlannerConfig
from .voxmap import OccupancyGrid, Scenario, sample_start_goal

METRIC_NAMES = ("time", "length", "explored", "mean_clearance", "mean_angle")


@dataclass(frozen=True)
class PathMetrics:
    length: float
    explored: int
    time: float
    mean_clearance: float
    mean_angle: float


def path_length(points) -> float:
    """Sum of Euclidean segment lengths of a world-coordinate polyline."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def mean_angle(points) -> float:
    """Mean heading change, in degrees, over interior waypoints; 0 for paths
    with fewer than three waypoints."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        return 0.0
    seg = np.diff(pts, axis=0)
    norms = np.linalg.norm(seg, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("path contains a zero-length segment")
    u = seg / norms[:, None]
    cos = np.clip(np.einsum("ij,ij->i", u[:-1], u[1:]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean())


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Points every ``spacing`` meters of arc length, endpoints included."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return pts.copy()
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    if total == 0.0:
        return pts[:1].copy()
    stations = np.arange(0.0, total, spacing)
    if stations[-1] < total:
        stations = np.concatenate((stations, [total]))
    out = np.empty((len(stations), 3))
    for axis in range(3):
        out[:, axis] = np.interp(stations, cum, pts[:, axis])
    return out


def mean_clearance(points, edf: EdfGrid) -> float:
    """Average stored field value along the polyline resampled at one-voxel
    steps (nearest-voxel lookup)."""
    pts = resample_polyline(points, edf.resolution)
    idx = np.floor((pts - np.asarray(edf.origin)) / edf.resolution).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(edf.dims) - 1)
    return float(edf.dist[idx[:, 0], idx[:, 1], idx[:, 2]].mean())


def compute_path_metrics(result: PathResult, grid: OccupancyGrid, edf: EdfGrid) -> PathMetrics:
    world = result.world_waypoints(grid)
    return PathMetrics(
        length=path_length(world),
        explored=result.explored_nodes,
        time=result.wall_time,
        mean_clearance=mean_clearance(world, edf),
        mean_angle=mean_angle(world),
    )


@dataclass(frozen=True)
class AlgorithmSpec:
    """A named planner with its configuration."""

    name: str
    planner: Callable[[OccupancyGrid, EdfGrid, PlannerConfig, tuple, tuple], PathResult]
    config: PlannerConfig


@dataclass
class MetricAggregate:
    mean: dict[str, float]
    sem: dict[str, float]
    ratio: dict[str, float]
    runs_ok: int
    runs_failed: int
    fallbacks: int


@dataclass
class MetricReport:
    """Aggregated benchmark results: scenario -> algorithm -> aggregate."""

    scenarios: dict[str, dict[str, MetricAggregate]]
    baseline: str
    runs: int
    seed: int
    per_run: dict[str, dict[str, list[PathMetrics | None]]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["scenario", "algorithm", "metric", "mean", "sem", "ratio", "runs_failed"])
        for scen, algos in self.scenarios.items():
            for algo, agg in algos.items():
                for metric in METRIC_NAMES:
                    writer.writerow([
                        scen, algo, metric,
                        f"{agg.mean[metric]:.9g}",
                        f"{agg.sem[metric]:.9g}",
                        f"{agg.ratio[metric]:.9g}",
                        agg.runs_failed,
                    ])
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        def finite(d):
            return {k: (v if math.isfinite(v) else None) for k, v in d.items()}

        return {
            "baseline": self.baseline,
            "runs": self.runs,
            "seed": self.seed,
            "note": "scenarios are procedurally generated analogues",
            "scenarios": {
                scen: {
                    algo: {
                        "mean": finite(agg.mean),
                        "sem": finite(agg.sem),
                        "ratio": finite(agg.ratio),
                        "runs_ok": agg.runs_ok,
                        "runs_failed": agg.runs_failed,
                        "fallbacks": agg.fallbacks,
                    }
                    for algo, agg in algos.items()
                }
                for scen, algos in self.scenarios.items()
            },
        }


def _aggregate(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, 0.0
    return m, statistics.stdev(values) / len(values) ** 0.5


def run_benchmark(
    scenarios: Sequence[Scenario],
    algorithms: Sequence[AlgorithmSpec],
    runs: int,
    seed: int,
    baseline: str | None = None,
    time_reps: int = 3,
    min_clearance: float | None = None,
) -> MetricReport:
    """Run every algorithm on ``runs`` seeded start/goal pairs per scenario.

    Pairs are drawn once per scenario and shared across algorithms. Each
    planning call is repeated ``time_reps`` times and the median wall time is
    reported (planners are deterministic, so only timing varies). Failed runs
    (no path) are recorded and excluded from the aggregates.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if baseline is None:
        baseline = algorithms[0].name
    if baseline not in {a.name for a in algorithms}:
        raise ValueError(f"baseline {baseline!r} is not among the algorithms")

    report_scen: dict[str, dict[str, MetricAggregate]] = {}
    per_run: dict[str, dict[str, list[PathMetrics | None]]] = {}

    for scen_idx, scen in enumerate(scenarios):
        grid = scen.grid
        edf = compute_edf(grid)
        clearance = scen.min_clearance if min_clearance is None else min_clearance
        pairs = [
            sample_start_goal(grid, edf, clearance, seed=_pair_seed(seed, scen_idx, run))
            for run in range(runs)
        ]
        cells: dict[str, list[PathMetrics | None]] = {}
        fallback_count: dict[str, int] = {}
        for spec in algorithms:
            rows: list[PathMetrics | None] = []
            fallback_count[spec.name] = 0
            for start, goal in pairs:
                try:
                    result, wall = _timed_plan(spec, grid, edf, start, goal, time_reps)
                except NoPathError:
                    rows.append(None)
                    continue
                if result.fallback_used:
                    fallback_count[spec.name] += 1
                m = compute_path_metrics(result, grid, edf)
                rows.append(PathMetrics(
                    length=m.length, explored=m.explored, time=wall,
                    mean_clearance=m.mean_clearance, mean_angle=m.mean_angle,
                ))
            cells[spec.name] = rows
        per_run[scen.name] = cells

        base_rows = [r for r in cells[baseline] if r is not None]
        base_mean = {name: _aggregate([getattr(r, name) for r in base_rows])[0] for name in METRIC_NAMES}
        report_scen[scen.name] = {}
        for spec in algorithms:
            ok = [r for r in cells[spec.name] if r is not None]
            mean, sem, ratio = {}, {}, {}
            for name in METRIC_NAMES:
                mean[name], sem[name] = _aggregate([getattr(r, name) for r in ok])
                ratio[name] = mean[name] / base_mean[name] if base_mean[name] else float("nan")
            report_scen[scen.name][spec.name] = MetricAggregate(
                mean=mean, sem=sem, ratio=ratio,
                runs_ok=len(ok), runs_failed=runs - len(ok),
                fallbacks=fallback_count[spec.name],
            )

    return MetricReport(scenarios=report_scen, baseline=baseline, runs=runs, seed=seed, per_run=per_run)


def _pair_seed(seed: int, scen_idx: int, run: int) -> int:
    # stable pair derivation shared by every algorithm in the suite
    return int(np.random.SeedSequence([seed, scen_idx, run]).generate_state(1)[0])


def _timed_plan(spec: AlgorithmSpec, grid, edf, start, goal, time_reps: int):
    """Median-of-``time_reps`` monotonic wall time for one planning call."""
    times = []
    result = None
    for _ in range(max(1, time_reps)):
        t0 = time.perf_counter()
        result = spec.planner(grid, edf, spec.config, start, goal)
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)
