"""Command-line interface.

Subcommands: ``gen`` (write a scenario map), ``edf`` (write a distance-field
cache), ``plan`` (run one planner), ``bench`` (seeded benchmark suite with CSV
and JSON reports), ``verify`` (oracle suites), ``plotdata`` (per-cost-weight
timing curves). Exit codes: 0 success, 1 I/O error, 2 usage error, 3 no path.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import edf as edf_mod
from . import metrics as metrics_mod
from . import search as search_mod
from . import verify as verify_mod
from . import voxmap

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NO_PATH = 3

_KIND_ALIASES = {
    "h": "h", "s1": "h",
    "inverted-u": "inverted_u", "inverted_u": "inverted_u", "s2": "inverted_u",
    "near-closed-u": "near_closed_u", "near_closed_u": "near_closed_u", "s3": "near_closed_u",
    "maze": "maze", "s4": "maze",
}


class _CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _cache_dir() -> Path:
    override = os.environ.get("EDF_PLANNER_CACHE_DIR")
    if override:
        return Path(override)
    return Path.home() / ".cache" / "edfplan"


def _map_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:24]


def _load_map(path_str: str) -> voxmap.OccupancyGrid:
    path = Path(path_str)
    try:
        return voxmap.load_vxm(path)
    except FileNotFoundError:
        raise _CliError(f"map file not found: {path}", EXIT_IO) from None
    except voxmap.MapFormatError as exc:
        raise _CliError(f"bad map file {path}: {exc}", EXIT_IO) from None


def _uniform_field(grid: voxmap.OccupancyGrid) -> edf_mod.EdfGrid:
    # obstacle-free map: clearance is at least the lattice diameter everywhere
    # and the clearance penalty vanishes in that limit
    diameter = float(np.linalg.norm(grid.dims)) * grid.resolution
    return edf_mod.EdfGrid(grid.dims, grid.resolution, grid.origin,
                           np.full(grid.dims, diameter))


def _edf_for_map(map_path: str, grid: voxmap.OccupancyGrid, explicit: str | None) -> edf_mod.EdfGrid:
    """Load a matching cached field or compute and cache one. The cache key is
    the content hash of the map file, so edits invalidate it."""
    if explicit:
        field = edf_mod.load_edf(explicit)
        if field.dims != grid.dims or field.resolution != grid.resolution:
            raise _CliError(f"cache {explicit} does not match the map lattice", EXIT_IO)
        return field
    if grid.n_occupied == 0:
        return _uniform_field(grid)
    cache = _cache_dir() / f"{_map_hash(Path(map_path))}.edf"
    if cache.exists():
        try:
            field = edf_mod.load_edf(cache)
            if field.dims == grid.dims and field.resolution == grid.resolution:
                return field
        except ValueError:
            pass  # stale or corrupt cache: recompute below
    field = edf_mod.compute_edf(grid)
    cache.parent.mkdir(parents=True, exist_ok=True)
    edf_mod.save_edf(field, cache)
    return field


def _parse_kind(text: str) -> str:
    kind = _KIND_ALIASES.get(text.strip().lower())
    if kind is None:
        raise _CliError(f"unknown scenario kind {text!r}", EXIT_USAGE)
    return kind


def _parse_algos(text: str, cw: float, los: float) -> list[metrics_mod.AlgorithmSpec]:
    specs = []
    for token in text.split(","):
        token = token.strip()
        name, _, policy_text = token.partition(":")
        base = search_mod.PlannerConfig(c_w=cw, max_los=los)
        if name == "astar":
            specs.append(metrics_mod.AlgorithmSpec("astar", search_mod.plan_astar, base))
        elif name == "ltstar":
            specs.append(metrics_mod.AlgorithmSpec("ltstar", search_mod.plan_lt_full, base))
        elif name == "fs":
            try:
                policy = search_mod.parse_neighbour_policy(policy_text or "9-11")
            except ValueError as exc:
                raise _CliError(str(exc), EXIT_USAGE) from None
            cfg = search_mod.PlannerConfig(c_w=cw, max_los=los, neighbour_policy=policy)
            specs.append(metrics_mod.AlgorithmSpec(token, search_mod.plan_fs, cfg))
        else:
            raise _CliError(f"unknown algorithm {token!r} (expected astar, ltstar, fs[:policy])", EXIT_USAGE)
    return specs


def _scenarios_from_suite(suite: str, dims: int, res: float, seed: int) -> list[voxmap.Scenario]:
    return [
        voxmap.gen_scenario(_parse_kind(tok), dims, res, seed)
        for tok in suite.split(",") if tok.strip()
    ]


def cmd_gen(args) -> int:
    kind = _parse_kind(args.kind)
    try:
        scen = voxmap.gen_scenario(kind, args.dims, args.res, args.seed,
                                   wall_thickness=args.wall_thickness, opening=args.opening)
    except voxmap.DimsTooSmallError as exc:
        raise _CliError(str(exc), EXIT_USAGE) from None
    voxmap.save_vxm(scen.grid, args.out)
    print(f"wrote {args.out}: {scen.name}, {scen.grid.n_occupied} occupied voxels, "
          f"start {tuple(scen.start)} goal {tuple(scen.goal)}")
    return EXIT_OK


def cmd_edf(args) -> int:
    grid = _load_map(args.map)
    try:
        field = edf_mod.compute_edf(grid)
    except edf_mod.EmptyObstacleSetError as exc:
        raise _CliError(str(exc), EXIT_USAGE) from None
    edf_mod.save_edf(field, args.out)
    print(f"wrote {args.out}: dims {field.dims}, max distance {field.dist.max():.3f} m")
    return EXIT_OK


def cmd_plan(args) -> int:
    grid = _load_map(args.map)
    field = _edf_for_map(args.map, grid, args.edf)
    try:
        policy = search_mod.parse_neighbour_policy(args.neighbours)
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_USAGE) from None
    cfg = search_mod.PlannerConfig(c_w=args.cw, max_los=args.los, neighbour_policy=policy)
    planner = {"astar": search_mod.plan_astar,
               "ltstar": search_mod.plan_lt_full,
               "fs": search_mod.plan_fs}[args.algo]
    start = voxmap.GridCoord(*args.start)
    goal = voxmap.GridCoord(*args.goal)
    try:
        result = planner(grid, field, cfg, start, goal)
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_USAGE) from None
    except search_mod.NoPathError as exc:
        record = {
            "error": "no-path",
            "algorithm": args.algo,
            "start": list(start),
            "goal": list(goal),
            "explored_nodes": exc.explored_nodes,
            "fallback_used": exc.fallback_used,
        }
        text = json.dumps(record, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text, file=sys.stderr)
        return EXIT_NO_PATH
    doc = result.to_json_dict(args.algo, cfg, grid)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    m = metrics_mod.compute_path_metrics(result, grid, field)
    print(f"{args.algo}: length {m.length:.3f} m, explored {m.explored}, "
          f"time {result.wall_time * 1e3:.1f} ms, clearance {m.mean_clearance:.3f} m, "
          f"mean angle {m.mean_angle:.1f} deg", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    scenarios = _scenarios_from_suite(args.suite, args.dims, args.res, args.seed)
    algos = _parse_algos(args.algos, args.cw, args.los)
    report = metrics_mod.run_benchmark(
        scenarios, algos, runs=args.runs, seed=args.seed,
        baseline=algos[0].name, time_reps=args.time_reps,
        min_clearance=args.clearance,
    )
    csv_text = report.to_csv()
    Path(args.out_csv).write_text(csv_text)
    json_path = Path(args.out_csv).with_suffix(".json")
    json_path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    print(f"wrote {args.out_csv} and {json_path}")
    completed = any(
        all(agg.runs_failed == 0 for agg in per_scen.values())
        for per_scen in _by_algo(report).values()
    )
    return EXIT_OK if completed else EXIT_IO


def _by_algo(report: metrics_mod.MetricReport) -> dict:
    out: dict[str, dict] = {}
    for scen, algos in report.scenarios.items():
        for name, agg in algos.items():
            out.setdefault(name, {})[scen] = agg
    return out


def cmd_verify(args) -> int:
    summaries = []
    suites = ("edf", "hh", "triangle", "quality") if args.suite == "all" else (args.suite,)
    rng = np.random.default_rng(args.seed)
    if "edf" in suites:
        failures = 0
        first = None
        n_grids = args.cases or 20
        for trial in range(n_grids):
            size = int(rng.integers(8, 33))
            occ = rng.random((size, size, size)) < rng.uniform(0.01, 0.1)
            if not occ.any():
                occ[size // 2, size // 2, size // 2] = True
            grid = voxmap.OccupancyGrid((size,) * 3, 1.0, voxmap.WorldPoint(0, 0, 0), occ)
            got = edf_mod.squared_voxel_distances(grid)
            want = verify_mod.brute_force_squared(grid)
            if not np.array_equal(got, want):
                failures += 1
                if first is None:
                    first = {"trial": trial, "size": size}
        summaries.append({"suite": "edf", "cases": n_grids, "failures": failures,
                          "first_counterexample": first})
    if "hh" in suites:
        n = args.cases or 1000
        failures = 0
        first = None
        for obstacle in (verify_mod.SphereObstacle(radius=1.0), verify_mod.BoxObstacle(extents=(2.0, 1.5, 1.0))):
            res = verify_mod.check_hh_bounds(obstacle, n, args.seed)
            bad = res.bound_violations + res.rel_error_violations
            failures += len(bad)
            if bad and first is None:
                first = vars(bad[0]) | {"obstacle": type(obstacle).__name__}
        summaries.append({"suite": "hh", "cases": 2 * n, "failures": failures,
                          "first_counterexample": first})
    if "triangle" in suites:
        res = verify_mod.check_triangle_inequality(args.cases or 100_000, args.seed)
        first = vars(res.first_counterexample) if res.first_counterexample else None
        summaries.append({"suite": "triangle", "cases": res.cases, "failures": res.failures,
                          "first_counterexample": first})
    if "quality" in suites:
        failures = 0
        first = None
        for k, floor in ((5, 100.0), (3, 75.0)):
            study = verify_mod.quality_study_2d(verify_mod.QualityConfig(k_selected=k))
            for los, sa, sb in study.rows:
                if min(sa, sb) < floor:
                    failures += 1
                    if first is None:
                        first = {"k": k, "los": los, "score_small": sa, "score_large": sb}
        summaries.append({"suite": "quality", "cases": 2 * len(verify_mod.QualityConfig().los_values),
                          "failures": failures, "first_counterexample": first})
    payload = summaries[0] if len(summaries) == 1 else summaries
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if all(s["failures"] == 0 for s in summaries) else EXIT_IO


def cmd_plotdata(args) -> int:
    kind = _parse_kind(args.kind)
    scen = voxmap.gen_scenario(kind, args.dims, args.res, args.seed)
    field = edf_mod.compute_edf(scen.grid)
    rows = ["cw,algorithm,mean_time_s,sem_time_s"]
    cws = [float(v) for v in args.cw_sweep.split(",")]
    for cw in cws:
        algos = _parse_algos(args.algos, cw, args.los)
        report = metrics_mod.run_benchmark(
            [scen], algos, runs=args.runs, seed=args.seed,
            baseline=algos[0].name, time_reps=args.time_reps,
        )
        for name, agg in report.scenarios[scen.name].items():
            rows.append(f"{cw},{name},{agg.mean['time']:.9g},{agg.sem['time']:.9g}")
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edfplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scenario map (.vxm)")
    p.add_argument("--kind", required=True, help="h | inverted-u | near-closed-u | maze (or s1..s4)")
    p.add_argument("--dims", type=int, required=True, help="cube edge length in voxels (>= 16)")
    p.add_argument("--res", type=float, default=0.2, help="voxel resolution in meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wall-thickness", type=int, default=2)
    p.add_argument("--opening", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("edf", help="compute a distance field cache (.edf) for a map")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edf)

    p = sub.add_parser("plan", help="plan a path on a map")
    p.add_argument("--map", required=True)
    p.add_argument("--start", type=int, nargs=3, required=True, metavar=("I", "J", "K"))
    p.add_argument("--goal", type=int, nargs=3, required=True, metavar=("I", "J", "K"))
    p.add_argument("--algo", choices=("astar", "ltstar", "fs"), default="fs")
    p.add_argument("--neighbours", default="9-11", help="9|10|11|13|15|17, a-b pair, or full26")
    p.add_argument("--cw", type=float, default=500.0)
    p.add_argument("--los", type=float, default=1.0)
    p.add_argument("--edf", default=None, help="explicit .edf cache (otherwise content-hash cache)")
    p.add_argument("--out", default=None, help="write the path JSON here")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="run the seeded benchmark suite")
    p.add_argument("--suite", default="s1,s2,s3,s4")
    p.add_argument("--algos", default="astar,ltstar,fs:9,fs:9-11")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, default=32)
    p.add_argument("--res", type=float, default=0.2)
    p.add_argument("--cw", type=float, default=500.0)
    p.add_argument("--los", type=float, default=1.0)
    p.add_argument("--clearance", type=float, default=None,
                   help="start/goal clearance in meters (default: 2x resolution)")
    p.add_argument("--time-reps", type=int, default=3)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run an oracle suite and emit a JSON summary")
    p.add_argument("--suite", choices=("edf", "hh", "triangle", "quality", "all"), default="all")
    p.add_argument("--cases", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="emit per-cost-weight timing curves as CSV")
    p.add_argument("--kind", default="h")
    p.add_argument("--dims", type=int, default=24)
    p.add_argument("--res", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cw-sweep", default="100,250,500,750,1000")
    p.add_argument("--algos", default="ltstar,fs:9")
    p.add_argument("--los", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--time-reps", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
