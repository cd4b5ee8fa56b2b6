"""Independent oracles and property suites for the toolkit's mathematical
claims: distance-field exactness, the two-sided segment-integral bounds, the
parent-shortcut cost ordering (triangle inequality of the edge cost), and the
2D neighbour-selection quality study.

Everything here deliberately avoids the production code paths it checks: the
brute-force field scans every occupied voxel, the bound checks evaluate
analytic distance functions for convex obstacles, and the quadrature reference
integrates with plain composite trapezoids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .edf import EdfGrid, EmptyObstacleSetError, segment_bounds
from .voxmap import OccupancyGrid, WorldPoint


def brute_force_squared(occ: OccupancyGrid, chunk: int = 4096) -> np.ndarray:
    """Exhaustive squared center distances in voxel units: per voxel, the
    minimum over every occupied voxel. Exact integers stored in float64."""
    obstacles = np.argwhere(occ.occupied).astype(np.int64)
    if len(obstacles) == 0:
        raise EmptyObstacleSetError("occupancy grid has no occupied voxel")
    coords = np.indices(occ.dims).reshape(3, -1).T.astype(np.int64)
    out = np.empty(coords.shape[0], np.float64)
    for s in range(0, coords.shape[0], chunk):
        blk = coords[s:s + chunk]
        diff = blk[:, None, :] - obstacles[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        out[s:s + chunk] = sq.min(axis=1)
    return out.reshape(occ.dims)


def brute_force_edf(occ: OccupancyGrid) -> EdfGrid:
    """Oracle distance field from the exhaustive nearest-obstacle scan."""
    dist = np.sqrt(brute_force_squared(occ)) * occ.resolution
    return EdfGrid(occ.dims, occ.resolution, occ.origin, dist)


# ---------------------------------------------------------------------------
# Parent-shortcut cost ordering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriangleCase:
    """One sampled parent/current/neighbour triple.

    ``p``, ``c_prime``, ``n_prime`` are the field values at the parent node,
    the current node, and the neighbour node; ``big_l`` is the direct
    parent-neighbour distance, ``d`` the parent-current distance, and ``a``
    the current-neighbour grid step. The derived sums ``r = p + n'``,
    ``s = p + c'`` and ``t = c' + n'`` price the three segments."""

    p: float
    c_prime: float
    n_prime: float
    big_l: float
    d: float
    a: float

    @property
    def r(self) -> float:
        return self.p + self.n_prime

    @property
    def s(self) -> float:
        return self.p + self.c_prime

    @property
    def t(self) -> float:
        return self.c_prime + self.n_prime

    def g1(self) -> float:
        """Direct parent-to-neighbour cost (shared g(parent) dropped)."""
        return self.big_l + 2.0 / (self.r * self.big_l)

    def g2(self) -> float:
        """Two-leg cost through the current node (shared g(parent) dropped)."""
        return self.d + 2.0 / (self.s * self.d) + self.a + 2.0 / (self.t * self.a)


@dataclass
class TriangleSuiteResult:
    cases: int
    failures: int
    first_counterexample: TriangleCase | None
    elapsed: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


_STEP_NORMS = np.array(sorted({
    math.sqrt(di * di + dj * dj + dk * dk)
    for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
}))

_OFF26 = np.array(sorted(
    (di, dj, dk)
    for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
), dtype=np.int64)


def _random_edf_grids(rng: np.random.Generator, n_grids: int, size: int):
    from .edf import compute_edf  # local import keeps module load light

    grids = []
    for _ in range(n_grids):
        fill = rng.uniform(0.01, 0.12)
        occ = rng.random((size, size, size)) < fill
        if not occ.any():
            occ[size // 2, size // 2, size // 2] = True
        grid = OccupancyGrid((size, size, size), 1.0, WorldPoint(0, 0, 0), occ)
        grids.append((grid, compute_edf(grid)))
    return grids


def check_triangle_inequality(
    n_cases: int,
    seed: int,
    max_los: float = 5.0,
    n_grids: int = 6,
    grid_size: int = 24,
) -> TriangleSuiteResult:
    """Sample geometric triples from real distance fields and check that the
    direct parent shortcut is always cheaper than the two-leg route.

    The neighbour node and current node are grid-adjacent (one step ``a``);
    the parent lies within ``max_los`` of the neighbour. Sampled cases must
    satisfy the premises that hold for 1-Lipschitz fields along the triple:
    |p - n'| < L, |p - c'| < d, |n' - c'| < a, plus L < d + a, L >= a, d >= a.
    Cases on the premise boundary are resampled.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    import time as _time

    t0 = _time.perf_counter()
    rng = np.random.default_rng(seed)
    grids = _random_edf_grids(rng, n_grids, grid_size)
    accepted = 0
    failures = 0
    first_bad: TriangleCase | None = None
    reach = int(max_los)

    while accepted < n_cases:
        batch = min(200_000, 4 * (n_cases - accepted) + 1024)
        grid, edf = grids[int(rng.integers(0, len(grids)))]
        nx, ny, nz = grid.dims
        free = ~grid.occupied

        sn = np.column_stack([
            rng.integers(1, nx - 1, batch),
            rng.integers(1, ny - 1, batch),
            rng.integers(1, nz - 1, batch),
        ])
        sc = sn + _OFF26[rng.integers(0, 26, batch)]
        sp = sn + rng.integers(-reach, reach + 1, (batch, 3))
        sp_c = np.clip(sp, 0, np.array((nx, ny, nz)) - 1)
        ok = (
            (sp >= 0).all(axis=1) & (sp < (nx, ny, nz)).all(axis=1)
            & free[sn[:, 0], sn[:, 1], sn[:, 2]]
            & free[sc[:, 0], sc[:, 1], sc[:, 2]]
            & free[sp_c[:, 0], sp_c[:, 1], sp_c[:, 2]]
        )
        sn, sc, sp = sn[ok], sc[ok], sp[ok]
        a = np.linalg.norm((sc - sn).astype(np.float64), axis=1)
        d = np.linalg.norm((sp - sc).astype(np.float64), axis=1)
        big_l = np.linalg.norm((sp - sn).astype(np.float64), axis=1)
        p = edf.dist[sp[:, 0], sp[:, 1], sp[:, 2]]
        c = edf.dist[sc[:, 0], sc[:, 1], sc[:, 2]]
        n = edf.dist[sn[:, 0], sn[:, 1], sn[:, 2]]
        ok = (
            (big_l <= max_los) & (big_l >= a) & (d >= a) & (big_l < d + a)
            & (np.abs(p - n) < big_l) & (np.abs(p - c) < d) & (np.abs(n - c) < a)
        )
        a, d, big_l, p, c, n = a[ok], d[ok], big_l[ok], p[ok], c[ok], n[ok]
        if len(a) == 0:
            continue
        take = min(len(a), n_cases - accepted)
        a, d, big_l, p, c, n = a[:take], d[:take], big_l[:take], p[:take], c[:take], n[:take]
        g1 = big_l + 2.0 / ((p + n) * big_l)
        g2 = d + 2.0 / ((p + c) * d) + a + 2.0 / ((c + n) * a)
        bad = ~(g1 < g2)
        accepted += take
        if bad.any():
            failures += int(bad.sum())
            if first_bad is None:
                i = int(np.flatnonzero(bad)[0])
                first_bad = TriangleCase(
                    p=float(p[i]), c_prime=float(c[i]), n_prime=float(n[i]),
                    big_l=float(big_l[i]), d=float(d[i]), a=float(a[i]),
                )
    return TriangleSuiteResult(
        cases=accepted, failures=failures,
        first_counterexample=first_bad,
        elapsed=_time.perf_counter() - t0,
    )


def find_premise_violation(seed: int = 0, attempts: int = 20000) -> TriangleCase | None:
    """Search synthetic field values that break the Lipschitz premises and
    invert the cost ordering, demonstrating the premises are necessary."""
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        a = float(rng.choice(_STEP_NORMS))
        d = a + float(rng.uniform(0.0, 3.0))
        big_l = float(rng.uniform(a, d + a - 1e-9))
        # non-Lipschitz: current node pretends to be far from obstacles while
        # parent and neighbour sit close
        p = float(rng.uniform(0.005, 0.05))
        n_prime = float(rng.uniform(0.005, 0.05))
        c_prime = float(rng.uniform(5.0, 100.0))
        case = TriangleCase(p=p, c_prime=c_prime, n_prime=n_prime, big_l=big_l, d=d, a=a)
        if case.g1() >= case.g2():
            return case
    return None


# ---------------------------------------------------------------------------
# Convex-obstacle bound checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereObstacle:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1) - self.radius
        return np.maximum(d, 0.0)


@dataclass(frozen=True)
class BoxObstacle:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)  # full side lengths

    def distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        half = np.asarray(self.extents) / 2.0
        q = np.abs(pts - np.asarray(self.center)) - half
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1)


@dataclass(frozen=True)
class SegmentRecord:
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    d_a: float
    d_b: float
    length: float
    lower: float
    upper: float
    quadrature: float
    eps_quad: float

    @property
    def within_bounds(self) -> bool:
        return self.lower <= self.quadrature <= self.upper + self.eps_quad

    @property
    def rel_error(self) -> float:
        return (self.upper - self.quadrature) / self.upper

    @property
    def rel_error_bound(self) -> float:
        return self.length / (self.d_a + self.d_b)


@dataclass
class HhBoundsResult:
    records: list[SegmentRecord] = field(default_factory=list)

    @property
    def cases(self) -> int:
        return len(self.records)

    @property
    def bound_violations(self) -> list[SegmentRecord]:
        return [r for r in self.records if not r.within_bounds]

    @property
    def rel_error_violations(self) -> list[SegmentRecord]:
        return [r for r in self.records if r.rel_error > r.rel_error_bound + r.eps_quad]

    @property
    def passed(self) -> bool:
        return not self.bound_violations and not self.rel_error_violations


def quadrature_segment(obstacle, a, b, n_samples: int = 1001) -> float:
    """Composite trapezoid of the analytic distance along the segment."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.linspace(0.0, 1.0, n_samples)
    pts = a + t[:, None] * (b - a)
    d = obstacle.distance(pts)
    w = np.ones(n_samples)
    w[0] = w[-1] = 0.5
    length = float(np.linalg.norm(b - a))
    return float(length * np.dot(w, d) / (n_samples - 1))


def trapezoid_error_bound(d_a: float, d_b: float, length: float, n_samples: int) -> float:
    """Analytic composite-trapezoid error bound. The distance to a convex set
    has curvature at most 1/d along the segment, and by the Lipschitz property
    the distance on the segment is at least (d_a + d_b - L) / 2."""
    d_min = max(0.5 * (d_a + d_b - length), 1e-12)
    return length ** 3 / (12.0 * (n_samples - 1) ** 2 * d_min)


def check_hh_bounds(
    obstacle,
    n_segments: int,
    seed: int,
    n_samples: int = 1001,
    sample_box: float = 6.0,
) -> HhBoundsResult:
    """Sample segments outside a convex obstacle and check that the trapezoid
    reference integral sits inside the endpoint-derived bounds."""
    rng = np.random.default_rng(seed)
    out = HhBoundsResult()
    while len(out.records) < n_segments:
        pts = rng.uniform(-sample_box, sample_box, size=(256, 2, 3))
        d_a = obstacle.distance(pts[:, 0])
        d_b = obstacle.distance(pts[:, 1])
        length = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
        # clear of the obstacle along the whole segment, with enough margin
        # that the lower bound stays positive
        ok = (d_a > 0.3) & (d_b > 0.3) & (length > 0.05) & (d_a + d_b > length + 0.3)
        for i in np.flatnonzero(ok):
            if len(out.records) >= n_segments:
                break
            a, b = pts[i, 0], pts[i, 1]
            bounds = segment_bounds(float(d_a[i]), float(d_b[i]), float(length[i]))
            quad = quadrature_segment(obstacle, a, b, n_samples)
            eps = trapezoid_error_bound(float(d_a[i]), float(d_b[i]), float(length[i]), n_samples)
            out.records.append(SegmentRecord(
                a=tuple(a), b=tuple(b),
                d_a=float(d_a[i]), d_b=float(d_b[i]), length=float(length[i]),
                lower=bounds.lower, upper=bounds.upper,
                quadrature=quad, eps_quad=eps,
            ))
    return out


def analytic_field_grid(obstacle, dims, resolution: float, origin) -> EdfGrid:
    """Synthetic field grid whose values are the analytic convex-obstacle
    distance at voxel centers; used to cross-check the grid-level segment
    operations against closed forms."""
    coords = np.indices(dims).reshape(3, -1).T
    centers = np.asarray(origin) + (coords + 0.5) * resolution
    dist = obstacle.distance(centers).reshape(dims)
    return EdfGrid(dims, resolution, WorldPoint(*origin), dist)


# ---------------------------------------------------------------------------
# 2D neighbour-selection quality study
# ---------------------------------------------------------------------------

_OFF8 = tuple(sorted(
    (di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)
))
_OFF8_ARR = np.array(_OFF8, dtype=np.float64)
_OFF8_NORM = np.linalg.norm(_OFF8_ARR, axis=1)
_OFF8_UNIT = _OFF8_ARR / _OFF8_NORM[:, None]


@dataclass(frozen=True)
class QualityConfig:
    """Sweep parameters for the 2D selection-quality study.

    Two setups are swept: the goal orbits the obstacle at a small radius, and
    at a large radius (so the current node can sit between goal and obstacle).
    Candidates are evaluated at each line-of-sight range along the 8 planar
    directions and ranked by cost-plus-heuristic; the study scores how often
    the k selected directions include one of the three cheapest."""

    k_selected: int = 3
    obstacle_radius: float = 3.0
    obstacle_step_deg: float = 5.0
    goal_radius_small: float = 2.0
    goal_radius_large: float = 6.0
    goal_step_deg: float = 5.0
    los_values: tuple = tuple(range(1, 11))
    cost_weight: float = 20.0

    def __post_init__(self):
        if self.k_selected not in (3, 5, 8):
            raise ValueError("k_selected must be 3, 5 or 8")
        for step in (self.obstacle_step_deg, self.goal_step_deg):
            if step <= 0 or 360.0 % step != 0.0:
                raise ValueError(f"angular step {step} must divide 360")


@dataclass
class QualityStudyResult:
    rows: list[tuple[float, float, float]]  # (los, score_small_orbit, score_large_orbit), percent

    @property
    def min_score(self) -> float:
        return min(min(a, b) for _, a, b in self.rows)

    def scores_by_los(self) -> dict[float, float]:
        return {los: min(a, b) for los, a, b in self.rows}


def _quality_scores(cfg: QualityConfig, goal_radius: float, los: float) -> float:
    a_obs = np.radians(np.arange(0.0, 360.0, cfg.obstacle_step_deg))
    a_goal = np.radians(np.arange(0.0, 360.0, cfg.goal_step_deg))
    oa, ga = np.meshgrid(a_obs, a_goal, indexing="ij")
    oa, ga = oa.ravel(), ga.ravel()
    obstacle = cfg.obstacle_radius * np.stack([np.cos(oa), np.sin(oa)], axis=1)
    goal = obstacle + goal_radius * np.stack([np.cos(ga), np.sin(ga)], axis=1)
    d_s = np.full(len(oa), cfg.obstacle_radius)

    # cost ranking of the 8 directions probed at the line-of-sight range
    cand = los * _OFF8_ARR[None, :, :]
    lengths = los * _OFF8_NORM
    d_n = np.maximum(np.linalg.norm(cand - obstacle[:, None, :], axis=2), 1e-9)
    seg = 0.5 * (d_s[:, None] + d_n) * lengths[None, :]
    g = lengths[None, :] + cfg.cost_weight / seg
    h = np.linalg.norm(goal[:, None, :] - cand, axis=2)
    cheapest3 = np.argsort(g + h, axis=1, kind="stable")[:, :3]

    # selection: steepest retreat on the unit ring blended with goal direction
    d_ring = np.maximum(np.linalg.norm(_OFF8_ARR[None, :, :] - obstacle[:, None, :], axis=2), 1e-9)
    deriv = (d_s[:, None] - d_ring) / _OFF8_NORM[None, :]
    retreat = _OFF8_UNIT[np.argmin(deriv, axis=1)]
    goal_norm = np.linalg.norm(goal, axis=1)
    keep = goal_norm > 1e-12  # goal exactly on the current node is undefined
    goal_dir = goal[keep] / goal_norm[keep, None]
    u = retreat[keep] + goal_dir
    u_norm = np.linalg.norm(u, axis=1)
    degenerate = u_norm < 1e-12
    u[degenerate] = goal_dir[degenerate]
    u /= np.linalg.norm(u, axis=1)[:, None]
    dots = u @ _OFF8_UNIT.T
    selected = np.argsort(-dots, axis=1, kind="stable")[:, :cfg.k_selected]
    hit = (cheapest3[keep][:, :, None] == selected[:, None, :]).any(axis=(1, 2))
    return 100.0 * float(hit.mean())


def quality_study_2d(cfg: QualityConfig) -> QualityStudyResult:
    """Score the 2D analogue of the gradient neighbour selection across the
    line-of-sight sweep, for both goal-orbit setups."""
    rows = []
    for los in cfg.los_values:
        score_small = _quality_scores(cfg, cfg.goal_radius_small, float(los))
        score_large = _quality_scores(cfg, cfg.goal_radius_large, float(los))
        rows.append((float(los), score_small, score_large))
    return QualityStudyResult(rows=rows)
