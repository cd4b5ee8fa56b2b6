"""Grid planners sharing a clearance-weighted edge cost.

Three planners operate on the same (occupancy, distance field) pair:

* ``plan_astar``  - A* over 26-connectivity; the baseline.
* ``plan_lt_full``- lazy any-angle search expanding all 26 neighbours, with
  line-of-sight checks deferred to node expansion and bounded by ``max_los``.
* ``plan_fs``     - the same lazy engine, but each expansion only relaxes a
  gradient-selected subset of neighbours: the retreat direction (steepest
  distance-field ascent away from obstacles) is blended with the goal
  direction, and the k offsets best aligned with the blend are expanded.
  If the open list empties without reaching the goal the search reruns once
  with the fallback policy.

The shared edge cost is  |b - a| + c_w / O(a, b)  where O is the segment
integral of the distance field priced by its endpoint-average upper bound, so
low-clearance segments are expensive. The penalty of a segment scales like
1/L at fixed endpoint clearance, which is why the line-of-sight limit matters:
unbounded shortcut segments would dilute the clearance term.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .edf import EdfGrid, OutOfBoundsError, segment_bounds
from .voxmap import GridCoord, OccupancyGrid

ALLOWED_FIXED_COUNTS = (9, 10, 11, 13, 15, 17)

# all 26 offsets in lexicographic order; ties in every selection rule break
# toward the lexicographically smallest offset
OFFSETS: tuple[tuple[int, int, int], ...] = tuple(sorted(
    (di, dj, dk)
    for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
))
_OFFSET_NORMS = tuple(math.sqrt(di * di + dj * dj + dk * dk) for di, dj, dk in OFFSETS)
_OFFSET_UNITS = tuple(
    (di / n, dj / n, dk / n) for (di, dj, dk), n in zip(OFFSETS, _OFFSET_NORMS)
)


class NoPathError(RuntimeError):
    def __init__(self, message: str, explored_nodes: int = 0, fallback_used: bool = False):
        super().__init__(message)
        self.explored_nodes = explored_nodes
        self.fallback_used = fallback_used


@dataclass(frozen=True)
class Full26:
    def __str__(self):
        return "full26"


@dataclass(frozen=True)
class Fixed:
    k: int

    def __post_init__(self):
        if self.k not in ALLOWED_FIXED_COUNTS:
            raise ValueError(f"neighbour count must be one of {ALLOWED_FIXED_COUNTS}, got {self.k}")

    def __str__(self):
        return str(self.k)


@dataclass(frozen=True)
class Adaptive:
    k_near: int
    k_far: int

    def __post_init__(self):
        if self.k_near not in ALLOWED_FIXED_COUNTS or self.k_far not in ALLOWED_FIXED_COUNTS:
            raise ValueError(f"adaptive counts must come from {ALLOWED_FIXED_COUNTS}")
        if not self.k_near < self.k_far:
            raise ValueError(f"need k_near < k_far, got {self.k_near} >= {self.k_far}")

    def __str__(self):
        return f"{self.k_near}-{self.k_far}"


NeighbourPolicy = Full26 | Fixed | Adaptive


def parse_neighbour_policy(text: str) -> NeighbourPolicy:
    """Parse ``full26``, a single count like ``9``, or a pair like ``9-11``."""
    text = text.strip().lower()
    if text in ("full", "full26", "26"):
        return Full26()
    if "-" in text:
        lo, _, hi = text.partition("-")
        return Adaptive(int(lo), int(hi))
    return Fixed(int(text))


@dataclass(frozen=True)
class PlannerConfig:
    """Shared planner parameters.

    ``c_w`` weights the clearance penalty in the edge cost; ``max_los`` bounds
    shortcut segment length in meters; the neighbour policy only affects
    ``plan_fs``. The goal condition is exact voxel identity.
    """

    c_w: float = 500.0
    max_los: float = 1.0
    neighbour_policy: NeighbourPolicy = field(default_factory=Full26)
    fallback_policy: NeighbourPolicy = field(default_factory=lambda: Fixed(17))
    heuristic_weight: float = 1.0

    def __post_init__(self):
        if self.c_w < 0:
            raise ValueError("c_w must be non-negative")
        if self.max_los <= 0:
            raise ValueError("max_los must be positive")
        if self.heuristic_weight < 1.0:
            raise ValueError("heuristic_weight must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "c_w": self.c_w,
            "max_los": self.max_los,
            "neighbour_policy": str(self.neighbour_policy),
            "fallback_policy": str(self.fallback_policy),
            "heuristic_weight": self.heuristic_weight,
        }


@dataclass
class PathResult:
    waypoints: list[GridCoord]
    total_cost: float
    explored_nodes: int
    wall_time: float
    fallback_used: bool = False

    def world_waypoints(self, grid: OccupancyGrid) -> np.ndarray:
        return grid.centers(np.asarray(self.waypoints, dtype=np.int64))

    def to_json_dict(self, algorithm: str, cfg: PlannerConfig, grid: OccupancyGrid) -> dict:
        return {
            "algorithm": algorithm,
            "config": cfg.to_json_dict(),
            "start": list(self.waypoints[0]),
            "goal": list(self.waypoints[-1]),
            "waypoints": [list(w) for w in self.waypoints],
            "world_waypoints": [list(p) for p in self.world_waypoints(grid)],
            "total_cost": self.total_cost,
            "explored_nodes": self.explored_nodes,
            "wall_time_s": self.wall_time,
            "fallback_used": self.fallback_used,
        }


class LosResult(Enum):
    VISIBLE = "visible"
    BLOCKED = "blocked"
    TOO_FAR = "too_far"


def _traversal_blocked(occ: np.ndarray, a, b) -> bool:
    """Parametric voxel walk between the centers of ``a`` and ``b``; True if
    any visited voxel is occupied. Exact ties step several axes at once, so
    a segment through a cell corner does not clip the cells beside it."""
    ax, ay, az = a[0] + 0.5, a[1] + 0.5, a[2] + 0.5
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    dz = b[2] - a[2]
    i, j, k = int(a[0]), int(a[1]), int(a[2])
    step_i = step_j = step_k = 0
    t_i = t_j = t_k = math.inf
    dt_i = dt_j = dt_k = math.inf
    if dx > 0:
        step_i, t_i, dt_i = 1, (i + 1 - ax) / dx, 1.0 / dx
    elif dx < 0:
        step_i, t_i, dt_i = -1, (i - ax) / dx, -1.0 / dx
    if dy > 0:
        step_j, t_j, dt_j = 1, (j + 1 - ay) / dy, 1.0 / dy
    elif dy < 0:
        step_j, t_j, dt_j = -1, (j - ay) / dy, -1.0 / dy
    if dz > 0:
        step_k, t_k, dt_k = 1, (k + 1 - az) / dz, 1.0 / dz
    elif dz < 0:
        step_k, t_k, dt_k = -1, (k - az) / dz, -1.0 / dz
    while True:
        if occ[i, j, k]:
            return True
        t = min(t_i, t_j, t_k)
        if t >= 1.0:
            return False
        if t_i == t:
            i += step_i
            t_i += dt_i
        if t_j == t:
            j += step_j
            t_j += dt_j
        if t_k == t:
            k += step_k
            t_k += dt_k


def line_of_sight(occ: OccupancyGrid, a, b, max_los: float) -> LosResult:
    """Visibility between two voxel centers, bounded by ``max_los`` meters.
    Symmetric in its endpoints."""
    if not occ.in_bounds(a) or not occ.in_bounds(b):
        raise OutOfBoundsError(f"line of sight endpoints {tuple(a)}, {tuple(b)} must be in bounds")
    di, dj, dk = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    dist = math.sqrt(di * di + dj * dj + dk * dk) * occ.resolution
    if dist > max_los:
        return LosResult.TOO_FAR
    lo, hi = (tuple(a), tuple(b)) if tuple(a) <= tuple(b) else (tuple(b), tuple(a))
    return LosResult.BLOCKED if _traversal_blocked(occ.occupied, lo, hi) else LosResult.VISIBLE


def edge_cost(edf: EdfGrid, a, b, c_w: float) -> float:
    """Euclidean length plus the clearance penalty c_w / O(a, b)."""
    di, dj, dk = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    length = math.sqrt(di * di + dj * dj + dk * dk) * edf.resolution
    if length == 0.0:
        raise ValueError("zero-length edge")
    if c_w == 0.0:
        return length
    d_a = float(edf.dist[a[0], a[1], a[2]])
    d_b = float(edf.dist[b[0], b[1], b[2]])
    if d_a == 0.0 or d_b == 0.0:
        raise ValueError("edge endpoint lies on an occupied voxel")
    return length + c_w / segment_bounds(d_a, d_b, length).value


def heuristic(grid: OccupancyGrid, a, goal, weight: float = 1.0) -> float:
    """Weighted straight-line distance between voxel centers. At weight 1 it
    never exceeds the true path length, and the clearance penalty only adds
    cost on top, so it stays admissible for the combined cost."""
    di, dj, dk = goal[0] - a[0], goal[1] - a[1], goal[2] - a[2]
    return weight * math.sqrt(di * di + dj * dj + dk * dk) * grid.resolution


def _resolve_k(policy: NeighbourPolicy, cos_angle: float) -> int | None:
    """Neighbour count for this expansion, or None for all 26."""
    if isinstance(policy, Full26):
        return None
    if isinstance(policy, Fixed):
        return policy.k
    # adaptive: angle between retreat and goal directions below 90 degrees
    # means both agree, so the narrow set suffices
    return policy.k_near if cos_angle > 0.0 else policy.k_far


def choose_neighbours(edf: EdfGrid, s, goal, policy: NeighbourPolicy) -> list[tuple[int, int, int]]:
    """Gradient-guided neighbour offsets for expanding ``s``, most promising
    first. Offsets leading outside the lattice are dropped."""
    nx, ny, nz = edf.dims
    si, sj, sk = s
    dist = edf.dist
    d_s = dist[si, sj, sk]
    inv_res = 1.0 / edf.resolution
    best_deriv = math.inf
    best_idx = 0
    in_bounds = [False] * 26
    for idx, (di, dj, dk) in enumerate(OFFSETS):
        ni, nj, nk = si + di, sj + dj, sk + dk
        if 0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz:
            in_bounds[idx] = True
            deriv = (d_s - dist[ni, nj, nk]) * inv_res / _OFFSET_NORMS[idx]
            if deriv < best_deriv:
                best_deriv = deriv
                best_idx = idx
    ex, ey, ez = _OFFSET_UNITS[best_idx]  # most negative derivative: fastest retreat
    gx, gy, gz = goal[0] - si, goal[1] - sj, goal[2] - sk
    gn = math.sqrt(gx * gx + gy * gy + gz * gz)
    if gn == 0.0:
        raise ValueError("cannot choose neighbours at the goal voxel")
    gx, gy, gz = gx / gn, gy / gn, gz / gn
    ux, uy, uz = ex + gx, ey + gy, ez + gz
    un = math.sqrt(ux * ux + uy * uy + uz * uz)
    if un < 1e-12:
        ux, uy, uz = gx, gy, gz
    else:
        ux, uy, uz = ux / un, uy / un, uz / un

    k = _resolve_k(policy, ex * gx + ey * gy + ez * gz)
    valid = [idx for idx in range(26) if in_bounds[idx]]
    if k is None:
        ranked = valid
    else:
        # stable sort over lexicographic offsets realizes the tie-break
        ranked = sorted(
            valid,
            key=lambda idx: -(_OFFSET_UNITS[idx][0] * ux
                              + _OFFSET_UNITS[idx][1] * uy
                              + _OFFSET_UNITS[idx][2] * uz),
        )
        if isinstance(policy, Fixed) and policy.k == 10:
            # nine around the best candidate plus the node opposite to it
            head = ranked[:9]
            opp = tuple(-v for v in OFFSETS[ranked[0]])
            opp_idx = OFFSETS.index(opp)
            if in_bounds[opp_idx] and opp_idx not in head:
                head.append(opp_idx)
            ranked = head
        else:
            ranked = ranked[:k]
    return [OFFSETS[idx] for idx in ranked]


def reconstruct_path(parent: np.ndarray, start_idx: int, goal_idx: int, dims) -> list[GridCoord]:
    """Walk the parent chain from goal to start and reverse it."""
    ny, nz = dims[1], dims[2]
    path = []
    idx = goal_idx
    guard = parent.size + 1
    while True:
        path.append(GridCoord(idx // (ny * nz), (idx // nz) % ny, idx % nz))
        if idx == start_idx:
            break
        nxt = int(parent[idx])
        if nxt < 0 or nxt == idx or len(path) > guard:
            raise RuntimeError("broken parent chain")
        idx = nxt
    path.reverse()
    return path


def _check_endpoints(occ: OccupancyGrid, edf: EdfGrid, cfg: PlannerConfig, start, goal):
    if occ.dims != edf.dims or occ.resolution != edf.resolution:
        raise ValueError("occupancy grid and distance field do not describe the same lattice")
    if cfg.max_los < occ.resolution:
        raise ValueError(f"max_los {cfg.max_los} is below the grid resolution {occ.resolution}")
    for name, c in (("start", start), ("goal", goal)):
        if not occ.in_bounds(c):
            raise ValueError(f"{name} voxel {tuple(c)} is out of bounds")
        if occ.occupied[c[0], c[1], c[2]]:
            raise ValueError(f"{name} voxel {tuple(c)} is occupied")


def _run_search(occ, edf, cfg, start, goal, lazy: bool, policy, explored_offset=0):
    """Shared engine. ``lazy`` switches between plain A* relaxation and the
    deferred line-of-sight scheme with parent shortcuts."""
    nx, ny, nz = occ.dims
    res = occ.resolution
    n = nx * ny * nz
    occ_flat = occ.occupied.ravel()
    dist_flat = edf.dist.ravel()
    c_w = cfg.c_w
    max_los = cfg.max_los
    hw = cfg.heuristic_weight
    occ_arr = occ.occupied

    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)

    start_idx = (start[0] * ny + start[1]) * nz + start[2]
    goal_idx = (goal[0] * ny + goal[1]) * nz + goal[2]
    gi, gj, gk = goal

    g[start_idx] = 0.0
    parent[start_idx] = start_idx
    # heap entries (f, -g, flat index): larger g wins f-ties (goal-ward bias),
    # then the row-major index gives the lexicographic coordinate tie-break
    heap = [(heuristic(occ, start, goal, hw), -0.0, start_idx)]
    pops = 0

    t0 = time.perf_counter()
    while heap:
        f, neg_g, s = heapq.heappop(heap)
        if closed[s] or -neg_g > g[s]:
            continue
        pops += 1
        si, sj, sk = s // (ny * nz), (s // nz) % ny, s % nz

        if lazy and s != start_idx:
            # deferred check: drop the inherited shortcut parent if it turned
            # out blocked or longer than the line-of-sight bound
            p = parent[s]
            pi, pj, pk = p // (ny * nz), (p // nz) % ny, p % nz
            dx, dy, dz = si - pi, sj - pj, sk - pk
            p_len = math.sqrt(dx * dx + dy * dy + dz * dz) * res
            a, b = sorted(((pi, pj, pk), (si, sj, sk)))
            if p_len > max_los or _traversal_blocked(occ_arr, a, b):
                best_g = math.inf
                best_p = -1
                d_s = dist_flat[s]
                for (di, dj, dk), onorm in zip(OFFSETS, _OFFSET_NORMS):
                    ci, cj, ck = si + di, sj + dj, sk + dk
                    if not (0 <= ci < nx and 0 <= cj < ny and 0 <= ck < nz):
                        continue
                    c = (ci * ny + cj) * nz + ck
                    if not closed[c]:
                        continue
                    length = onorm * res
                    cand = g[c] + length
                    if c_w:
                        cand += c_w / (0.5 * (dist_flat[c] + d_s) * length)
                    if cand < best_g:
                        best_g = cand
                        best_p = c
                if best_p < 0:
                    # cannot happen: the relaxer of s is a closed neighbour
                    g[s] = math.inf
                    closed[s] = True
                    continue
                g[s] = best_g
                parent[s] = best_p

        if s == goal_idx:
            wall = time.perf_counter() - t0
            path = reconstruct_path(parent, start_idx, goal_idx, occ.dims)
            return PathResult(
                waypoints=path,
                total_cost=float(g[goal_idx]),
                explored_nodes=explored_offset + pops,
                wall_time=wall,
            )

        closed[s] = True
        d_s = dist_flat[s]
        g_s = g[s]

        if policy is None or isinstance(policy, Full26):
            offsets = OFFSETS
        else:
            offsets = choose_neighbours(edf, (si, sj, sk), goal, policy)

        if lazy:
            p = parent[s]
            pi, pj, pk = p // (ny * nz), (p // nz) % ny, p % nz
            g_p = g[p]
            d_p = dist_flat[p]

        for di, dj, dk in offsets:
            ti, tj, tk = si + di, sj + dj, sk + dk
            if not (0 <= ti < nx and 0 <= tj < ny and 0 <= tk < nz):
                continue
            t_idx = (ti * ny + tj) * nz + tk
            if closed[t_idx] or occ_flat[t_idx]:
                continue
            d_t = dist_flat[t_idx]
            if lazy:
                # optimistic shortcut through parent(s); length deliberately
                # uncapped here, the pop-time check above corrects it
                dx, dy, dz = ti - pi, tj - pj, tk - pk
                length = math.sqrt(dx * dx + dy * dy + dz * dz) * res
                if length == 0.0:
                    continue
                cand = g_p + length
                if c_w:
                    cand += c_w / (0.5 * (d_p + d_t) * length)
                new_parent = p
            else:
                length = math.sqrt(di * di + dj * dj + dk * dk) * res
                cand = g_s + length
                if c_w:
                    cand += c_w / (0.5 * (d_s + d_t) * length)
                new_parent = s
            if cand < g[t_idx]:
                g[t_idx] = cand
                parent[t_idx] = new_parent
                h = hw * math.sqrt((gi - ti) ** 2 + (gj - tj) ** 2 + (gk - tk) ** 2) * res
                heapq.heappush(heap, (cand + h, -cand, t_idx))

    raise NoPathError("open list exhausted without reaching the goal", explored_nodes=explored_offset + pops)


def plan_astar(occ: OccupancyGrid, edf: EdfGrid, cfg: PlannerConfig, start, goal) -> PathResult:
    """Baseline A* over the 26-connected voxel graph with the shared cost."""
    _check_endpoints(occ, edf, cfg, start, goal)
    return _run_search(occ, edf, cfg, start, goal, lazy=False, policy=None)


def plan_lt_full(occ: OccupancyGrid, edf: EdfGrid, cfg: PlannerConfig, start, goal) -> PathResult:
    """Lazy any-angle search expanding all 26 neighbours; no fallback."""
    _check_endpoints(occ, edf, cfg, start, goal)
    return _run_search(occ, edf, cfg, start, goal, lazy=True, policy=Full26())


def plan_fs(occ: OccupancyGrid, edf: EdfGrid, cfg: PlannerConfig, start, goal) -> PathResult:
    """Gradient-pruned lazy search per ``cfg.neighbour_policy``; reruns once
    with the fallback policy if the reduced search exhausts its open list."""
    _check_endpoints(occ, edf, cfg, start, goal)
    try:
        return _run_search(occ, edf, cfg, start, goal, lazy=True, policy=cfg.neighbour_policy)
    except NoPathError as first:
        try:
            result = _run_search(
                occ, edf, cfg, start, goal,
                lazy=True, policy=cfg.fallback_policy,
                explored_offset=first.explored_nodes,
            )
        except NoPathError as second:
            raise NoPathError(
                "no path found (fallback policy also exhausted)",
                explored_nodes=second.explored_nodes,
                fallback_used=True,
            ) from None
        result.fallback_used = True
        return result
