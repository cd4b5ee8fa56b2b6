"""Voxel occupancy grids: domain types, scenario generation, point-cloud
ingestion, and the ``.vxm`` on-disk format.

All planner geometry lives on voxel centers; a voxel (i, j, k) has its center
at ``origin + (index + 0.5) * resolution``. Grids are immutable after
construction and safe to share across concurrent planner queries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

SCENARIO_KINDS = ("h", "inverted_u", "near_closed_u", "maze")

_VXM_MAGIC = b"VXM1"
_VXM_HEADER = struct.Struct("<4s3Id3d")


class DimsTooSmallError(ValueError):
    """Requested grid dimensions cannot contain the scenario template."""


class PointCloudParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoValidPairError(RuntimeError):
    """No start/goal pair satisfying the clearance constraint was found."""


class MapFormatError(ValueError):
    """Malformed or truncated .vxm file."""


class GridCoord(NamedTuple):
    i: int
    j: int
    k: int


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float


class OccupancyGrid:
    """Boolean voxel lattice with metric resolution and world origin.

    ``occupied[i, j, k]`` is True where the obstacle set covers the voxel.
    Lattice boundary voxels carry no implicit occupancy; planning is confined
    to the lattice.
    """

    __slots__ = ("dims", "resolution", "origin", "occupied")

    def __init__(self, dims, resolution: float, origin: WorldPoint, occupied: np.ndarray):
        nx, ny, nz = (int(d) for d in dims)
        if nx <= 0 or ny <= 0 or nz <= 0:
            raise ValueError(f"grid dims must be positive, got {dims}")
        if not (resolution > 0.0 and np.isfinite(resolution)):
            raise ValueError(f"resolution must be a positive finite number, got {resolution}")
        origin = WorldPoint(*(float(v) for v in origin))
        if not all(np.isfinite(v) for v in origin):
            raise ValueError(f"origin must be finite, got {origin}")
        occupied = np.ascontiguousarray(occupied, dtype=np.bool_)
        if occupied.shape != (nx, ny, nz):
            raise ValueError(f"occupancy shape {occupied.shape} does not match dims {(nx, ny, nz)}")
        occupied.setflags(write=False)
        self.dims = (nx, ny, nz)
        self.resolution = float(resolution)
        self.origin = origin
        self.occupied = occupied

    def in_bounds(self, c) -> bool:
        i, j, k = c
        nx, ny, nz = self.dims
        return 0 <= i < nx and 0 <= j < ny and 0 <= k < nz

    def is_free(self, c) -> bool:
        return self.in_bounds(c) and not self.occupied[c[0], c[1], c[2]]

    def center(self, c) -> WorldPoint:
        """World coordinates of the voxel center."""
        r = self.resolution
        ox, oy, oz = self.origin
        return WorldPoint(ox + (c[0] + 0.5) * r, oy + (c[1] + 0.5) * r, oz + (c[2] + 0.5) * r)

    def centers(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized voxel-center lookup for an (n, 3) index array."""
        return np.asarray(self.origin) + (np.asarray(coords, dtype=np.float64) + 0.5) * self.resolution

    @property
    def n_occupied(self) -> int:
        return int(self.occupied.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OccupancyGrid)
            and self.dims == other.dims
            and self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.occupied, other.occupied)
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    grid: OccupancyGrid
    start: GridCoord
    goal: GridCoord
    min_clearance: float


def world_to_grid(grid: OccupancyGrid, p: WorldPoint) -> GridCoord | None:
    """Voxel index containing ``p``, or None when the point lies outside the
    lattice. In-bounds voxel centers round-trip exactly."""
    r = grid.resolution
    i = int(np.floor((p[0] - grid.origin.x) / r))
    j = int(np.floor((p[1] - grid.origin.y) / r))
    k = int(np.floor((p[2] - grid.origin.z) / r))
    c = GridCoord(i, j, k)
    return c if grid.in_bounds(c) else None


def _clearance_ball(resolution: float, clearance: float) -> np.ndarray:
    """Integer offsets whose center distance is strictly below ``clearance``."""
    if clearance <= 0:
        return np.zeros((0, 3), dtype=np.int64)
    r = int(np.ceil(clearance / resolution))
    rng = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    d = np.linalg.norm(off, axis=1) * resolution
    return off[d < clearance]


def _has_clearance(occ: np.ndarray, c, ball: np.ndarray) -> bool:
    if occ[c[0], c[1], c[2]]:
        return False
    nx, ny, nz = occ.shape
    pts = ball + np.asarray(c)
    ok = (
        (pts[:, 0] >= 0) & (pts[:, 0] < nx)
        & (pts[:, 1] >= 0) & (pts[:, 1] < ny)
        & (pts[:, 2] >= 0) & (pts[:, 2] < nz)
    )
    pts = pts[ok]
    return not occ[pts[:, 0], pts[:, 1], pts[:, 2]].any()


def _place_near(occ: np.ndarray, anchor, ball: np.ndarray, axis_slack=(6, 6, 6)) -> GridCoord:
    """Deterministically find a voxel with clearance near ``anchor``, scanning
    outward in Chebyshev rings (lexicographic within a ring)."""
    nx, ny, nz = occ.shape
    ai, aj, ak = anchor
    max_r = max(axis_slack)
    for r in range(0, max_r + 1):
        for di in range(-min(r, axis_slack[0]), min(r, axis_slack[0]) + 1):
            for dj in range(-min(r, axis_slack[1]), min(r, axis_slack[1]) + 1):
                for dk in range(-min(r, axis_slack[2]), min(r, axis_slack[2]) + 1):
                    if max(abs(di), abs(dj), abs(dk)) != r:
                        continue
                    c = (ai + di, aj + dj, ak + dk)
                    if 0 <= c[0] < nx and 0 <= c[1] < ny and 0 <= c[2] < nz and _has_clearance(occ, c, ball):
                        return GridCoord(*c)
    raise NoValidPairError(f"no voxel with required clearance near {tuple(anchor)}")


def _rint(rng, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi); degenerate ranges collapse to lo."""
    return int(rng.integers(lo, max(hi, lo + 1)))


def _template_h(nx, ny, nz, t, o, rng):
    occ = np.zeros((nx, ny, nz), np.bool_)
    m = 2
    x1 = round(nx * 0.32)
    x2 = round(nx * 0.66)
    occ[x1:x1 + t, m:ny - m, m:nz - m] = True
    occ[x2:x2 + t, m:ny - m, m:nz - m] = True
    yc = ny // 2
    occ[x1 + t:x2, yc:yc + t, m:nz - m] = True
    for x in (x1, x2):
        wy = _rint(rng, m + 1, ny - m - o - 1)
        wz = _rint(rng, m + 1, nz - m - o - 1)
        occ[x:x + t, wy:wy + o, wz:wz + o] = False
    start_anchor = (x1 // 2, ny // 2 + _rint(rng, -2, 3), nz // 2 + _rint(rng, -2, 3))
    goal_anchor = ((x2 + t + nx) // 2, ny // 2 + _rint(rng, -2, 3), nz // 2 + _rint(rng, -2, 3))
    return occ, start_anchor, goal_anchor, (6, 6, 6)


def _template_inverted_u(nx, ny, nz, t, o, rng):
    occ = np.zeros((nx, ny, nz), np.bool_)
    m = 2
    xl = round(nx * 0.30)
    xr = round(nx * 0.68)
    y0 = round(ny * 0.25)
    yt = ny - m - t
    occ[xl:xl + t, y0:yt + t, m:nz - m] = True
    occ[xr:xr + t, y0:yt + t, m:nz - m] = True
    occ[xl:xr + t, yt:yt + t, m:nz - m] = True
    # goal sits inside the pocket, start outside at the same (y, z) so the
    # straight start-goal segment must pierce the left leg
    gy = (y0 + yt) // 2 + _rint(rng, 0, 3)
    gz = nz // 2 + _rint(rng, -2, 3)
    goal_anchor = ((xl + t + xr) // 2, gy, gz)
    start_anchor = (max(1, xl // 2 - 1), gy, gz)
    # keep clearance adjustment inside the leg's (y, z) footprint
    return occ, start_anchor, goal_anchor, (3, 2, 2)


def _template_near_closed_u(nx, ny, nz, t, o, rng):
    occ = np.zeros((nx, ny, nz), np.bool_)
    m = 2
    xl = round(nx * 0.30)
    xr = round(nx * 0.68)
    y0 = round(ny * 0.30)
    yt = ny - m - t
    # walls span the full z extent: the pocket is sealed except for the mouth
    occ[xl:xl + t, y0:yt + t, :] = True
    occ[xr:xr + t, y0:yt + t, :] = True
    occ[xl:xr + t, yt:yt + t, :] = True
    occ[xl:xr + t, y0:y0 + t, :] = True
    # narrow full-height mouth in the bottom wall (the letter shape is an
    # extruded cross-section)
    wx = min(_rint(rng, xl + t + 1, xr - o - 1), max(xl + t, xr - o))
    occ[wx:min(wx + o, xr), y0:y0 + t, :] = False
    goal_anchor = ((xl + t + xr) // 2, (y0 + t + yt) // 2, nz // 2)
    start_anchor = (max(1, xl // 2 - 1), max(2, y0 // 2), nz // 2 + _rint(rng, -2, 3))
    return occ, start_anchor, goal_anchor, (3, 4, 4)


def _template_maze(nx, ny, nz, t, o, rng):
    occ = np.zeros((nx, ny, nz), np.bool_)
    walls = [round(nx * f) for f in (0.25, 0.5, 0.75)]
    for w, xw in enumerate(walls):
        occ[xw:xw + t, :, :] = True
        # serpentine: full-height slots alternating between the low and high
        # thirds of the wall (an extruded 2D maze)
        if w % 2 == 0:
            lo_y = ny // 3 - o // 2
        else:
            lo_y = 2 * ny // 3 - o // 2
        wy = min(max(2, _rint(rng, lo_y - 2, lo_y + 3)), ny - o - 2)
        occ[xw:xw + t, wy:wy + o, :] = False
    start_anchor = (walls[0] // 2, ny // 2 + _rint(rng, -2, 3), nz // 2 + _rint(rng, -2, 3))
    goal_anchor = ((walls[2] + t + nx) // 2, ny // 2 + _rint(rng, -2, 3), nz // 2 + _rint(rng, -2, 3))
    return occ, start_anchor, goal_anchor, (6, 6, 6)


_TEMPLATES = {
    "h": _template_h,
    "inverted_u": _template_inverted_u,
    "near_closed_u": _template_near_closed_u,
    "maze": _template_maze,
}


def gen_scenario(
    kind: str,
    dims,
    resolution: float,
    seed: int,
    wall_thickness: int = 2,
    opening: int = 4,
    min_clearance: float | None = None,
) -> Scenario:
    """Build a deterministic benchmark scenario of the given kind.

    ``kind`` is one of ``h`` (two parallel slabs joined by a crossbar),
    ``inverted_u`` (a pocket open at the bottom), ``near_closed_u`` (a pocket
    sealed except for one narrow mouth), or ``maze`` (serpentine walls with
    offset windows). Identical arguments produce byte-identical occupancy.
    """
    if kind not in _TEMPLATES:
        raise ValueError(f"unknown scenario kind {kind!r}, expected one of {SCENARIO_KINDS}")
    if isinstance(dims, (int, np.integer)):
        dims = (int(dims),) * 3
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 16:
        raise DimsTooSmallError(f"scenario templates need every dimension >= 16 voxels, got {(nx, ny, nz)}")
    if min_clearance is None:
        min_clearance = 2.0 * resolution
    rng = np.random.default_rng([int(seed), SCENARIO_KINDS.index(kind)])
    occ, s_anchor, g_anchor, slack = _TEMPLATES[kind](nx, ny, nz, wall_thickness, opening, rng)
    ball = _clearance_ball(resolution, min_clearance)
    start = _place_near(occ, s_anchor, ball, slack)
    goal = _place_near(occ, g_anchor, ball, slack)
    grid = OccupancyGrid((nx, ny, nz), resolution, WorldPoint(0.0, 0.0, 0.0), occ)
    name = f"{kind}-analogue-{nx}x{ny}x{nz}-seed{seed}"
    return Scenario(name=name, grid=grid, start=start, goal=goal, min_clearance=min_clearance)


def load_pointcloud_xyz(path, resolution: float, padding: int = 1) -> OccupancyGrid:
    """Voxelize an ASCII point cloud (one ``x y z`` triple per line).

    The lattice covers the point bounding box plus ``padding`` voxels on every
    side; a voxel is occupied iff it contains at least one point.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise PointCloudParseError(f"expected 3 fields, got {len(parts)}", lineno)
            try:
                pts.append([float(v) for v in parts])
            except ValueError:
                raise PointCloudParseError(f"non-numeric field in {stripped!r}", lineno) from None
            if not np.all(np.isfinite(pts[-1])):
                raise PointCloudParseError(f"non-finite coordinate in {stripped!r}", lineno)
    if not pts:
        raise PointCloudParseError("no points in file", 0)
    pts = np.asarray(pts, dtype=np.float64)
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    origin = mins - padding * resolution
    core = np.floor((maxs - mins) / resolution).astype(np.int64) + 1
    dims = tuple(int(d) for d in core + 2 * padding)
    idx = np.floor((pts - origin) / resolution).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(dims) - 1)
    occ = np.zeros(dims, np.bool_)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return OccupancyGrid(dims, resolution, WorldPoint(*origin), occ)


def sample_start_goal(
    grid: OccupancyGrid,
    edf,
    min_clearance: float,
    seed: int,
    max_attempts: int = 256,
) -> tuple[GridCoord, GridCoord]:
    """Draw a deterministic random pair of distinct free voxels whose stored
    distance field value is at least ``min_clearance``."""
    candidates = np.argwhere((~grid.occupied) & (edf.dist >= min_clearance))
    if len(candidates) < 2:
        raise NoValidPairError(
            f"need at least two free voxels with clearance >= {min_clearance}, found {len(candidates)}"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        a, b = rng.integers(0, len(candidates), size=2)
        if a != b:
            return GridCoord(*candidates[a]), GridCoord(*candidates[b])
    raise NoValidPairError(f"no distinct pair after {max_attempts} attempts")


def save_vxm(grid: OccupancyGrid, path) -> None:
    """Write the grid as a ``.vxm`` file: ``VXM1`` header then run-length
    encoded occupancy (u32 run length, u8 value, alternating)."""
    flat = grid.occupied.ravel().astype(np.uint8)
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    lengths = (ends - starts).astype(np.uint32)
    values = flat[starts]
    runs = np.empty(len(lengths), dtype=np.dtype([("len", "<u4"), ("val", "u1")]))
    runs["len"] = lengths
    runs["val"] = values
    header = _VXM_HEADER.pack(_VXM_MAGIC, *grid.dims, grid.resolution, *grid.origin)
    Path(path).write_bytes(header + runs.tobytes())


def load_vxm(path) -> OccupancyGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _VXM_HEADER.size:
        raise MapFormatError("file too short for header")
    magic, nx, ny, nz, res, ox, oy, oz = _VXM_HEADER.unpack_from(raw)
    if magic != _VXM_MAGIC:
        raise MapFormatError(f"bad magic {magic!r}")
    payload = raw[_VXM_HEADER.size:]
    if len(payload) % 5 != 0:
        raise MapFormatError("truncated RLE payload")
    runs = np.frombuffer(payload, dtype=np.dtype([("len", "<u4"), ("val", "u1")]))
    flat = np.repeat(runs["val"].astype(np.bool_), runs["len"])
    if flat.size != nx * ny * nz:
        raise MapFormatError(f"RLE expands to {flat.size} voxels, expected {nx * ny * nz}")
    occ = flat.reshape(nx, ny, nz)
    return OccupancyGrid((nx, ny, nz), res, WorldPoint(ox, oy, oz), occ)
