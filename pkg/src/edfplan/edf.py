"""Euclidean distance fields over voxel grids.

The field stores, per voxel, the exact Euclidean distance from the voxel
center to the nearest occupied voxel center. Distances to a fixed obstacle set
are 1-Lipschitz, and along any straight segment that stays inside one convex
obstacle's region the distance is convex in the segment parameter. Those two
facts give two-sided bounds on the integral of the distance along a segment:

    mid * L - L^2/2  <=  integral  <=  mid * L,      mid = (d(a) + d(b)) / 2

(upper bound: endpoint average of a convex function; lower bound: the midpoint
value is at least each endpoint value minus L/2). The planner prices segments
with the upper bound; the gap between the bounds is exactly L^2/2, so the
relative pricing error grows like L / (d(a) + d(b)) and shrinks as segments
get shorter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .voxmap import OccupancyGrid, WorldPoint

_INF = np.inf

_EDF_MAGIC = b"EDF1"
_EDF_HEADER = struct.Struct("<4s3Id3d")


class EmptyObstacleSetError(ValueError):
    """Distance to an empty obstacle set is undefined."""


class OutOfBoundsError(IndexError):
    """Voxel index outside the lattice."""


class EdfGrid:
    """Per-voxel distance-to-nearest-obstacle, meters. Immutable; all queries
    are pure and safe under concurrent reads."""

    __slots__ = ("dims", "resolution", "origin", "dist")

    def __init__(self, dims, resolution: float, origin: WorldPoint, dist: np.ndarray):
        nx, ny, nz = (int(d) for d in dims)
        dist = np.ascontiguousarray(dist, dtype=np.float64)
        if dist.shape != (nx, ny, nz):
            raise ValueError(f"distance array shape {dist.shape} does not match dims {(nx, ny, nz)}")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        dist.setflags(write=False)
        self.dims = (nx, ny, nz)
        self.resolution = float(resolution)
        self.origin = WorldPoint(*(float(v) for v in origin))
        self.dist = dist

    def in_bounds(self, c) -> bool:
        i, j, k = c
        nx, ny, nz = self.dims
        return 0 <= i < nx and 0 <= j < ny and 0 <= k < nz

    def center(self, c) -> WorldPoint:
        r = self.resolution
        ox, oy, oz = self.origin
        return WorldPoint(ox + (c[0] + 0.5) * r, oy + (c[1] + 0.5) * r, oz + (c[2] + 0.5) * r)


@dataclass(frozen=True)
class SegmentCost:
    """Approximate segment integral of the distance field (meters^2) with its
    two-sided bounds. ``value`` equals ``upper``; ``lower`` is clamped at 0."""

    value: float
    lower: float
    upper: float


@nb.njit(cache=True)
def _envelope_1d(f, out, v, z, n):
    """Exact 1D squared-distance transform: lower envelope of the parabolas
    q -> (x - q)^2 + f[q]. Entries with f[q] = inf contribute no parabola."""
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -_INF
            z[1] = _INF
            continue
        s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    if k < 0:
        for q in range(n):
            out[q] = _INF
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        dq = q - v[j]
        out[q] = dq * dq + f[v[j]]


@nb.njit(cache=True)
def _edt_squared(occ):
    """Exact squared EDT in voxel units: a direct two-sweep pass along z, then
    lower-envelope passes along y and x. All outputs are exact integers stored
    in float64, so results are bit-comparable against a brute-force scan."""
    nx, ny, nz = occ.shape
    d = np.empty((nx, ny, nz), np.float64)
    for i in range(nx):
        for j in range(ny):
            run = _INF
            for k in range(nz):
                if occ[i, j, k]:
                    run = 0.0
                elif run != _INF:
                    run += 1.0
                d[i, j, k] = run
            run = _INF
            for k in range(nz - 1, -1, -1):
                if occ[i, j, k]:
                    run = 0.0
                elif run != _INF:
                    run += 1.0
                if run < d[i, j, k]:
                    d[i, j, k] = run
            for k in range(nz):
                if d[i, j, k] != _INF:
                    d[i, j, k] = d[i, j, k] * d[i, j, k]
    nmax = max(nx, ny)
    f = np.empty(nmax, np.float64)
    out = np.empty(nmax, np.float64)
    v = np.empty(nmax, np.int64)
    z = np.empty(nmax + 1, np.float64)
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = d[i, j, k]
            _envelope_1d(f, out, v, z, ny)
            for j in range(ny):
                d[i, j, k] = out[j]
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = d[i, j, k]
            _envelope_1d(f, out, v, z, nx)
            for i in range(nx):
                d[i, j, k] = out[i]
    return d


def squared_voxel_distances(occ: OccupancyGrid) -> np.ndarray:
    """Exact squared center-to-center distances in voxel units (integers in
    float64). Raises on an empty obstacle set."""
    if not occ.occupied.any():
        raise EmptyObstacleSetError("occupancy grid has no occupied voxel")
    return _edt_squared(occ.occupied)


def compute_edf(occ: OccupancyGrid) -> EdfGrid:
    """Exact Euclidean distance field via the separable squared-distance
    transform (three 1D passes). Occupied voxels get distance 0."""
    sq = squared_voxel_distances(occ)
    dist = np.sqrt(sq) * occ.resolution
    return EdfGrid(occ.dims, occ.resolution, occ.origin, dist)


def edf_at(edf: EdfGrid, c) -> float:
    """Stored distance at a voxel; no interpolation."""
    if not edf.in_bounds(c):
        raise OutOfBoundsError(f"{tuple(c)} outside grid of dims {edf.dims}")
    return float(edf.dist[c[0], c[1], c[2]])


def directional_derivative(edf: EdfGrid, s, s_prime) -> float:
    """Finite difference of the field from ``s`` toward its 26-neighbour
    ``s_prime``: (d(s) - d(s')) / |center(s) - center(s')|. Positive values
    mean the move approaches an obstacle, negative values retreat from it."""
    di, dj, dk = s_prime[0] - s[0], s_prime[1] - s[1], s_prime[2] - s[2]
    if max(abs(di), abs(dj), abs(dk)) != 1:
        raise ValueError(f"{tuple(s_prime)} is not a 26-neighbour of {tuple(s)}")
    d_s = edf_at(edf, s)
    d_p = edf_at(edf, s_prime)
    step = np.sqrt(di * di + dj * dj + dk * dk) * edf.resolution
    return (d_s - d_p) / step


def segment_bounds(d_a: float, d_b: float, length: float) -> SegmentCost:
    """Two-sided bounds for the distance integral along a segment given the
    endpoint distances; the returned value is the upper bound."""
    upper = 0.5 * (d_a + d_b) * length
    lower = max(0.0, upper - 0.5 * length * length)
    return SegmentCost(value=upper, lower=lower, upper=upper)


def _segment_geometry(edf: EdfGrid, a, b):
    if not edf.in_bounds(a) or not edf.in_bounds(b):
        raise OutOfBoundsError(f"segment {tuple(a)}-{tuple(b)} leaves grid of dims {edf.dims}")
    if tuple(a) == tuple(b):
        raise ValueError("zero-length segment")
    d_a = float(edf.dist[a[0], a[1], a[2]])
    d_b = float(edf.dist[b[0], b[1], b[2]])
    if d_a == 0.0 or d_b == 0.0:
        raise ValueError("segment endpoint lies on an occupied voxel")
    di, dj, dk = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    length = float(np.sqrt(di * di + dj * dj + dk * dk) * edf.resolution)
    return d_a, d_b, length


def segment_O(edf: EdfGrid, a, b) -> SegmentCost:
    """Segment integral of the distance field, priced by the endpoint-average
    upper bound. Both endpoints must be free voxels."""
    d_a, d_b, length = _segment_geometry(edf, a, b)
    return segment_bounds(d_a, d_b, length)


def segment_O_quadrature(edf: EdfGrid, a, b, n_samples: int) -> float:
    """Composite trapezoidal reference for the segment integral, sampling the
    stored field at the nearest voxel center of each sample point."""
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    _, _, length = _segment_geometry(edf, a, b)
    pa = np.asarray(edf.center(a), dtype=np.float64)
    pb = np.asarray(edf.center(b), dtype=np.float64)
    t = np.linspace(0.0, 1.0, n_samples)
    pts = pa + t[:, None] * (pb - pa)
    idx = np.floor((pts - np.asarray(edf.origin)) / edf.resolution).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(edf.dims) - 1)
    d = edf.dist[idx[:, 0], idx[:, 1], idx[:, 2]]
    w = np.ones(n_samples)
    w[0] = w[-1] = 0.5
    return float(length * np.dot(w, d) / (n_samples - 1))


def relative_error_bound(edf: EdfGrid, a, b) -> float:
    """Upper bound on the relative pricing error of ``segment_O``:
    L / (d(a) + d(b)). Grows with segment length at fixed clearance."""
    d_a, d_b, length = _segment_geometry(edf, a, b)
    return length / (d_a + d_b)


def save_edf(edf: EdfGrid, path) -> None:
    """Cache file: ``EDF1`` header, dims, resolution, origin, then row-major
    float32 distances."""
    header = _EDF_HEADER.pack(_EDF_MAGIC, *edf.dims, edf.resolution, *edf.origin)
    Path(path).write_bytes(header + edf.dist.astype("<f4").tobytes())


def load_edf(path) -> EdfGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _EDF_HEADER.size:
        raise ValueError("file too short for EDF header")
    magic, nx, ny, nz, res, ox, oy, oz = _EDF_HEADER.unpack_from(raw)
    if magic != _EDF_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    payload = np.frombuffer(raw, dtype="<f4", offset=_EDF_HEADER.size)
    if payload.size != nx * ny * nz:
        raise ValueError(f"payload holds {payload.size} values, expected {nx * ny * nz}")
    dist = payload.astype(np.float64).reshape(nx, ny, nz)
    return EdfGrid((nx, ny, nz), res, WorldPoint(ox, oy, oz), dist)
