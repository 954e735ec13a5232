"""Exact Euclidean distance map of a design pattern.

The map is computed on integer squared distances with the separable
lower-envelope-of-parabolas transform (column scan, then a row envelope),
so every cell holds ``sqrt(d2)`` of the exact nearest squared distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .pattern_core import BoundingBox, PatternError, PointSet, bounding_box, round_half_away

_INF = np.int64(1) << 50


@numba.njit(cache=True)
def _column_pass(fg):
    h, w = fg.shape
    out = np.empty((h, w), dtype=np.int64)
    for x in range(w):
        # forward and backward 1D distances along the column
        last = -1
        for y in range(h):
            if fg[y, x]:
                last = y
            out[y, x] = (y - last) if last >= 0 else -1
        nxt = -1
        for y in range(h - 1, -1, -1):
            if fg[y, x]:
                nxt = y
            d = out[y, x]
            if nxt >= 0 and (d < 0 or nxt - y < d):
                d = nxt - y
            out[y, x] = d * d if d >= 0 else _INF
    return out


@numba.njit(cache=True)
def _row_envelope(f, out, v, z):
    # Lower envelope of parabolas q -> (q - i)^2 + f[i] over the finite entries.
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] >= _INF:
            continue
        fq = f[q] + q * q
        while k >= 0:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        if k == 0:
            z[k] = -np.inf
        else:
            p = v[k - 1]
            z[k] = (fq - (f[p] + p * p)) / (2.0 * (q - p))
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = _INF
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        out[q] = (q - p) * (q - p) + f[p]


@numba.njit(cache=True)
def squared_edt(fg):
    """Exact squared Euclidean distance to the nearest True cell (int64)."""
    h, w = fg.shape
    cols = _column_pass(fg)
    out = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)
    z = np.empty(w + 1, dtype=np.float64)
    row = np.empty(w, dtype=np.int64)
    for y in range(h):
        _row_envelope(cols[y], row, v, z)
        out[y] = row
    return out


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Distances to the nearest design edge pixel over a padded grid.

    ``grid[gy, gx]`` is the distance at design coordinate
    ``(gx - ox, gy - oy)`` with ``origin_offset = (ox, oy)``.  Queries that
    fall outside the grid return ``sentinel``.
    """

    grid: np.ndarray
    sq_grid: np.ndarray
    origin_offset: tuple[int, int]
    pad: int
    sentinel: float
    design_box: BoundingBox
    design_size: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def query(self, p) -> float:
        return query(self, p)

    def query_many(self, xy) -> np.ndarray:
        """Vectorised :func:`query` for an ``(N, 2)`` array of points."""
        q = round_half_away(np.asarray(xy, dtype=np.float64).reshape(-1, 2))
        gx = q[:, 0] + self.origin_offset[0]
        gy = q[:, 1] + self.origin_offset[1]
        h, w = self.grid.shape
        inside = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
        out = np.full(len(q), self.sentinel, dtype=np.float64)
        out[inside] = self.grid[gy[inside], gx[inside]]
        return out


def build_distance_map(design: PointSet, pad: int = 0) -> DistanceMap:
    """Exact Euclidean distance map of ``design`` on a grid padded by ``pad`` cells per side."""
    if not len(design):
        raise PatternError("empty design")
    pad = int(pad)
    if pad < 0:
        raise PatternError("pad must be >= 0")
    ox, oy = design.origin
    fg = np.zeros((design.height + 2 * pad, design.width + 2 * pad), dtype=np.bool_)
    fg[design.ys - oy + pad, design.xs - ox + pad] = True
    sq = squared_edt(fg)
    grid = np.sqrt(sq.astype(np.float64))
    grid.flags.writeable = False
    sq.flags.writeable = False
    return DistanceMap(
        grid=grid,
        sq_grid=sq,
        origin_offset=(pad - ox, pad - oy),
        pad=pad,
        sentinel=float(pad + grid.max()),
        design_box=bounding_box(design),
        design_size=(design.width, design.height),
    )


def query(dmap: DistanceMap, p) -> float:
    """Distance at the cell nearest to ``p``, or the sentinel outside the grid."""
    return float(dmap.query_many(np.asarray(p, dtype=np.float64).reshape(1, 2))[0])


def brute_force_distances(design: PointSet, shape, offset=(0, 0)) -> np.ndarray:
    """O(N * cells) nearest-edge-pixel distances; independent check for the EDT."""
    h, w = shape
    gy, gx = np.mgrid[0:h, 0:w]
    best = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    for x, y in design.points:
        dx = gx - (x + offset[0])
        dy = gy - (y + offset[1])
        np.minimum(best, dx * dx + dy * dy, out=best)
    return np.sqrt(best.astype(np.float64))


def export_png(dmap: DistanceMap, path) -> None:
    """16-bit grayscale rendering, brighter = farther from the design."""
    from PIL import Image

    g = dmap.grid
    peak = g.max() or 1.0
    img = np.round(g / peak * 65535).astype(np.uint16)
    Image.fromarray(img).save(path)
