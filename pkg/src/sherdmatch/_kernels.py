"""Numba kernels for the (rotation x translation) grid searches.

All kernels work on one rotation at a time.  A rotated sherd is a list of
unique integer offsets from the pivot (first-occurrence order, with the
number of original points collapsed onto each).  For lattice cell
``(ix, iy)`` an offset lands at design coordinate
``(base_x + ix * step + ox, base_y + iy * step + oy)``.

Per-cell float sums always accumulate offsets in ascending index order, so
the scatter and gather kernels agree bit for bit.
"""

from __future__ import annotations

import numba
import numpy as np

from .pattern_core import cos_sin, round_half_away


def rotated_offsets(points: np.ndarray, pivot, theta: float):
    """Unique rounded offsets ``R(theta)(u - pivot)`` and their multiplicities.

    Returns ``(offsets, mult, inverse)`` where ``inverse[i]`` is the unique
    index that original point ``i`` collapsed onto.
    """
    c, s = cos_sin(theta)
    dx = points[:, 0] - pivot[0]
    dy = points[:, 1] - pivot[1]
    q = round_half_away(np.column_stack([c * dx - s * dy, s * dx + c * dy]))
    keys = (q[:, 0] << 32) + (q[:, 1] & 0xFFFFFFFF)
    _, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    # renumber unique rows by first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return q[first[order]], counts[order].astype(np.int64), rank[inv.ravel()]


def lattice_split(v: np.ndarray, step: int):
    """Residue and quotient of integer coordinates with respect to the lattice step."""
    r = v % step
    return r, (v - r) // step


def bucket_pixels(xy: np.ndarray, values: np.ndarray, base_x: int, base_y: int, step: int):
    """Group pixels by lattice residue class, as quotient coordinates.

    Within a class pixels are ordered by ``(qx, qy)`` so consecutive scatter
    writes land in neighbouring cells.  Returns ``(qx, qy, values, starts)``.
    """
    rx, qx = lattice_split(xy[:, 0] - base_x, step)
    ry, qy = lattice_split(xy[:, 1] - base_y, step)
    cls = rx * step + ry
    order = np.lexsort((qy, qx, cls))
    starts = np.searchsorted(cls[order], np.arange(step * step + 1))
    return (
        np.ascontiguousarray(qx[order]),
        np.ascontiguousarray(qy[order]),
        np.ascontiguousarray(values[order], dtype=np.float64),
        starts.astype(np.int64),
    )


def offset_split(off: np.ndarray, step: int):
    """``(cls, qx, qy)`` of sherd offsets, matching :func:`bucket_pixels`."""
    rx, qx = lattice_split(off[:, 0], step)
    ry, qy = lattice_split(off[:, 1], step)
    return np.ascontiguousarray(rx * step + ry), np.ascontiguousarray(qx), np.ascontiguousarray(qy)


# per-cell counts are packed as ``unique + (members << 32)`` to halve scatter traffic
PACK_SHIFT = 32
LOW_MASK = (1 << 32) - 1


def unpack_counts(cnt: np.ndarray):
    """Split packed counts into ``(unique, members)``."""
    return cnt & LOW_MASK, cnt >> PACK_SHIFT


@numba.njit(cache=True)
def scatter_band(cls, qox, qoy, mult, qx, qy, val, starts, cnt, sums):
    """Accumulate band pixels hit by each offset into packed per-cell counts and sums.

    A band pixel with quotient ``(qx, qy)`` in the offset's residue class is
    reached from lattice cell ``(qx - qox, qy - qoy)``.
    """
    nx, ny = cnt.shape
    for j in range(qox.shape[0]):
        b = cls[j]
        ax = qox[j]
        ay = qoy[j]
        inc = (mult[j] << 32) + 1
        for k in range(starts[b], starts[b + 1]):
            ix = qx[k] - ax
            iy = qy[k] - ay
            if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
                continue
            cnt[ix, iy] += inc
            sums[ix, iy] += val[k]


@numba.njit(cache=True)
def gather_band(grid, gox, goy, sentinel, limit, ox, oy, mult, step, base_x, base_y, cnt, sums):
    """Reference for :func:`scatter_band`: visit every cell and offset, keep values below ``limit``."""
    nx, ny = cnt.shape
    h, w = grid.shape
    for ix in range(nx):
        for iy in range(ny):
            c = 0
            acc = 0.0
            for j in range(ox.shape[0]):
                gx = base_x + ix * step + ox[j] + gox
                gy = base_y + iy * step + oy[j] + goy
                if 0 <= gx < w and 0 <= gy < h:
                    v = grid[gy, gx]
                else:
                    v = sentinel
                if v < limit:
                    c += (mult[j] << 32) + 1
                    acc += v
            cnt[ix, iy] = c
            sums[ix, iy] = acc


def strided_maps(grid: np.ndarray, sentinel: float, margin: int, step: int) -> np.ndarray:
    """Distance grid grown by ``margin`` sentinel cells, split into its ``step**2`` subsampled planes.

    Plane ``rx * step + ry`` holds the cells whose padded coordinates are
    congruent to ``(rx, ry)``, so all placements of one offset across the
    lattice read a contiguous block of one plane.
    """
    h, w = grid.shape
    ext = np.full((h + 2 * margin + step, w + 2 * margin + step), sentinel)
    ext[margin : margin + h, margin : margin + w] = grid
    ph, pw = (ext.shape[0] - step) // step + 1, (ext.shape[1] - step) // step + 1
    planes = np.empty((step * step, ph, pw))
    for rx in range(step):
        for ry in range(step):
            sub = ext[ry::step, rx::step]
            planes[rx * step + ry] = sub[:ph, :pw]
    return planes


@numba.njit(cache=True)
def coarse_sums(planes, cls, qx, qy, stride, sentinel, guard, out, kout):
    """Exact distance sums at lattice cells ``(stride * a, stride * b)``; ``out[b, a]`` layout.

    With ``guard`` set, ``kout`` counts the reads that hit the sentinel
    (off-grid placements), which the Lipschitz bound must not rely on.
    """
    nb, na = out.shape
    out[:] = 0.0
    kout[:] = 0
    for j in range(qx.shape[0]):
        m = planes[cls[j]]
        x0 = qx[j]
        y0 = qy[j]
        for b in range(nb):
            row = m[y0 + stride * b]
            orow = out[b]
            if guard:
                krow = kout[b]
                for a in range(na):
                    v = row[x0 + stride * a]
                    orow[a] += v
                    if v >= sentinel:
                        krow[a] += 1
            else:
                for a in range(na):
                    orow[a] += row[x0 + stride * a]


@numba.njit(cache=True)
def refine_cells(planes, cls, qx, qy, coarse, kcoarse, sentinel, stride, step, nx, ny, ti, best):
    """Exact sums at the non-coarse cells whose Lipschitz bound can still win.

    ``best`` is ``[value, theta_index, ix, iy]`` and is updated in place when
    a cell beats it under the ``(value, theta_index, ix, iy)`` order.  The
    bound for a cell is ``max(d(c) - |t - c|)`` over its surrounding coarse
    cells ``c``: every point of a placement moves by the same shift and the
    distance map is 1-Lipschitz.  Sentinel reads at ``c`` are credited 0
    because the sentinel border breaks the Lipschitz property.
    """
    n = qx.shape[0]
    nb, na = coarse.shape
    for ix in range(nx):
        a0 = ix // stride
        for iy in range(ny):
            if ix % stride == 0 and iy % stride == 0:
                continue
            b0 = iy // stride
            lb = 0.0
            for da in range(2):
                a = a0 + da
                if a >= na:
                    continue
                for db in range(2):
                    b = b0 + db
                    if b >= nb:
                        continue
                    dx = (ix - stride * a) * step
                    dy = (iy - stride * b) * step
                    v = (coarse[b, a] - kcoarse[b, a] * sentinel) / n - np.sqrt(dx * dx + dy * dy)
                    if v > lb:
                        lb = v
            bv = best[0]
            if lb > bv + 1e-9 * (1.0 + bv):
                continue
            cap = bv * n * (1.0 + 1e-12) + 1e-12
            acc = 0.0
            for j in range(n):
                acc += planes[cls[j]][qy[j] + iy, qx[j] + ix]
                if acc > cap:
                    break
            if acc > cap:
                continue
            val = acc / n
            if val < bv or (val == bv and (ti < best[1] or (ti == best[1] and (ix < best[2] or (ix == best[2] and iy < best[3]))))):
                best[0] = val
                best[1] = ti
                best[2] = ix
                best[3] = iy


@numba.njit(cache=True)
def update_field(cnt, sums, floor_count, theta_index, best, best_theta, best_cu, best_cm):
    """Fold one rotation's component statistics into the running per-cell minimum."""
    nx, ny = cnt.shape
    for ix in range(nx):
        for iy in range(ny):
            c = cnt[ix, iy]
            cu = c & 0xFFFFFFFF
            cm = c >> 32
            if cu == 0 or cm < floor_count:
                continue
            d = sums[ix, iy] / cu
            if d < best[ix, iy]:
                best[ix, iy] = d
                best_theta[ix, iy] = theta_index
                best_cu[ix, iy] = cu
                best_cm[ix, iy] = cm


@numba.njit(cache=True)
def seq_sum(values):
    acc = 0.0
    for v in values:
        acc += v
    return acc


@numba.njit(cache=True)
def plateau_minima(field):
    """Regional minima of a 2D field over the 8-neighbourhood.

    Each connected plateau of equal values whose every outside neighbour is
    strictly larger yields one representative: its lexicographically
    smallest ``(ix, iy)``.  Infinite cells are never minima.
    """
    nx, ny = field.shape
    seen = np.zeros((nx, ny), dtype=np.bool_)
    stack_x = np.empty(nx * ny, dtype=np.int64)
    stack_y = np.empty(nx * ny, dtype=np.int64)
    out_x = []
    out_y = []
    for ix in range(nx):
        for iy in range(ny):
            if seen[ix, iy]:
                continue
            v = field[ix, iy]
            if v == np.inf:
                seen[ix, iy] = True
                continue
            # flood the plateau containing (ix, iy)
            top = 0
            stack_x[0] = ix
            stack_y[0] = iy
            seen[ix, iy] = True
            top = 1
            is_min = True
            bx = ix
            by = iy
            while top > 0:
                top -= 1
                cx = stack_x[top]
                cy = stack_y[top]
                if cx < bx or (cx == bx and cy < by):
                    bx = cx
                    by = cy
                for dx in range(-1, 2):
                    for dy in range(-1, 2):
                        if dx == 0 and dy == 0:
                            continue
                        qx = cx + dx
                        qy = cy + dy
                        if qx < 0 or qy < 0 or qx >= nx or qy >= ny:
                            continue
                        u = field[qx, qy]
                        if u < v:
                            is_min = False
                        elif u == v and not seen[qx, qy]:
                            seen[qx, qy] = True
                            stack_x[top] = qx
                            stack_y[top] = qy
                            top += 1
            if is_min:
                out_x.append(bx)
                out_y.append(by)
    res = np.empty((len(out_x), 2), dtype=np.int64)
    for k in range(len(out_x)):
        res[k, 0] = out_x[k]
        res[k, 1] = out_y[k]
    return res
