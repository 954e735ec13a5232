"""Image-matching baseline: normalised cross-correlation of binary curve images.

For a placement ``T`` the score is ``|U_T & V| / sqrt(|U_T| * |V|)``, the
correlation of the 0/1 indicator images.  Transformed sherd pixels that
fall outside the design contribute nothing to the overlap but still count
in ``|U_T|``, so placements hanging off the design are penalised.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .chamfer_match import SearchConfig, build_lattice
from .pattern_core import PatternError, PointSet, RigidTransform, apply_transform, bounding_box


def _as_points(raster) -> PointSet:
    if isinstance(raster, PointSet):
        ps = raster
    else:
        ps = PointSet.from_mask(np.asarray(raster) > 0)
    if not len(ps):
        raise PatternError("empty foreground")
    return ps


def image_match_score(sherd_raster, design_raster, cfg: SearchConfig | None = None) -> tuple[float, RigidTransform]:
    """Best correlation over the search grid and the placement attaining it.

    Ties go to the smaller theta, then the lexicographically smaller
    ``(tx, ty)``, as in :func:`~sherdmatch.chamfer_match.best_transform`.
    """
    cfg = cfg or SearchConfig()
    sherd, design = _as_points(sherd_raster), _as_points(design_raster)
    lat = build_lattice(sherd, bounding_box(design), cfg)
    xy = design.points
    buckets = K.bucket_pixels(xy, np.zeros(len(xy)), lat.base_x, lat.base_y, lat.step)
    nv = len(design)
    cnt = np.zeros((lat.nx, lat.ny), dtype=np.int64)
    sums = np.zeros((lat.nx, lat.ny), dtype=np.float64)
    best, best_t = -1.0, None
    for theta in cfg.thetas():
        off, mult, _ = K.rotated_offsets(sherd.points, lat.pivot, theta)
        cnt.fill(0)
        K.scatter_band(*K.offset_split(off, lat.step), mult, *buckets, cnt, sums)
        cnt_u = cnt & K.LOW_MASK
        # argmax returns the first maximum in C order, i.e. the smallest (tx, ty)
        flat = int(np.argmax(cnt_u))
        ix, iy = divmod(flat, lat.ny)
        score = cnt_u[ix, iy] / math.sqrt(len(off) * nv)
        if score > best:
            best, best_t = score, lat.transform(float(theta), ix, iy)
    return float(best), best_t


def correlation(sherd: PointSet, design: PointSet, t: RigidTransform) -> float:
    """Score of a single placement, computed directly on point sets."""
    moved = apply_transform(sherd, t)
    overlap = len(moved.as_set() & design.as_set())
    return overlap / math.sqrt(len(moved) * len(design))


def brute_force_image_match(sherd_raster, design_raster, cfg: SearchConfig) -> tuple[float, RigidTransform]:
    """Every grid placement through :func:`correlation`; for toy sizes only."""
    sherd, design = _as_points(sherd_raster), _as_points(design_raster)
    lat = build_lattice(sherd, bounding_box(design), cfg)
    best, best_t = -1.0, None
    for theta in cfg.thetas():
        for ix in range(lat.nx):
            for iy in range(lat.ny):
                t = lat.transform(float(theta), ix, iy)
                s = correlation(sherd, design, t)
                if s > best:
                    best, best_t = s, t
    return best, best_t
