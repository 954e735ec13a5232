"""Whole-pattern Chamfer matching over a discretised rigid-transform grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .distance_field import DistanceMap
from .pattern_core import BoundingBox, PatternError, PointSet, RigidTransform, apply_transform, search_pivot


@dataclass(frozen=True)
class SearchConfig:
    """Search grid and composite-matching thresholds.

    ``translation_window`` bounds where the rotation pivot of the sherd may
    land, in design coordinates; ``None`` means the design bounding box grown
    by the sherd's radius around its pivot.
    """

    theta_step: float = 1.0
    translation_step: int = 1
    translation_window: BoundingBox | None = None
    alpha: float = 3.0
    eta: float = 0.1
    p_max: int = 20
    min_component_fraction: float = 0.05

    def __post_init__(self):
        if self.theta_step < 1 or not _divides_360(self.theta_step):
            raise ValueError("theta_step must be >= 1 and divide 360")
        if int(self.translation_step) != self.translation_step or self.translation_step < 1:
            raise ValueError("translation_step must be a positive integer")
        object.__setattr__(self, "translation_step", int(self.translation_step))
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.p_max < 1:
            raise ValueError("p_max must be >= 1")
        if not 0.0 <= self.min_component_fraction <= 1.0:
            raise ValueError("min_component_fraction must lie in [0, 1]")

    def thetas(self) -> np.ndarray:
        n = int(round(360.0 / self.theta_step))
        return np.arange(n, dtype=np.float64) * self.theta_step

    def replace(self, **changes) -> "SearchConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        win = self.translation_window
        return {
            "theta_step": self.theta_step,
            "translation_step": self.translation_step,
            "translation_window": list(win.as_tuple()) if win else None,
            "alpha": self.alpha,
            "eta": self.eta,
            "p_max": self.p_max,
            "min_component_fraction": self.min_component_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        data = dict(data)
        if data.get("translation_window") is not None:
            data["translation_window"] = BoundingBox(*data["translation_window"])
        return cls(**data)


def _divides_360(step: float) -> bool:
    n = 360.0 / step
    return abs(n - round(n)) < 1e-9


@dataclass(frozen=True)
class ChamferResult:
    transform: RigidTransform
    distance: float


@dataclass(frozen=True)
class Lattice:
    """Translations ``t = (tx0 + ix * step, ty0 + iy * step)`` searched for one sherd."""

    pivot: tuple[int, int]
    tx0: int
    ty0: int
    nx: int
    ny: int
    step: int

    @property
    def base_x(self) -> int:
        return self.pivot[0] + self.tx0

    @property
    def base_y(self) -> int:
        return self.pivot[1] + self.ty0

    def tx_values(self) -> np.ndarray:
        return self.tx0 + self.step * np.arange(self.nx)

    def ty_values(self) -> np.ndarray:
        return self.ty0 + self.step * np.arange(self.ny)

    def translation(self, ix: int, iy: int) -> tuple[int, int]:
        return (self.tx0 + self.step * int(ix), self.ty0 + self.step * int(iy))

    def index_of(self, tx: float, ty: float) -> tuple[int, int]:
        return ((int(tx) - self.tx0) // self.step, (int(ty) - self.ty0) // self.step)

    def transform(self, theta: float, ix: int, iy: int) -> RigidTransform:
        tx, ty = self.translation(ix, iy)
        return RigidTransform(theta, tx, ty, self.pivot)


# stride, in lattice cells, of the exactly evaluated sub-lattice of best_transform
COARSE = 5


def sherd_radius(sherd: PointSet, pivot) -> float:
    d = sherd.points - np.asarray(pivot)
    return float(np.sqrt((d.astype(np.float64) ** 2).sum(axis=1)).max())


def default_pad(sherd: PointSet) -> int:
    """Distance-map padding: the diagonal of the sherd bounding box."""
    from .pattern_core import bounding_box

    return int(math.ceil(bounding_box(sherd).diagonal()))


def build_lattice(sherd: PointSet, design_box: BoundingBox, cfg: SearchConfig) -> Lattice:
    if not len(sherd):
        raise PatternError("empty pattern")
    pivot = search_pivot(sherd)
    win = cfg.translation_window
    if win is None:
        win = design_box.expanded(int(math.ceil(sherd_radius(sherd, pivot))))
    step = cfg.translation_step
    # lattice translations are multiples of the step so t = 0 is always a node
    kx0 = -((pivot[0] - win.min_x) // step)
    kx1 = (win.max_x - pivot[0]) // step
    ky0 = -((pivot[1] - win.min_y) // step)
    ky1 = (win.max_y - pivot[1]) // step
    nx, ny = kx1 - kx0 + 1, ky1 - ky0 + 1
    if nx <= 0 or ny <= 0:
        raise PatternError("empty translation window")
    return Lattice(pivot, int(kx0 * step), int(ky0 * step), int(nx), int(ny), step)


def chamfer_distance(sherd: PointSet, t: RigidTransform, dmap: DistanceMap) -> float:
    """Mean distance-map value over the transformed (rounded, de-duplicated) sherd."""
    moved = apply_transform(sherd, t)
    vals = dmap.query_many(moved.points)
    return K.seq_sum(vals) / len(vals)


def best_transform(sherd: PointSet, dmap: DistanceMap, cfg: SearchConfig | None = None) -> ChamferResult:
    """Grid minimiser of the Chamfer distance (ties: smaller theta, then (tx, ty)).

    Pass one sums distances exactly on every ``COARSE``-th lattice cell of
    every rotation, which also yields the incumbent.  Pass two visits the
    remaining cells, skipping those whose Lipschitz lower bound from the
    surrounding coarse cells cannot beat it; survivors are summed exactly
    with early abort.  The result equals the exhaustive grid minimum.
    """
    cfg = cfg or SearchConfig()
    lat = build_lattice(sherd, dmap.design_box, cfg)
    step, stride = lat.step, COARSE
    margin = 2 * (int(math.ceil(sherd_radius(sherd, lat.pivot))) + 2) + abs(lat.tx0) + abs(lat.ty0) + step
    planes = K.strided_maps(dmap.grid, dmap.sentinel, margin, step)
    shift = np.array([lat.base_x + dmap.origin_offset[0] + margin, lat.base_y + dmap.origin_offset[1] + margin])
    na, nb = (lat.nx + stride - 1) // stride, (lat.ny + stride - 1) // stride
    thetas = cfg.thetas()
    splits, coarse = [], np.empty((len(thetas), nb, na))
    kcoarse = np.zeros((len(thetas), nb, na), dtype=np.int64)
    gh, gw = dmap.grid.shape
    best = np.array([np.inf, 0.0, 0.0, 0.0])
    for ti, theta in enumerate(thetas):
        off, _, _ = K.rotated_offsets(sherd.points, lat.pivot, theta)
        cls, qx, qy = K.offset_split(off + shift, step)
        if qx.min() < 0 or qy.min() < 0:
            raise AssertionError("distance planes too small for the lattice")
        splits.append((cls, qx, qy))
        # can any placement of this rotation read outside the distance grid?
        lo = off.min(axis=0) + shift - margin
        hi = off.max(axis=0) + shift - margin + step * np.array([lat.nx - 1, lat.ny - 1])
        guard = bool(lo.min() < 0 or hi[0] >= gw or hi[1] >= gh)
        K.coarse_sums(planes, cls, qx, qy, stride, dmap.sentinel, guard, coarse[ti], kcoarse[ti])
        vals = coarse[ti] / len(off)
        # first minimum in (a, b) order is the lexicographically smallest cell
        flat = np.argmin(vals.T)
        a, b = divmod(int(flat), nb)
        if vals[b, a] < best[0]:
            best[:] = (vals[b, a], ti, a * stride, b * stride)
    for ti in range(len(thetas)):
        K.refine_cells(planes, *splits[ti], coarse[ti], kcoarse[ti], dmap.sentinel, stride, step, lat.nx, lat.ny, ti, best)
    ti, ix, iy = int(best[1]), int(best[2]), int(best[3])
    return ChamferResult(lat.transform(float(thetas[ti]), ix, iy), float(best[0]))


def _band_pixels(dmap: DistanceMap, limit: float):
    """Grid cells with distance below ``limit`` as design coordinates and values."""
    gy, gx = np.nonzero(dmap.grid < limit)
    xy = np.column_stack([gx - dmap.origin_offset[0], gy - dmap.origin_offset[1]]).astype(np.int64)
    return xy, dmap.grid[gy, gx]


def brute_force_best_transform(sherd: PointSet, dmap: DistanceMap, cfg: SearchConfig) -> ChamferResult:
    """Evaluate every grid cell with :func:`chamfer_distance`; for small instances only."""
    lat = build_lattice(sherd, dmap.design_box, cfg)
    best = None
    for theta in cfg.thetas():
        for ix in range(lat.nx):
            for iy in range(lat.ny):
                t = lat.transform(theta, ix, iy)
                d = chamfer_distance(sherd, t, dmap)
                if best is None or d < best.distance:
                    best = ChamferResult(t, d)
    return best
