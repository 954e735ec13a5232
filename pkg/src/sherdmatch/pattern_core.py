"""Point sets, rigid transforms and raster helpers shared by the matchers.

Coordinates follow the image convention: ``x`` is the column, ``y`` the row,
and the y axis points down.  A rotation by ``theta`` degrees applies the
matrix ``[[cos, -sin], [sin, cos]]`` to ``(x, y)`` about a pivot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PatternError(ValueError):
    """Raised for empty or malformed curve patterns."""


def round_half_away(values):
    """Round to the nearest integer, ties away from zero.

    Implemented through the exact fractional part, so values a hair below
    ``k + 0.5`` never get pushed over the tie by floating-point addition.
    """
    values = np.asarray(values, dtype=np.float64)
    mag = np.abs(values)
    base = np.floor(mag)
    rounded = base + ((mag - base) >= 0.5)
    return (np.sign(values) * rounded).astype(np.int64)


class PointSet:
    """Ordered, duplicate-free set of integer pixel coordinates.

    ``points`` is a read-only ``(N, 2)`` int64 array of ``(x, y)`` rows.  The
    originating raster spans ``[ox, ox + width) x [oy, oy + height)`` where
    ``origin = (ox, oy)``; the origin is ``(0, 0)`` for every pattern read from
    an image and only differs for transformed patterns that leave the frame.
    """

    __slots__ = ("points", "width", "height", "origin")

    def __init__(self, points, width: int, height: int, origin=(0, 0)):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        width, height = int(width), int(height)
        ox, oy = int(origin[0]), int(origin[1])
        if width < 0 or height < 0:
            raise PatternError("negative raster size")
        if len(pts):
            if (
                pts[:, 0].min() < ox
                or pts[:, 1].min() < oy
                or pts[:, 0].max() >= ox + width
                or pts[:, 1].max() >= oy + height
            ):
                raise PatternError("point outside raster bounds")
            keys = _pack(pts)
            if np.unique(keys).size != keys.size:
                raise PatternError("duplicate coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "origin", (ox, oy))

    def __reduce__(self):
        return (PointSet, (self.points, self.width, self.height, self.origin))

    def __setattr__(self, name, value):
        raise AttributeError("PointSet is immutable")

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointSet):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.origin == other.origin
            and np.array_equal(self.points, other.points)
        )

    def __hash__(self):
        return hash((self.width, self.height, self.origin, self.points.tobytes()))

    def __repr__(self) -> str:
        return f"PointSet(n={len(self)}, width={self.width}, height={self.height})"

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(x), int(y)) for x, y in self.points}

    def centroid(self) -> tuple[float, float]:
        if not len(self):
            raise PatternError("empty pattern")
        return float(self.xs.mean()), float(self.ys.mean())

    def subset(self, indices) -> "PointSet":
        """Points at ``indices`` (in the given order) on the same raster."""
        return PointSet(self.points[np.asarray(indices, dtype=np.int64)], self.width, self.height, self.origin)

    @classmethod
    def from_mask(cls, mask) -> "PointSet":
        """Foreground pixels of a 2D mask in row-major scan order."""
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise PatternError("mask must be 2D")
        ys, xs = np.nonzero(mask)
        return cls(np.column_stack([xs, ys]), mask.shape[1], mask.shape[0])

    def to_mask(self) -> np.ndarray:
        """Boolean ``(height, width)`` raster of the set (origin at the top-left cell)."""
        mask = np.zeros((self.height, self.width), dtype=bool)
        if len(self):
            mask[self.ys - self.origin[1], self.xs - self.origin[0]] = True
        return mask

    def to_dict(self) -> dict:
        out = {"width": self.width, "height": self.height, "points": self.points.tolist()}
        if self.origin != (0, 0):
            out["origin"] = list(self.origin)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PointSet":
        try:
            return cls(data["points"], data["width"], data["height"], data.get("origin", (0, 0)))
        except KeyError as exc:
            raise PatternError(f"point set JSON missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PointSet":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PointSet":
        return cls.from_json(Path(path).read_text())


def _pack(pts: np.ndarray) -> np.ndarray:
    # collision-free key for |coords| < 2**31
    return (pts[:, 0] << 32) + (pts[:, 1] & 0xFFFFFFFF)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation by ``theta`` degrees about ``pivot`` followed by translation ``(tx, ty)``.

    ``T(u) = R(theta) (u - pivot) + pivot + (tx, ty)``
    """

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    pivot: tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        theta = math.fmod(float(self.theta), 360.0)
        if theta < 0:
            theta += 360.0
        if theta >= 360.0:  # fmod of a tiny negative can land on 360.0
            theta = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "pivot", (float(self.pivot[0]), float(self.pivot[1])))

    def apply(self, xy) -> np.ndarray:
        """Map real coordinates without rounding."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        c, s = cos_sin(self.theta)
        px, py = self.pivot
        dx = xy[:, 0] - px
        dy = xy[:, 1] - py
        return np.column_stack([c * dx - s * dy + px + self.tx, s * dx + c * dy + py + self.ty])

    def to_pixels(self, xy) -> np.ndarray:
        """Map and round to integer pixels.

        Ties go half away from zero in a frame anchored at the pixel
        ``floor(pivot + t)``.  Away from exact ties this is the nearest
        pixel; at ties it keeps the result equivariant under integer
        translations, which the grid searches rely on.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        c, s = cos_sin(self.theta)
        px, py = self.pivot
        ax, ay = px + self.tx, py + self.ty
        fx, fy = math.floor(ax), math.floor(ay)
        dx = xy[:, 0] - px
        dy = xy[:, 1] - py
        disp = np.column_stack([c * dx - s * dy + (ax - fx), s * dx + c * dy + (ay - fy)])
        return round_half_away(disp) + np.array([fx, fy], dtype=np.int64)

    def inverse(self) -> "RigidTransform":
        # T^-1(v) = R(-theta)(v - pivot - t) + pivot  ==  rotation about the same pivot, translation -R(-theta) t
        c, s = cos_sin(-self.theta)
        tx = -(c * self.tx - s * self.ty)
        ty = -(s * self.tx + c * self.ty)
        return RigidTransform(-self.theta, tx, ty, self.pivot)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``, expressed about ``other.pivot``."""
        p = np.asarray(other.pivot)
        # result(u) = R_a R_b (u - p) + self(p + t_b) ... collect the constant part
        image_of_pivot = self.apply(p + (other.tx, other.ty))[0]
        return RigidTransform(self.theta + other.theta, image_of_pivot[0] - p[0], image_of_pivot[1] - p[1], other.pivot)

    def with_pivot(self, pivot) -> "RigidTransform":
        """Same mapping re-expressed about another pivot."""
        new_p = np.asarray(pivot, dtype=np.float64)
        image = self.apply(new_p)[0]
        return RigidTransform(self.theta, image[0] - new_p[0], image[1] - new_p[1], (new_p[0], new_p[1]))

    def to_dict(self) -> dict:
        return {"theta": self.theta, "tx": self.tx, "ty": self.ty, "pivot": list(self.pivot)}

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(data["theta"], data["tx"], data["ty"], tuple(data.get("pivot", (0.0, 0.0))))


_H = math.sqrt(3.0) / 2.0
# every angle with a rational cosine or sine; there R(u - p) can land exactly on a
# rounding tie, so the value must be exact for rounding to commute with integer shifts
_EXACT = {
    0: (1.0, 0.0), 30: (_H, 0.5), 60: (0.5, _H), 90: (0.0, 1.0), 120: (-0.5, _H), 150: (-_H, 0.5),
    180: (-1.0, 0.0), 210: (-_H, -0.5), 240: (-0.5, -_H), 270: (0.0, -1.0), 300: (0.5, -_H), 330: (_H, -0.5),
}


def cos_sin(theta_deg: float) -> tuple[float, float]:
    """cos/sin of an angle in degrees, exact at multiples of 30."""
    t = math.fmod(theta_deg, 360.0)
    if t < 0:
        t += 360.0
    if t % 30.0 == 0.0:
        return _EXACT[int(t) % 360]
    r = math.radians(t)
    return math.cos(r), math.sin(r)


def apply_transform(points: PointSet, t: RigidTransform) -> PointSet:
    """Transform, round to the pixel grid and collapse duplicates.

    Duplicates keep their first occurrence, so the output order follows the
    input order.  The output raster is the smallest frame anchored at the
    input origin (or lower) that covers every transformed point.
    """
    if not len(points):
        raise PatternError("empty pattern")
    q = t.to_pixels(points.points)
    q = unique_rows_first(q)
    ox = min(points.origin[0], int(q[:, 0].min()))
    oy = min(points.origin[1], int(q[:, 1].min()))
    width = max(points.origin[0] + points.width, int(q[:, 0].max()) + 1) - ox
    height = max(points.origin[1] + points.height, int(q[:, 1].max()) + 1) - oy
    return PointSet(q, width, height, (ox, oy))


def unique_rows_first(q: np.ndarray, return_counts: bool = False):
    """Unique rows of an integer ``(N, 2)`` array in first-occurrence order."""
    keys = _pack(q)
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    out = q[first[order]]
    if return_counts:
        return out, counts[order]
    return out


@dataclass(frozen=True)
class BoundingBox:
    min_x: int
    min_y: int
    max_x: int
    max_y: int

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise PatternError("degenerate bounding box")

    @property
    def width(self) -> int:
        return self.max_x - self.min_x + 1

    @property
    def height(self) -> int:
        return self.max_y - self.min_y + 1

    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def shifted(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.min_x + dx, self.min_y + dy, self.max_x + dx, self.max_y + dy)

    def expanded(self, margin: int) -> "BoundingBox":
        return BoundingBox(self.min_x - margin, self.min_y - margin, self.max_x + margin, self.max_y + margin)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.min_x, self.min_y, self.max_x, self.max_y)


def bounding_box(points: PointSet) -> BoundingBox:
    if not len(points):
        raise PatternError("empty pattern")
    return BoundingBox(int(points.xs.min()), int(points.ys.min()), int(points.xs.max()), int(points.ys.max()))


def search_pivot(points: PointSet) -> tuple[int, int]:
    """Integer rotation pivot used by the matchers: the centre cell of the raster."""
    return (points.origin[0] + points.width // 2, points.origin[1] + points.height // 2)


def normalize_dpi(mask, source_dpi: float, target_dpi: float) -> np.ndarray:
    """Resample a curve mask to ``target_dpi`` and re-thin it.

    Upsampling takes the nearest source pixel for every output pixel;
    downsampling sends every foreground pixel to the output cell containing
    it, which keeps 8-connected curves connected.  Physical size is kept, so
    the output raster is ``round(size * target / source)``.
    """
    if source_dpi <= 0 or target_dpi <= 0:
        raise PatternError("DPI must be positive")
    mask = np.asarray(mask).astype(bool)
    if source_dpi == target_dpi:
        return mask.copy()
    from .curve_extract import thin

    f = target_dpi / source_dpi
    h, w = mask.shape
    nh, nw = max(1, int(round(h * f))), max(1, int(round(w * f)))
    if f >= 1.0:
        rows = np.minimum((np.arange(nh) / f).astype(np.int64), h - 1)
        cols = np.minimum((np.arange(nw) / f).astype(np.int64), w - 1)
        out = mask[np.ix_(rows, cols)]
    else:
        ys, xs = np.nonzero(mask)
        out = np.zeros((nh, nw), dtype=bool)
        out[np.minimum((ys * f).astype(np.int64), nh - 1), np.minimum((xs * f).astype(np.int64), nw - 1)] = True
    return thin(out)
