"""Procedural designs and ground-truth sherds for benchmarking.

A design is a handful of smooth strokes, arcs, spirals and ring groups drawn
on a square canvas and thinned to one pixel.  A sherd lives in its own
square raster whose centre cell is the matchers' rotation pivot; stamp ``k``
is the design pulled back through the inverse of its pose, so that the pose
maps stamp pixels onto design pixels up to rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import draw

from .curve_extract import thin
from .eval_bench import DesignRecord
from .pattern_core import PatternError, PointSet, RigidTransform, round_half_away

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class MotifParams:
    """How many of each motif to draw; lengths and radii are in pixels."""

    n_strokes: int = 6
    n_arcs: int = 3
    n_spirals: int = 1
    rings: int = 0
    stroke_length: tuple[float, float] = (60.0, 140.0)
    radius: tuple[float, float] = (15.0, 45.0)
    margin: int = 10
    # clearance between separate motifs; 0 lets them touch and cross
    min_gap: float = 6.0
    max_tries: int = 30

    def __post_init__(self):
        if min(self.n_strokes, self.n_arcs, self.n_spirals, self.rings) < 0:
            raise PatternError("motif counts must be >= 0")
        if self.n_strokes + self.n_arcs + self.n_spirals + self.rings == 0:
            raise PatternError("no motifs requested")
        if not 0 < self.stroke_length[0] <= self.stroke_length[1]:
            raise PatternError("bad stroke_length range")
        if not 2 <= self.radius[0] <= self.radius[1]:
            raise PatternError("bad radius range")
        if self.min_gap < 0 or self.max_tries < 1:
            raise PatternError("min_gap must be >= 0 and max_tries >= 1")


def _draw_polyline(canvas: np.ndarray, xy: np.ndarray) -> None:
    h, w = canvas.shape
    p = round_half_away(xy)
    for (x0, y0), (x1, y1) in zip(p[:-1], p[1:]):
        rr, cc = draw.line(int(y0), int(x0), int(y1), int(x1))
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        canvas[rr[ok], cc[ok]] = True


def _stroke(rng, size, par: MotifParams) -> np.ndarray:
    # cubic Bezier with a random heading and a sideways bend
    length = rng.uniform(*par.stroke_length)
    m = par.margin
    start = rng.uniform(m, size - m, 2)
    ang = rng.uniform(0, 2 * math.pi)
    d = np.array([math.cos(ang), math.sin(ang)])
    nrm = np.array([-d[1], d[0]])
    c1 = start + d * length / 3 + nrm * rng.uniform(-0.5, 0.5) * length
    c2 = start + 2 * d * length / 3 + nrm * rng.uniform(-0.5, 0.5) * length
    end = start + d * length
    s = np.linspace(0, 1, max(8, int(length)))[:, None]
    return (1 - s) ** 3 * start + 3 * (1 - s) ** 2 * s * c1 + 3 * (1 - s) * s**2 * c2 + s**3 * end


def _arc(rng, size, par: MotifParams) -> np.ndarray:
    r = rng.uniform(*par.radius)
    c = rng.uniform(par.margin + r, size - par.margin - r, 2) if size > 2 * (par.margin + r) else np.full(2, size / 2)
    a0 = rng.uniform(0, 2 * math.pi)
    span = rng.uniform(0.6, 1.5) * math.pi
    a = np.linspace(a0, a0 + span, max(8, int(r * span)))
    return np.column_stack([c[0] + r * np.cos(a), c[1] + r * np.sin(a)])


def _spiral(rng, size, par: MotifParams) -> np.ndarray:
    r1 = rng.uniform(*par.radius)
    # keep successive turns at least 8 px apart
    turns = min(rng.uniform(1.2, 2.2), max(1.0, (r1 - 4) / 8))
    c = rng.uniform(par.margin + r1, size - par.margin - r1, 2) if size > 2 * (par.margin + r1) else np.full(2, size / 2)
    a0 = rng.uniform(0, 2 * math.pi)
    sgn = 1 if rng.random() < 0.5 else -1
    tt = np.linspace(0, 1, max(16, int(2 * math.pi * r1 * turns)))
    r = 4 + (r1 - 4) * tt
    a = a0 + sgn * 2 * math.pi * turns * tt
    return np.column_stack([c[0] + r * np.cos(a), c[1] + r * np.sin(a)])


def _rings(canvas, rng, size, par: MotifParams, count: int) -> None:
    gap = 5
    r_out = min(par.radius[1], size / 2 - par.margin - 1)
    r_in = r_out - gap * (count - 1)
    if r_in < 2:
        raise PatternError("rings do not fit on the canvas")
    lo, hi = par.margin + r_out, size - par.margin - r_out
    c = rng.uniform(lo, hi, 2) if hi > lo else np.full(2, size / 2)
    for k in range(count):
        rr, cc = draw.circle_perimeter(int(round(c[1])), int(round(c[0])), int(round(r_in + gap * k)), shape=canvas.shape)
        canvas[rr, cc] = True


def _place_motif(canvas: np.ndarray, make, par: MotifParams) -> None:
    """Draw one motif, redrawing it while it leaves the margin or comes closer than ``min_gap`` to earlier ones.

    Curves closer than a groove width merge once stamped and cannot be told
    apart again, so separate motifs keep their distance.  A motif that finds
    no room within ``max_tries`` draws is left out.
    """
    clear = None
    if par.min_gap > 0 and canvas.any():
        clear = ndimage.distance_transform_edt(~canvas)
    inner = np.zeros_like(canvas)
    m = par.margin
    inner[m : canvas.shape[0] - m, m : canvas.shape[1] - m] = True
    for _ in range(par.max_tries):
        layer = np.zeros_like(canvas)
        make(layer)
        if not layer.any() or (layer & ~inner).any():
            continue
        if clear is None or clear[layer].min() >= par.min_gap:
            canvas |= layer
            return


def generate_design(seed: int, size: int = 300, motif_params: MotifParams | None = None, dpi: float = 150.0,
                    design_id: str | None = None) -> DesignRecord:
    """Deterministic one-pixel-wide curvilinear design on a ``size`` x ``size`` canvas."""
    par = motif_params or MotifParams()
    if size < 32:
        raise PatternError("design canvas must be at least 32 px")
    rng = np.random.default_rng(seed)
    canvas = np.zeros((size, size), dtype=bool)
    makers = (
        [lambda c: _draw_polyline(c, _stroke(rng, size, par))] * par.n_strokes
        + [lambda c: _draw_polyline(c, _arc(rng, size, par))] * par.n_arcs
        + [lambda c: _draw_polyline(c, _spiral(rng, size, par))] * par.n_spirals
        + ([lambda c: _rings(c, rng, size, par, par.rings)] if par.rings else [])
    )
    for make in makers:
        _place_motif(canvas, make, par)
    skel = thin(canvas)
    if not skel.any():
        raise PatternError("degenerate design")
    return DesignRecord(design_id or f"design_{seed}", PointSet.from_mask(skel), dpi, "")


@dataclass(frozen=True, eq=False)
class SynthGroundTruth:
    """Everything needed to regenerate a sherd exactly.

    ``split_angle`` (degrees) orients the boundary between the visible
    regions of a two-stamp sherd; ``overlap_fraction`` of the crop area is
    covered by both stamps.
    """

    design_id: str
    poses: tuple
    crop_mask: np.ndarray
    noise_seed: int = 0
    dropped_fraction: float = 0.05
    jitter_prob: float = 0.2
    noise_fraction: float = 0.02
    split_angle: float = 0.0
    overlap_fraction: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) not in (1, 2):
            raise PatternError("a sherd carries one or two poses")
        if not 0.0 <= self.dropped_fraction < 1.0:
            raise PatternError("dropped_fraction must lie in [0, 1)")
        if not (0.0 <= self.jitter_prob <= 1.0 and 0.0 <= self.noise_fraction < 1.0):
            raise PatternError("bad noise settings")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise PatternError("overlap_fraction must lie in [0, 1]")
        mask = np.asarray(self.crop_mask).astype(bool)
        mask.flags.writeable = False
        object.__setattr__(self, "crop_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.crop_mask.shape

    def replace(self, **changes) -> "SynthGroundTruth":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        """JSON form; the crop mask is stored as its list of row runs."""
        return {
            "design_id": self.design_id,
            "poses": [p.to_dict() for p in self.poses],
            "crop_shape": list(self.crop_mask.shape),
            "crop_runs": _encode_runs(self.crop_mask),
            "noise_seed": self.noise_seed,
            "dropped_fraction": self.dropped_fraction,
            "jitter_prob": self.jitter_prob,
            "noise_fraction": self.noise_fraction,
            "split_angle": self.split_angle,
            "overlap_fraction": self.overlap_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthGroundTruth":
        return cls(
            design_id=data["design_id"],
            poses=[RigidTransform.from_dict(p) for p in data["poses"]],
            crop_mask=_decode_runs(data["crop_shape"], data["crop_runs"]),
            noise_seed=data["noise_seed"],
            dropped_fraction=data["dropped_fraction"],
            jitter_prob=data["jitter_prob"],
            noise_fraction=data["noise_fraction"],
            split_angle=data["split_angle"],
            overlap_fraction=data["overlap_fraction"],
        )


def _encode_runs(mask: np.ndarray) -> list:
    runs = []
    for y, row in enumerate(mask):
        xs = np.nonzero(row)[0]
        if not len(xs):
            continue
        breaks = np.nonzero(np.diff(xs) > 1)[0]
        starts = np.r_[xs[0], xs[breaks + 1]]
        stops = np.r_[xs[breaks], xs[-1]]
        runs.extend([y, int(a), int(b)] for a, b in zip(starts, stops))
    return runs


def _decode_runs(shape, runs) -> np.ndarray:
    mask = np.zeros(tuple(shape), dtype=bool)
    for y, a, b in runs:
        mask[y, a : b + 1] = True
    return mask


def blob_mask(rng, shape, radius: float, roughness: float = 0.18) -> np.ndarray:
    """Irregular star-shaped outline centred on the raster centre."""
    h, w = shape
    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    ang = np.arctan2(yy - cy, xx - cx)
    rad = np.hypot(yy - cy, xx - cx)
    prof = np.ones_like(ang)
    for k in range(2, 6):
        prof += roughness / k * rng.uniform(-1, 1) * np.cos(k * ang + rng.uniform(0, 2 * math.pi))
    return rad <= radius * prof


def _visible_regions(truth: SynthGroundTruth) -> list[np.ndarray]:
    crop = truth.crop_mask
    if len(truth.poses) == 1:
        return [crop]
    h, w = crop.shape
    yy, xx = np.mgrid[0:h, 0:w]
    a = math.radians(truth.split_angle)
    s = (xx - w // 2) * math.cos(a) + (yy - h // 2) * math.sin(a)
    # band half-width chosen so the shared strip holds overlap_fraction of the crop
    vals = np.sort(np.abs(s[crop]))
    k = int(round(truth.overlap_fraction * (len(vals) - 1)))
    half = vals[k] if len(vals) else 0.0
    return [crop & (s <= half), crop & (s >= -half)]


def stamp_points(design: PointSet, pose: RigidTransform, region: np.ndarray) -> np.ndarray:
    """Sherd pixels of one stamp: design pulled back through ``pose``, clipped to ``region``."""
    back = pose.inverse().to_pixels(design.points)
    h, w = region.shape
    ok = (back[:, 0] >= 0) & (back[:, 0] < w) & (back[:, 1] >= 0) & (back[:, 1] < h)
    back = back[ok]
    return back[region[back[:, 1], back[:, 0]]]


def generate_sherd(design: DesignRecord, truth: SynthGroundTruth) -> tuple[PointSet, SynthGroundTruth]:
    """Render the sherd described by ``truth``: stamps, crop, dropout, jitter and spurious points."""
    rng = np.random.default_rng(truth.noise_seed)
    h, w = truth.shape
    mask = np.zeros((h, w), dtype=bool)
    for pose, region in zip(truth.poses, _visible_regions(truth)):
        pts = stamp_points(design.point_set, pose, region)
        mask[pts[:, 1], pts[:, 0]] = True
    ys, xs = np.nonzero(mask)
    n = len(xs)
    if n and truth.dropped_fraction > 0:
        keep = rng.random(n) >= truth.dropped_fraction
        xs, ys = xs[keep], ys[keep]
    if len(xs) and truth.jitter_prob > 0:
        moves = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
        hop = rng.random(len(xs)) < truth.jitter_prob
        d = moves[rng.integers(0, 4, len(xs))] * hop[:, None]
        nx, ny = xs + d[:, 0], ys + d[:, 1]
        ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
        xs, ys = np.where(ok, nx, xs), np.where(ok, ny, ys)
    out = np.zeros((h, w), dtype=bool)
    out[ys, xs] = True
    if n and truth.noise_fraction > 0:
        cy, cx = np.nonzero(truth.crop_mask)
        extra = int(round(truth.noise_fraction * n))
        pick = rng.integers(0, len(cy), extra)
        out[cy[pick], cx[pick]] = True
    if not out.any():
        raise PatternError("degenerate crop")
    return PointSet.from_mask(out), truth


def snap_pose(theta: float, tx: float, ty: float, pivot, theta_step: float = 1.0, translation_step: int = 1) -> RigidTransform:
    """Nearest pose on a search grid (theta multiples of the step, integer translations)."""
    th = (round(theta / theta_step) * theta_step) % 360.0
    s = translation_step
    return RigidTransform(th, s * round(tx / s), s * round(ty / s), pivot)


def random_truth(design: DesignRecord, rng, *, stamps: int = 1, sherd_size: int = 150,
                 radius: tuple[float, float] = (50.0, 68.0), min_points: int = 150, min_stamp_fraction: float = 0.3,
                 theta_step: float = 1.0, translation_step: int = 1, max_jaccard: float = 0.05, alpha: float = 3.0,
                 max_tries: int = 200, **noise) -> SynthGroundTruth:
    """Draw a ground truth whose every stamp shows enough of the design.

    Poses are snapped to the given search grid.  Each stamp's visible part
    must hold at least ``min_stamp_fraction`` of the clean sherd's points,
    and for two stamps the Jaccard overlap of the points each pose explains
    (within ``alpha`` of the design) must stay below ``max_jaccard``, so the
    composite is separable in principle.
    """
    from .distance_field import build_distance_map

    pivot = (sherd_size // 2, sherd_size // 2)
    pts = design.point_set.points
    dw, dh = design.point_set.width, design.point_set.height
    for _ in range(max_tries):
        r = rng.uniform(*radius)
        crop = blob_mask(rng, (sherd_size, sherd_size), r)
        poses = []
        for _ in range(stamps):
            # aim the sherd centre at a random design pixel away from the border
            inner = pts[(pts[:, 0] > r * 0.5) & (pts[:, 0] < dw - r * 0.5) & (pts[:, 1] > r * 0.5) & (pts[:, 1] < dh - r * 0.5)]
            if not len(inner):
                inner = pts
            target = inner[rng.integers(len(inner))] + rng.uniform(-r / 3, r / 3, 2)
            theta = rng.uniform(0, 360)
            poses.append(snap_pose(theta, target[0] - pivot[0], target[1] - pivot[1], pivot, theta_step, translation_step))
        truth = SynthGroundTruth(
            design.id, poses, crop, noise_seed=int(rng.integers(2**31)), split_angle=float(rng.uniform(0, 360)), **noise
        )
        regions = _visible_regions(truth)
        stamps_pts = [stamp_points(design.point_set, p, reg) for p, reg in zip(poses, regions)]
        union = {tuple(q) for s in stamps_pts for q in s.tolist()}
        if len(union) < min_points:
            continue
        if any(len(s) < min_stamp_fraction * len(union) for s in stamps_pts):
            continue
        if stamps == 2:
            if _poses_too_close(poses):
                continue
            if _clean_jaccard(design, poses, union, alpha, build_distance_map) >= max_jaccard:
                continue
        return truth
    raise PatternError("could not place a sherd with enough curve pixels")


def _clean_jaccard(design, poses, union, alpha, build_distance_map) -> float:
    pts = np.array(sorted(union), dtype=np.int64)
    dmap = build_distance_map(design.point_set)
    sets = []
    for p in poses:
        sets.append(dmap.query_many(p.apply(pts)) < alpha)
    inter = np.sum(sets[0] & sets[1])
    return float(inter / max(1, np.sum(sets[0] | sets[1])))


def _poses_too_close(poses) -> bool:
    a, b = poses
    dth = abs((a.theta - b.theta + 180) % 360 - 180)
    return dth < 10 and math.hypot(a.tx - b.tx, a.ty - b.ty) < 10


# ---------------------------------------------------------------- corpus


@dataclass
class CorpusSpec:
    seed: int = 0
    n_designs: int = 20
    sherds_per_design: int = 5
    composite_fraction: float = 0.8
    design_size: int = 300
    sherd_size: int = 150
    dpi: float = 150.0
    motif_params: MotifParams = field(default_factory=MotifParams)
    # truth grid; 2 deg / 2 px poses lie on the finer default search grid too
    theta_step: float = 2.0
    translation_step: int = 2


def generate_corpus(spec: CorpusSpec | None = None):
    """Designs plus sherds with truth, deterministic in ``spec.seed``.

    Within each design's sherds, ``round(composite_fraction * n)`` are
    two-stamp composites and the rest single stamps.
    """
    spec = spec or CorpusSpec()
    designs = [
        generate_design(spec.seed * 1000 + i, spec.design_size, spec.motif_params, spec.dpi, f"D{i:02d}")
        for i in range(spec.n_designs)
    ]
    rng = np.random.default_rng(spec.seed)
    n_comp = int(round(spec.composite_fraction * spec.sherds_per_design))
    sherds = []
    for d in designs:
        for j in range(spec.sherds_per_design):
            truth = random_truth(d, rng, stamps=2 if j < n_comp else 1, sherd_size=spec.sherd_size,
                                 theta_step=spec.theta_step, translation_step=spec.translation_step)
            ps, _ = generate_sherd(d, truth)
            sherds.append((f"{d.id}_S{j}", ps, truth))
    return designs, sherds


def write_corpus(out_dir, spec: CorpusSpec | None = None) -> Path:
    """Write design and sherd PNGs plus ``manifest.json``; returns the manifest path."""
    from .cli_io import save_mask

    spec = spec or CorpusSpec()
    out = Path(out_dir)
    (out / "designs").mkdir(parents=True, exist_ok=True)
    (out / "sherds").mkdir(parents=True, exist_ok=True)
    designs, sherds = generate_corpus(spec)
    entries = []
    for d in designs:
        rel = f"designs/{d.id}.png"
        save_mask(d.point_set.to_mask(), out / rel)
        entries.append({"id": d.id, "path": rel, "dpi": d.dpi})
    sherd_entries = []
    for sid, ps, truth in sherds:
        rel = f"sherds/{sid}.png"
        save_mask(ps.to_mask(), out / rel)
        sherd_entries.append({"id": sid, "path": rel, "dpi": spec.dpi, "truth": truth.to_dict()})
    manifest = {
        "designs": entries,
        "sherds": sherd_entries,
        "target_dpi": spec.dpi,
        "seed": spec.seed,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def component_count(mask) -> int:
    return int(ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)[1])


def render_grooves(design: DesignRecord, width: int = 3, blur: float = 1.0, pad: int = 10,
                   surface: float = 200.0, groove: float = 60.0) -> np.ndarray:
    """Gray ``uint8`` image of the design pressed into a plain surface.

    Curves become dark grooves ``width`` px wide, softened by a Gaussian
    of ``blur`` px.  A ``pad`` px border of bare surface surrounds the
    design, so design pixel ``(x, y)`` sits at image pixel ``(x + pad, y + pad)``.
    """
    mask = design.point_set.to_mask()
    if width > 1:
        mask = ndimage.binary_dilation(mask, np.ones((width, width), dtype=bool))
    mask = np.pad(mask, pad)
    img = ndimage.gaussian_filter(np.where(mask, groove, surface), blur) if blur > 0 else np.where(mask, groove, surface)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
