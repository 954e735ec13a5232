"""Composite-pattern matching: explain a sherd with one or two placements of a design.

For every lattice translation the rotation whose *component* (the sherd
points landing within ``alpha`` of the design) has the lowest Chamfer
distance is kept.  Regional minima of that per-translation distance yield a
short list of candidate components; the final match is the single
component or pair with the largest coverage of the sherd, pairs being
admissible only when their Jaccard overlap stays below ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .chamfer_match import Lattice, SearchConfig, _band_pixels, build_lattice, default_pad
from .distance_field import DistanceMap, build_distance_map
from .pattern_core import PatternError, PointSet, RigidTransform, search_pivot


@dataclass(frozen=True, eq=False)
class Component:
    """Sherd points explained by one placement of the design."""

    member_indices: np.ndarray
    transform: RigidTransform
    chamfer: float

    def __post_init__(self):
        idx = np.asarray(self.member_indices, dtype=np.int64)
        idx.flags.writeable = False
        object.__setattr__(self, "member_indices", idx)

    def __len__(self) -> int:
        return len(self.member_indices)

    @property
    def members(self) -> frozenset[int]:
        return frozenset(int(i) for i in self.member_indices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Component):
            return NotImplemented
        return (
            np.array_equal(self.member_indices, other.member_indices)
            and self.transform == other.transform
            and self.chamfer == other.chamfer
        )

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "chamfer": self.chamfer,
            "member_count": len(self),
            "member_indices": self.member_indices.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Component":
        return cls(data["member_indices"], RigidTransform.from_dict(data["transform"]), data["chamfer"])


@dataclass
class MatchResult:
    score: float
    k: int
    components: list[Component]
    disjointness: float | None = None
    design_id: str | None = None
    diagnostics: dict = field(default_factory=dict)
    # best single-component case, kept even when a pair wins
    single: Component | None = None

    def to_dict(self) -> dict:
        return {
            "design_id": self.design_id,
            "score": self.score,
            "k": self.k,
            "disjointness": self.disjointness,
            "components": [c.to_dict() for c in self.components],
            "single": self.single.to_dict() if self.single is not None else None,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatchResult":
        return cls(
            score=data["score"],
            k=data["k"],
            components=[Component.from_dict(c) for c in data["components"]],
            disjointness=data.get("disjointness"),
            design_id=data.get("design_id"),
            diagnostics=data.get("diagnostics", {}),
            single=Component.from_dict(data["single"]) if data.get("single") else None,
        )


@dataclass(eq=False)
class CandidateField:
    """Best-rotation component statistics for every lattice translation.

    Arrays are indexed ``[ix, iy]`` so C order is lexicographic ``(tx, ty)``
    order.  ``d_tilde`` is ``inf`` where no rotation gives a component of
    admissible size.
    """

    lattice: Lattice
    thetas: np.ndarray
    d_tilde: np.ndarray
    theta_index: np.ndarray
    unique_count: np.ndarray
    member_count: np.ndarray
    sherd: PointSet
    dmap: DistanceMap
    alpha: float

    def theta_at(self, ix: int, iy: int) -> float:
        return float(self.thetas[self.theta_index[ix, iy]])

    def component_at(self, ix: int, iy: int) -> Component:
        return candidate_component(
            self.sherd, self.dmap, self.lattice.translation(ix, iy), self.theta_at(ix, iy), self.alpha, self.lattice.pivot
        )


def candidate_component(sherd: PointSet, dmap: DistanceMap, t, theta: float, alpha: float, pivot=None) -> Component:
    """Sherd points whose transformed position lies closer than ``alpha`` to the design.

    The Chamfer distance is the mean over the component's distinct
    transformed pixels.  An empty component carries the sentinel distance.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    pivot = search_pivot(sherd) if pivot is None else (int(pivot[0]), int(pivot[1]))
    tx, ty = int(t[0]), int(t[1])
    transform = RigidTransform(theta, tx, ty, pivot)
    off, _, inverse = K.rotated_offsets(sherd.points, pivot, theta)
    # rounding is anchored at pivot + t, so integer shifts commute with it
    moved = off + np.array([pivot[0] + tx, pivot[1] + ty])
    vals = dmap.query_many(moved)
    hit = vals < alpha
    if not hit.any():
        return Component(np.empty(0, dtype=np.int64), transform, dmap.sentinel)
    members = np.nonzero(hit[inverse])[0]
    return Component(members, transform, K.seq_sum(vals[hit]) / int(hit.sum()))


def _floor_count(cfg: SearchConfig, n: int) -> int:
    return max(1, int(math.ceil(cfg.min_component_fraction * n - 1e-9)))


def best_rotation_at(sherd: PointSet, dmap: DistanceMap, t, cfg: SearchConfig):
    """Rotation minimising the component Chamfer distance at translation ``t``.

    Only rotations whose component reaches the size floor compete; when none
    does the distance is ``inf`` and the component is empty.
    """
    floor = _floor_count(cfg, len(sherd))
    best = (math.inf, None, None)
    for theta in cfg.thetas():
        comp = candidate_component(sherd, dmap, t, theta, cfg.alpha)
        if len(comp) < floor:
            continue
        if comp.chamfer < best[0]:
            best = (comp.chamfer, float(theta), comp)
    d, theta_star, comp = best
    if comp is None:
        pivot = search_pivot(sherd)
        comp = Component(np.empty(0, dtype=np.int64), RigidTransform(0.0, t[0], t[1], pivot), math.inf)
        return 0.0, comp, math.inf
    return theta_star, comp, d


def build_candidate_field(sherd: PointSet, dmap: DistanceMap, cfg: SearchConfig) -> CandidateField:
    """Per-translation best component over the whole lattice (scatter over the alpha band)."""
    lat = build_lattice(sherd, dmap.design_box, cfg)
    thetas = cfg.thetas()
    floor = _floor_count(cfg, len(sherd))
    shape = (lat.nx, lat.ny)
    best = np.full(shape, np.inf)
    best_theta = np.zeros(shape, dtype=np.int64)
    best_cu = np.zeros(shape, dtype=np.int64)
    best_cm = np.zeros(shape, dtype=np.int64)
    cnt = np.zeros(shape, dtype=np.int64)
    sums = np.zeros(shape, dtype=np.float64)
    # off-grid placements read the sentinel; only when it is below alpha do they count
    use_scatter = dmap.sentinel >= cfg.alpha
    if use_scatter:
        xy, vals = _band_pixels(dmap, cfg.alpha)
        buckets = K.bucket_pixels(xy, vals, lat.base_x, lat.base_y, lat.step)
    gox, goy = dmap.origin_offset
    for ti, theta in enumerate(thetas):
        off, mult, _ = K.rotated_offsets(sherd.points, lat.pivot, theta)
        if use_scatter:
            cnt.fill(0)
            sums.fill(0.0)
            K.scatter_band(*K.offset_split(off, lat.step), mult, *buckets, cnt, sums)
        else:
            K.gather_band(dmap.grid, gox, goy, dmap.sentinel, cfg.alpha, np.ascontiguousarray(off[:, 0]),
                          np.ascontiguousarray(off[:, 1]), mult, lat.step, lat.base_x, lat.base_y, cnt, sums)
        K.update_field(cnt, sums, floor, ti, best, best_theta, best_cu, best_cm)
    return CandidateField(lat, thetas, best, best_theta, best_cu, best_cm, sherd, dmap, cfg.alpha)


def suppress_minima(cand: CandidateField, cfg: SearchConfig) -> list[tuple[int, int]]:
    """Translations at regional minima of ``d_tilde``, best first, at most ``p_max``."""
    cells = K.plateau_minima(cand.d_tilde)
    if not len(cells):
        return []
    vals = cand.d_tilde[cells[:, 0], cells[:, 1]]
    order = np.lexsort((cells[:, 1], cells[:, 0], vals))
    return [cand.lattice.translation(*cells[i]) for i in order[: cfg.p_max]]


def completeness(components, sherd_size: int) -> float:
    """Fraction of sherd points covered by the union of the components."""
    if sherd_size <= 0:
        raise ValueError("sherd_size must be positive")
    union = set()
    for c in components:
        union.update(_member_set(c))
    return len(union) / sherd_size


def disjointness(a, b) -> float:
    """Jaccard index of two components' member sets."""
    sa, sb = _member_set(a), _member_set(b)
    if not sa or not sb:
        raise ValueError("disjointness of an empty component")
    return len(sa & sb) / len(sa | sb)


def _member_set(c) -> frozenset:
    if isinstance(c, Component):
        return c.members
    return frozenset(c)


def select_case(components: list[Component], sherd_size: int, eta: float, pairs: bool = True):
    """Best single or admissible pair among ordered candidates (singles only without ``pairs``).

    Ranking key: union size (larger first), then fewer components, then the
    smaller summed component Chamfer distance, then the lexicographic order
    of the component translations.  Returns ``(indices, union_size, jaccard)``
    or ``None`` when there is no candidate.
    """
    sets = [c.members for c in components]
    trans = [(c.transform.tx, c.transform.ty) for c in components]
    best_key, best = None, None
    for i, c in enumerate(components):
        key = (-len(sets[i]), 1, c.chamfer, (trans[i],))
        if best_key is None or key < best_key:
            best_key, best = key, ((i,), len(sets[i]), None)
    for i in range(len(components) if pairs else 0):
        for j in range(i + 1, len(components)):
            inter = len(sets[i] & sets[j])
            union = len(sets[i]) + len(sets[j]) - inter
            jac = inter / union
            if not jac < eta:
                continue
            key = (-union, 2, components[i].chamfer + components[j].chamfer, tuple(sorted((trans[i], trans[j]))))
            if best_key is None or key < best_key:
                best_key, best = key, ((i, j), union, jac)
    return best


def match_composite(
    sherd: PointSet,
    design: PointSet,
    cfg: SearchConfig | None = None,
    design_id: str | None = None,
    dmap: DistanceMap | None = None,
) -> MatchResult:
    """Decompose ``sherd`` into at most two placements of ``design``; score = coverage."""
    cfg = cfg or SearchConfig()
    if not len(sherd) or not len(design):
        raise PatternError("empty pattern")
    if dmap is None:
        dmap = build_distance_map(design, default_pad(sherd))
    cand = build_candidate_field(sherd, dmap, cfg)
    minima = suppress_minima(cand, cfg)
    components = []
    for t in minima:
        comp = cand.component_at(*cand.lattice.index_of(*t))
        if len(comp):
            components.append(comp)
    diag = {"p": len(components), "theta_step": cfg.theta_step, "translation_step": cfg.translation_step}
    chosen = select_case(components, len(sherd), cfg.eta)
    if chosen is None:
        return MatchResult(0.0, 1, [], None, design_id, diag)
    idx, union, jac = chosen
    single = components[select_case(components, len(sherd), cfg.eta, pairs=False)[0][0]]
    return MatchResult(union / len(sherd), len(idx), [components[i] for i in idx], jac, design_id, diag, single)
