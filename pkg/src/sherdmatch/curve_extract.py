"""Photograph / scan to one-pixel-wide curve pattern.

Pipeline: gray conversion and contrast stretch, multiscale Hessian (Frangi)
ridge response, thresholding with small-blob removal (and pinhole filling),
Zhang-Suen thinning and short-branch pruning.  Already-binary masks (for instance hand-edited
ones) enter the pipeline at the thinning stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .pattern_core import PatternError, PointSet

log = logging.getLogger(__name__)

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ExtractConfig:
    n_scales: int = 10
    scale_ratio: float = 2.0
    base_scale: float = 1.0
    max_scale: float = 2.0
    frangi_alpha: float = 0.5
    frangi_beta: float = 0.5
    frangi_gamma: float = 15.0
    binarize_threshold: float = 0.2
    min_blob_area: int = 10
    min_branch_len: int = 10
    dark_ridges: bool = True

    def __post_init__(self):
        for name in ("n_scales", "scale_ratio", "base_scale", "max_scale", "frangi_alpha", "frangi_beta", "frangi_gamma",
                     "min_blob_area", "min_branch_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")

    def scales(self, shape=None) -> list[float]:
        """``base * ratio**k`` up to ``max_scale``; with ``shape`` given, also at most a quarter of the larger side.

        Far above the groove width the response picks up the gaps between
        neighbouring curves, so the ladder is cut off.
        """
        cap = self.max_scale
        if shape is not None:
            cap = min(cap, max(shape) / 4.0)
        sig = [self.base_scale * self.scale_ratio**k for k in range(self.n_scales)]
        return [s for s in sig if s <= cap] or sig[:1]


# ---------------------------------------------------------------- steps 1-2


def preprocess(image) -> np.ndarray:
    """Luminance (0.299, 0.587, 0.114) then a 1st/99th-percentile linear stretch to 0..255.

    Transparent pixels of an RGBA image are treated as white background.
    Returns ``uint8``.  A constant image is returned unchanged.
    """
    img = np.asarray(image)
    if img.size == 0:
        raise PatternError("empty image")
    if img.ndim == 3:
        rgb = img[..., :3].astype(np.float64)
        if img.shape[2] == 4:
            a = img[..., 3:4].astype(np.float64) / 255.0
            rgb = rgb * a + 255.0 * (1.0 - a)
        gray = np.round(rgb @ np.array([0.299, 0.587, 0.114]))
    else:
        gray = img.astype(np.float64)
    gray = np.clip(gray, 0, 255)
    lo, hi = np.percentile(gray, [1, 99])
    if hi <= lo:
        return gray.astype(np.uint8)
    out = (gray - lo) * (255.0 / (hi - lo))
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- step 3


def _hessian_eigs(img: np.ndarray, sigma: float):
    hxx = ndimage.gaussian_filter(img, sigma, order=(0, 2), mode="nearest") * sigma**2
    hyy = ndimage.gaussian_filter(img, sigma, order=(2, 0), mode="nearest") * sigma**2
    hxy = ndimage.gaussian_filter(img, sigma, order=(1, 1), mode="nearest") * sigma**2
    tmp = np.sqrt((hxx - hyy) ** 2 + 4 * hxy**2)
    mu1 = 0.5 * (hxx + hyy + tmp)
    mu2 = 0.5 * (hxx + hyy - tmp)
    # order so |l1| <= |l2|
    swap = np.abs(mu1) > np.abs(mu2)
    l1 = np.where(swap, mu2, mu1)
    l2 = np.where(swap, mu1, mu2)
    return l1, l2


def frangi_ridge(gray, cfg: ExtractConfig | None = None) -> np.ndarray:
    """Maximum over scales of the 2D Frangi vesselness, in [0, 1].

    ``frangi_beta`` scales the blob ratio term and ``frangi_gamma`` the
    structure-norm term; ``frangi_alpha`` only matters for plate-like
    structure in 3D and is unused here.
    """
    cfg = cfg or ExtractConfig()
    img = np.asarray(gray, dtype=np.float64)
    out = np.zeros_like(img)
    b2 = 2.0 * cfg.frangi_beta**2
    c2 = 2.0 * cfg.frangi_gamma**2
    for sigma in cfg.scales(img.shape):
        l1, l2 = _hessian_eigs(img, sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            rb2 = np.where(l2 != 0, (l1 / l2) ** 2, 0.0)
        s2 = l1**2 + l2**2
        v = np.exp(-rb2 / b2) * (1.0 - np.exp(-s2 / c2))
        # dark ridges curve upward across the ridge: keep positive major eigenvalue
        if cfg.dark_ridges:
            v[l2 <= 0] = 0.0
        else:
            v[l2 >= 0] = 0.0
        np.maximum(out, v, out=out)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------- steps 4-5


def binarize_and_clean(response, cfg: ExtractConfig | None = None) -> np.ndarray:
    """Threshold, then drop 8-connected blobs smaller than ``min_blob_area``."""
    cfg = cfg or ExtractConfig()
    mask = np.asarray(response) > cfg.binarize_threshold
    return remove_small_blobs(mask, cfg.min_blob_area)


def remove_small_blobs(mask, min_area: int) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def fill_small_holes(mask, max_area: int) -> np.ndarray:
    """Fill 4-connected background pockets smaller than ``max_area`` that touch no border.

    A pinhole inside a ridge would survive thinning as a tiny loop and fake
    a junction, which then gets a real curve end pruned as a spur.
    """
    mask = np.asarray(mask).astype(bool)
    labels, n = ndimage.label(~mask)
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel())
    fill = areas < max_area
    fill[0] = False
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    fill[edge] = False
    return mask | fill[labels]


# ---------------------------------------------------------------- step 6

# neighbour bit order P2..P9 = N, NE, E, SE, S, SW, W, NW
_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _neighbour_code(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask.astype(np.int64), 1)
    h, w = mask.shape
    code = np.zeros((h, w), dtype=np.int64)
    for bit, (dy, dx) in enumerate(_OFFSETS):
        code |= p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] << bit
    return code


def _zs_tables():
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    simple = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]
        p2, p3, p4, p5, p6, p7, p8, p9 = p
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        # Lu-Wang lower bound of 3 keeps line ends from eroding
        base = 3 <= b <= 6 and a == 1
        first[code] = base and p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        second[code] = base and p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
        simple[code] = _is_simple(p)
    return first, second, simple


def _is_simple(p) -> bool:
    # 8-connected foreground components among the neighbours, plus a background 4-neighbour
    cells = [_OFFSETS[k] for k in range(8) if p[k]]
    if not cells:
        return False
    if all(p[k] for k in (0, 2, 4, 6)):
        return False
    seen = {cells[0]}
    stack = [cells[0]]
    while stack:
        cy, cx = stack.pop()
        for oy, ox in cells:
            if (oy, ox) not in seen and max(abs(oy - cy), abs(ox - cx)) == 1:
                seen.add((oy, ox))
                stack.append((oy, ox))
    return len(seen) == len(cells)


_ZS_FIRST, _ZS_SECOND, _SIMPLE = _zs_tables()


@numba.njit(cache=True)
def _staircase_pass(img, simple):
    """Sequentially delete simple, non-end pixels sitting on an L of two 4-neighbours."""
    h, w = img.shape
    changed = False
    for y in range(h):
        for x in range(w):
            if not img[y, x]:
                continue
            code = 0
            count = 0
            bit = 0
            for dy, dx in ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)):
                yy = y + dy
                xx = x + dx
                if 0 <= yy < h and 0 <= xx < w and img[yy, xx]:
                    code |= 1 << bit
                    count += 1
                bit += 1
            if count < 2 or not simple[code]:
                continue
            n = (code >> 0) & 1
            e = (code >> 2) & 1
            s = (code >> 4) & 1
            wv = (code >> 6) & 1
            if (n and e) or (e and s) or (s and wv) or (wv and n):
                img[y, x] = False
                changed = True
    return changed


def thin(mask) -> np.ndarray:
    """Zhang-Suen thinning (Lu-Wang neighbour bound) to convergence, then staircase cleanup.

    A component that Zhang-Suen would erase outright (a 2x2 square) keeps
    its first pixel in scan order, so component counts are preserved.
    """
    img = np.asarray(mask).astype(bool).copy()
    if not img.any():
        return img
    while True:
        changed = False
        for table in (_ZS_FIRST, _ZS_SECOND):
            code = _neighbour_code(img)
            delete = img & table[code]
            if not delete.any():
                continue
            new = img & ~delete
            labels, n = ndimage.label(img, structure=_EIGHT)
            alive = np.zeros(n + 1, dtype=bool)
            alive[np.unique(labels[new])] = True
            for lab in np.nonzero(~alive[1:])[0] + 1:
                ys, xs = np.nonzero(labels == lab)
                new[ys[0], xs[0]] = True
            if not np.array_equal(new, img):
                img = new
                changed = True
        if not changed:
            break
    while _staircase_pass(img, _SIMPLE):
        pass
    return img


# ---------------------------------------------------------------- step 7


def _degree(mask: np.ndarray) -> np.ndarray:
    k = np.ones((3, 3), dtype=np.int64)
    k[1, 1] = 0
    return ndimage.convolve(mask.astype(np.int64), k, mode="constant") * mask


def _neighbours(mask, y, x):
    h, w = mask.shape
    for dy, dx in _OFFSETS:
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
            yield yy, xx


def _trace_branch(mask, deg, start, max_len):
    """Walk from an end pixel to the first junction.

    Returns ``(path, junction)``; ``junction`` is ``None`` when the walk ends
    at another end pixel or runs past ``max_len`` pixels.
    """
    path = [start]
    seen = {start}
    cur = start
    while len(path) <= max_len:
        nxt = [q for q in _neighbours(mask, *cur) if q not in seen]
        if not nxt:
            return path, None
        junctions = [q for q in nxt if deg[q] >= 3]
        if junctions:
            return path, min(junctions)
        if len(nxt) > 1:
            return path, None
        cur = nxt[0]
        path.append(cur)
        seen.add(cur)
    return path, None


def prune_branches(skeleton, cfg: ExtractConfig | None = None) -> np.ndarray:
    """Delete end-to-junction spurs shorter than ``min_branch_len`` pixels.

    Each round removes at most one spur per junction (shortest first), so a
    junction whose other arms are gone is re-examined as a plain curve.
    Rounds alternate with re-thinning until nothing changes.
    """
    cfg = cfg or ExtractConfig()
    img = np.asarray(skeleton).astype(bool).copy()
    limit = cfg.min_branch_len
    while True:
        deg = _degree(img)
        ends = list(zip(*np.nonzero(deg == 1)))
        spurs = []
        for e in ends:
            path, junction = _trace_branch(img, deg, (int(e[0]), int(e[1])), limit)
            if junction is not None and len(path) < limit:
                spurs.append((len(path), path[0], path, junction))
        if not spurs:
            break
        spurs.sort(key=lambda s: (s[0], s[1]))
        used = set()
        for _, _, path, junction in spurs:
            if junction in used:
                continue
            used.add(junction)
            for q in path:
                img[q] = False
        img = thin(img)
    return img


# ---------------------------------------------------------------- pipeline


def is_binary_image(image) -> bool:
    img = np.asarray(image)
    if img.ndim == 3:
        if img.shape[2] == 4:
            return False
        if not (np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 0], img[..., 2])):
            return False
        img = img[..., 0]
    vals = np.unique(img)
    return len(vals) <= 2 and set(vals.tolist()) <= {0, 1, 255, True, False}


def extract(image, cfg: ExtractConfig | None = None, binary: bool | None = None) -> PointSet:
    """Run the extraction pipeline and return the curve pixels.

    ``binary=None`` auto-detects masks whose only values are 0 and 255 (or
    0 and 1).  Such masks are taken as refined curves: they are only thinned,
    never pruned.
    """
    cfg = cfg or ExtractConfig()
    img = np.asarray(image)
    if img.size == 0:
        raise PatternError("empty image")
    if binary is None:
        binary = is_binary_image(img)
    if binary:
        mask = (img[..., 0] if img.ndim == 3 else img) > 0
        out = thin(mask)
    else:
        gray = preprocess(img)
        resp = frangi_ridge(gray, cfg)
        mask = fill_small_holes(binarize_and_clean(resp, cfg), cfg.min_blob_area)
        out = prune_branches(thin(mask), cfg)
    if not out.any():
        raise PatternError("no curves detected")
    log.debug("extracted %d curve pixels", int(out.sum()))
    return PointSet.from_mask(out)
