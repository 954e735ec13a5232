"""Raster and manifest I/O, plus component overlays."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .composite_match import MatchResult
from .curve_extract import extract, is_binary_image
from .eval_bench import DesignRecord
from .pattern_core import PatternError, PointSet, normalize_dpi

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}

GRAY = (128, 128, 128)
COLOURS = ((255, 0, 0), (0, 200, 0))
SHARED = (0, 0, 255)


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I", "F"):
                return np.asarray(im)
            if im.mode not in ("L", "RGB", "RGBA", "1"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            return np.asarray(im)
    except OSError as exc:
        raise PatternError(f"cannot read image {path}: {exc}") from None


def image_dpi(path) -> float | None:
    """Horizontal DPI stored in the file's metadata, if any."""
    with Image.open(path) as im:
        dpi = im.info.get("dpi")
    if not dpi:
        return None
    d = float(dpi[0])
    return d if d > 0 else None


def load_mask(path) -> np.ndarray:
    img = load_image(path)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0


def save_mask(mask, path, dpi: float | None = None) -> None:
    """8-bit single-channel PNG, foreground 255."""
    img = Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L")
    kw = {"dpi": (dpi, dpi)} if dpi else {}
    img.save(path, **kw)


def read_pattern(path, cfg=None, binary: bool | None = None) -> PointSet:
    """Point set from JSON, a binary mask (taken as-is) or a photograph (full extraction)."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        try:
            return PointSet.load(p)
        except (OSError, json.JSONDecodeError) as exc:
            raise PatternError(f"cannot read point set {p}: {exc}") from None
    img = load_image(p)
    if binary is None:
        binary = is_binary_image(img)
    if binary:
        ps = PointSet.from_mask((img[..., 0] if img.ndim == 3 else img) > 0)
        if not len(ps):
            raise PatternError(f"{p}: empty mask")
        return ps
    return extract(img, cfg)


def write_pattern(ps: PointSet, path) -> None:
    p = Path(path)
    if p.suffix.lower() == ".json":
        ps.save(p)
    else:
        save_mask(ps.to_mask(), p)


# ---------------------------------------------------------------- manifests


@dataclass
class Corpus:
    designs: list
    sherds: list  # (sherd_id, PointSet, truth design id or None)
    target_dpi: float
    raw: dict


def _load_normalized(path: Path, dpi, target_dpi: float) -> PointSet:
    if dpi is None:
        raise PatternError(f"DPI missing for {path}")
    mask = load_mask(path)
    out = normalize_dpi(mask, float(dpi), float(target_dpi))
    ps = PointSet.from_mask(out)
    if not len(ps):
        raise PatternError(f"{path}: empty pattern")
    return ps


def load_manifest(path) -> Corpus:
    """Designs (and sherds, when listed) from a manifest, normalised to its target DPI.

    Schema: ``{"designs": [{"id", "path", "dpi"}], "sherds": [...], "target_dpi": N}``;
    relative paths are resolved against the manifest's directory.
    """
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PatternError(f"cannot read manifest {p}: {exc}") from None
    if "designs" not in data:
        raise PatternError("manifest lacks a 'designs' list")
    target = float(data.get("target_dpi", 150))
    root = p.parent
    designs = []
    for entry in data["designs"]:
        if "id" not in entry or "path" not in entry:
            raise PatternError("design entries need 'id' and 'path'")
        src = root / entry["path"]
        ps = _load_normalized(src, entry.get("dpi"), target)
        designs.append(DesignRecord(str(entry["id"]), ps, target, str(src)))
    sherds = []
    for entry in data.get("sherds", []):
        src = root / entry["path"]
        ps = _load_normalized(src, entry.get("dpi"), target)
        truth = entry.get("truth", {}).get("design_id", entry.get("design_id"))
        sherds.append((str(entry["id"]), ps, truth))
    return Corpus(designs, sherds, target, data)


# ---------------------------------------------------------------- overlays


def render_overlay(design: DesignRecord, result: MatchResult, sherd: PointSet) -> np.ndarray:
    """RGB image at design resolution: design in gray, components in red and green.

    Sherd points claimed by both components are drawn in blue at the first
    component's placement.  Points that land outside the design frame are
    clipped.
    """
    ps = design.point_set
    img = np.zeros((ps.height, ps.width, 3), dtype=np.uint8)
    if len(ps):
        img[ps.ys - ps.origin[1], ps.xs - ps.origin[0]] = GRAY
    comps = result.components[:2]
    sets = [c.members for c in comps]
    shared = sets[0] & sets[1] if len(sets) == 2 else frozenset()
    for k, c in enumerate(comps):
        own = np.array(sorted(sets[k] - shared), dtype=np.int64)
        _paint(img, ps, sherd, own, c.transform, COLOURS[k])
    if shared:
        _paint(img, ps, sherd, np.array(sorted(shared), dtype=np.int64), comps[0].transform, SHARED)
    return img


def _paint(img, design: PointSet, sherd: PointSet, idx, transform, colour) -> None:
    if not len(idx):
        return
    q = transform.to_pixels(sherd.points[idx])
    x = q[:, 0] - design.origin[0]
    y = q[:, 1] - design.origin[1]
    ok = (x >= 0) & (x < img.shape[1]) & (y >= 0) & (y < img.shape[0])
    img[y[ok], x[ok]] = colour


def save_rgb(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)
