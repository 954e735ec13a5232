"""``sherdmatch`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 no match (score 0).
Every flag may also be given in a JSON file passed with ``--config``; flags
on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .chamfer_match import SearchConfig
from .curve_extract import ExtractConfig
from .pattern_core import PatternError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_MATCH = 0, 1, 2, 3

log = logging.getLogger("sherdmatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _search_flags(p):
    g = p.add_argument_group("search")
    g.add_argument("--theta-step", type=float, default=1.0, help="rotation step in degrees (divides 360)")
    g.add_argument("--translation-step", type=int, default=1, help="translation lattice step in pixels")
    g.add_argument("--alpha", type=float, default=3.0, help="component membership distance")
    g.add_argument("--eta", type=float, default=0.1, help="maximum Jaccard overlap of a component pair")
    g.add_argument("--p-max", type=int, default=20, help="candidate components kept")
    g.add_argument("--min-component-fraction", type=float, default=0.05)


def _extract_flags(p):
    g = p.add_argument_group("extraction")
    d = ExtractConfig()
    g.add_argument("--n-scales", type=int, default=d.n_scales)
    g.add_argument("--scale-ratio", type=float, default=d.scale_ratio)
    g.add_argument("--base-scale", type=float, default=d.base_scale)
    g.add_argument("--max-scale", type=float, default=d.max_scale, help="largest ridge scale in pixels")
    g.add_argument("--frangi-beta", type=float, default=d.frangi_beta)
    g.add_argument("--frangi-gamma", type=float, default=d.frangi_gamma)
    g.add_argument("--binarize-threshold", type=float, default=d.binarize_threshold)
    g.add_argument("--min-blob-area", type=int, default=d.min_blob_area)
    g.add_argument("--min-branch-len", type=int, default=d.min_branch_len)
    g.add_argument("--bright-ridges", action="store_true", help="curves brighter than the surface")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sherdmatch", description="Match fragmentary curve patterns against a design database.")
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    e = sub.add_parser("extract", help="image to one-pixel curve pattern")
    e.add_argument("image")
    e.add_argument("--out", required=True, help="output .json point set or .png mask")
    e.add_argument("--binary", action="store_true", help="input is a refined binary mask: thin only")
    e.add_argument("--png", help="also write the skeleton mask here")
    _extract_flags(e)

    i = sub.add_parser("ingest", help="build a design manifest from a directory of images")
    i.add_argument("design_dir")
    i.add_argument("--manifest", required=True)
    i.add_argument("--dpi", type=float, default=150.0, help="target DPI")
    i.add_argument("--source-dpi", type=float, help="DPI for files without DPI metadata")
    i.add_argument("--out-dir", help="where normalised masks go (default: next to the manifest)")
    _extract_flags(i)

    m = sub.add_parser("match", help="match one sherd against one design")
    m.add_argument("sherd")
    m.add_argument("design")
    m.add_argument("--method", choices=("composite", "chamfer", "image"), default="composite")
    m.add_argument("--out", help="write the JSON result here as well as to stdout")
    m.add_argument("--overlay", help="composite only: write an overlay PNG")
    _search_flags(m)

    r = sub.add_parser("rank", help="rank all designs of a manifest for one sherd")
    r.add_argument("sherd")
    r.add_argument("--db", required=True, help="design manifest")
    r.add_argument("--method", choices=("composite", "chamfer", "image"), default="composite")
    r.add_argument("--top", type=int, default=5, help="report the top L designs")
    r.add_argument("--out", help="write the JSON report here as well as to stdout")
    r.add_argument("--overlay-dir", help="composite only: overlay PNGs for the top L")
    r.add_argument("--cache-dir")
    _search_flags(r)

    v = sub.add_parser("evaluate", help="CMC evaluation over a corpus manifest with ground truth")
    v.add_argument("--corpus", required=True)
    v.add_argument("--method", nargs="+", choices=("composite", "chamfer", "image"),
                   default=["composite", "chamfer", "image"])
    v.add_argument("--out-dir", default="eval_out")
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--cache-dir")
    _search_flags(v)

    s = sub.add_parser("synth", help="write a synthetic benchmark corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--designs", type=int, default=20)
    s.add_argument("--sherds-per-design", type=int, default=5)
    s.add_argument("--composite-fraction", type=float, default=0.8)
    s.add_argument("--out", default="corpus")
    return p


def _apply_config(parser, argv):
    """Parse twice: once to find ``--config``, then with its values as defaults."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        conf = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    sub = parser._subparsers._group_actions[0].choices.get(args.command) if args.command else None
    known = {a.dest for a in parser._actions}
    if sub is not None:
        known |= {a.dest for a in sub._actions}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    (sub or parser).set_defaults(**conf)
    return parser.parse_args(argv)


def _search_cfg(a) -> SearchConfig:
    try:
        return SearchConfig(a.theta_step, a.translation_step, None, a.alpha, a.eta, a.p_max, a.min_component_fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _extract_cfg(a) -> ExtractConfig:
    try:
        return ExtractConfig(
            n_scales=a.n_scales, scale_ratio=a.scale_ratio, base_scale=a.base_scale, max_scale=a.max_scale, frangi_beta=a.frangi_beta,
            frangi_gamma=a.frangi_gamma, binarize_threshold=a.binarize_threshold, min_blob_area=a.min_blob_area,
            min_branch_len=a.min_branch_len, dark_ridges=not a.bright_ridges,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=1)
    print(text)
    if out:
        Path(out).write_text(text + "\n")


# ---------------------------------------------------------------- commands


def cmd_extract(a) -> int:
    from .cli_io import load_image, save_mask, write_pattern
    from .curve_extract import extract

    img = load_image(a.image)
    ps = extract(img, _extract_cfg(a), binary=True if a.binary else None)
    write_pattern(ps, a.out)
    if a.png:
        save_mask(ps.to_mask(), a.png)
    log.info("%d curve pixels", len(ps))
    return EXIT_OK


def cmd_ingest(a) -> int:
    from .cli_io import IMAGE_SUFFIXES, image_dpi, load_image, save_mask
    from .curve_extract import extract, is_binary_image
    from .pattern_core import normalize_dpi

    src = Path(a.design_dir)
    if not src.is_dir():
        raise PatternError(f"not a directory: {src}")
    manifest = Path(a.manifest)
    out_dir = Path(a.out_dir) if a.out_dir else manifest.parent / "designs_normalized"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = _extract_cfg(a)
    entries = []
    for f in sorted(src.iterdir()):
        if f.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        dpi = image_dpi(f) or a.source_dpi
        if dpi is None:
            raise PatternError(f"DPI missing for {f} (no metadata and no --source-dpi)")
        img = load_image(f)
        mask = extract(img, cfg).to_mask() if not is_binary_image(img) else (img[..., 0] if img.ndim == 3 else img) > 0
        norm = normalize_dpi(mask, dpi, a.dpi)
        dest = out_dir / f"{f.stem}.png"
        save_mask(norm, dest, a.dpi)
        rel = dest.resolve().relative_to(manifest.parent.resolve()) if dest.resolve().is_relative_to(
            manifest.parent.resolve()) else dest.resolve()
        entries.append({"id": f.stem, "path": str(rel), "dpi": a.dpi, "source": str(f), "source_dpi": dpi})
    if not entries:
        raise PatternError(f"no images in {src}")
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text(json.dumps({"designs": entries, "target_dpi": a.dpi}, indent=1) + "\n")
    log.info("wrote %d designs to %s", len(entries), manifest)
    return EXIT_OK


def cmd_match(a) -> int:
    from .cli_io import read_pattern, render_overlay, save_rgb
    from .composite_match import match_composite
    from .eval_bench import DesignRecord, match_value

    cfg = _search_cfg(a)
    sherd, design = read_pattern(a.sherd), read_pattern(a.design)
    if a.method == "composite":
        res = match_composite(sherd, design, cfg, design_id=Path(a.design).stem)
        _emit(res.to_dict(), a.out)
        if a.overlay:
            save_rgb(render_overlay(DesignRecord(Path(a.design).stem, design), res, sherd), a.overlay)
        return EXIT_OK if res.score > 0 else EXIT_NO_MATCH
    value, detail = match_value(sherd, design, cfg, a.method)
    _emit({"method": a.method, "value": value, **detail}, a.out)
    if a.method == "image" and value <= 0:
        return EXIT_NO_MATCH
    return EXIT_OK


def cmd_rank(a) -> int:
    from .cli_io import load_manifest, read_pattern, render_overlay, save_rgb
    from .composite_match import match_composite
    from .eval_bench import ResultCache, rank_designs

    cfg = _search_cfg(a)
    sherd = read_pattern(a.sherd)
    corpus = load_manifest(a.db)
    cache = ResultCache(a.cache_dir) if a.cache_dir else None
    ranking = rank_designs(sherd, corpus.designs, cfg, a.method, cache)
    top = ranking[: max(1, a.top)]
    report = {
        "sherd": str(a.sherd),
        "method": a.method,
        "ranking": [{"rank": i + 1, "design_id": e.design_id, "value": e.value, "error": e.error}
                    for i, e in enumerate(ranking)],
        "top": [{"rank": i + 1, "design_id": e.design_id, "value": e.value, "detail": e.detail}
                for i, e in enumerate(top)],
    }
    if a.overlay_dir and a.method == "composite":
        out = Path(a.overlay_dir)
        out.mkdir(parents=True, exist_ok=True)
        by_id = {d.id: d for d in corpus.designs}
        for i, e in enumerate(top):
            if e.error:
                continue
            d = by_id[e.design_id]
            res = match_composite(sherd, d.point_set, cfg, design_id=d.id)
            save_rgb(render_overlay(d, res, sherd), out / f"rank{i + 1:02d}_{d.id}.png")
    _emit(report, a.out)
    best = ranking[0]
    if best.error or (a.method != "chamfer" and not best.value > 0):
        return EXIT_NO_MATCH
    return EXIT_OK


def cmd_evaluate(a) -> int:
    from .cli_io import load_manifest
    from .eval_bench import evaluate, plot_cmc_svg, write_results_csv

    cfg = _search_cfg(a)
    corpus = load_manifest(a.corpus)
    if not corpus.sherds:
        raise PatternError("corpus manifest lists no sherds")
    missing = [sid for sid, _, t in corpus.sherds if t is None]
    if missing:
        raise PatternError(f"sherd {missing[0]} has no ground-truth design id")
    report = evaluate(corpus.sherds, corpus.designs, cfg, a.method, a.jobs, a.cache_dir)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(report, out / "results.csv")
    for m, curve in report.curves.items():
        curve.to_csv(out / f"cmc_{m}.csv")
    plot_cmc_svg(report.curves, out / "cmc.svg")
    summary = {
        "sherds": len(corpus.sherds),
        "designs": len(corpus.designs),
        "config": cfg.to_dict(),
        "seconds": report.seconds,
        "rank1": {m: c.at(1) for m, c in report.curves.items()},
        "rank2": {m: c.at(min(2, len(c))) for m, c in report.curves.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    _emit(summary)
    return EXIT_OK


def cmd_synth(a) -> int:
    from .synth_gen import CorpusSpec, write_corpus

    if a.designs < 1 or a.sherds_per_design < 1 or not 0 <= a.composite_fraction <= 1:
        raise UsageError("designs and sherds-per-design must be >= 1, composite-fraction in [0, 1]")
    spec = CorpusSpec(seed=a.seed, n_designs=a.designs, sherds_per_design=a.sherds_per_design,
                      composite_fraction=a.composite_fraction)
    path = write_corpus(a.out, spec)
    print(str(path))
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "ingest": cmd_ingest,
    "match": cmd_match,
    "rank": cmd_rank,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            raise UsageError("a command is required (extract, ingest, match, rank, evaluate, synth)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PatternError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
