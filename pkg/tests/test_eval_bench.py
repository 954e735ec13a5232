import csv
import math

import numpy as np
import pytest

from sherdmatch import eval_bench
from sherdmatch.chamfer_match import SearchConfig
from sherdmatch.eval_bench import (
    CmcCurve,
    DesignRecord,
    RankEntry,
    ResultCache,
    cmc_curve,
    cmc_from_results_csv,
    evaluate,
    plot_cmc_svg,
    rank_designs,
    sort_ranking,
    write_results_csv,
)
from sherdmatch.pattern_core import PatternError, PointSet
from sherdmatch.synth_gen import generate_design, generate_sherd, random_truth

CFG = SearchConfig(theta_step=10, translation_step=2)


@pytest.fixture(scope="module")
def small_db():
    designs = [generate_design(40 + i, size=120, design_id=f"D{i}") for i in range(3)]
    rng = np.random.default_rng(0)
    sherds = []
    for d in designs:
        truth = random_truth(d, rng, stamps=1, sherd_size=70, radius=(25, 32), min_points=60,
                             theta_step=10, translation_step=2)
        ps, _ = generate_sherd(d, truth)
        sherds.append((f"{d.id}_S0", ps, d.id))
    return designs, sherds


def test_cmc_examples():
    assert cmc_curve([["a", "b"], ["b", "a"]], ["a", "b"]).accuracy_at_rank == (1.0, 1.0)
    curve = cmc_curve([["x", "y", "t", "u", "v"]], ["t"])
    assert curve.accuracy_at_rank == (0.0, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(PatternError, match="sherd 1"):
        cmc_curve([["a"], ["b"]], ["a", "c"])


def test_cmc_curve_validation(tmp_path):
    with pytest.raises(ValueError):
        CmcCurve((0.5, 0.4))
    c = CmcCurve((0.25, 0.5, 1.0))
    c.to_csv(tmp_path / "c.csv")
    assert CmcCurve.from_csv(tmp_path / "c.csv") == c
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["L", "accuracy"] and len(rows) == 4


def test_sort_ranking_order_and_errors():
    entries = [RankEntry("b", 0.5), RankEntry("a", 0.5), RankEntry("c", math.nan, "boom"), RankEntry("d", 0.9)]
    assert [e.design_id for e in sort_ranking(entries, "composite")] == ["d", "a", "b", "c"]
    assert [e.design_id for e in sort_ranking(entries, "chamfer")] == ["a", "b", "d", "c"]


def test_rank_single_design(small_db):
    designs, sherds = small_db
    r = rank_designs(sherds[0][1], designs[:1], CFG)
    assert [e.design_id for e in r] == ["D0"]
    with pytest.raises(PatternError):
        rank_designs(sherds[0][1], [], CFG)


def test_identical_designs_adjacent(small_db):
    designs, sherds = small_db
    twin = DesignRecord("D0b", designs[0].point_set)
    for method in ("composite", "chamfer", "image"):
        r = rank_designs(sherds[0][1], [designs[1], twin, designs[0]], CFG, method)
        ids = [e.design_id for e in r]
        assert ids.index("D0b") == ids.index("D0") + 1
        assert r[ids.index("D0")].value == r[ids.index("D0b")].value


def _warped(ps: PointSet, rng, amp=5.0, wavelength=30.0) -> PointSet:
    """Smoothly bent copy of a design: same strokes, different geometry."""
    from scipy import ndimage

    from sherdmatch.curve_extract import thin

    p = ps.points.astype(float)
    ph = rng.uniform(0, 2 * np.pi, 4)
    k = 2 * np.pi / wavelength
    dx = amp * np.sin(k * p[:, 1] + ph[0]) * np.cos(k * p[:, 0] + ph[1])
    dy = amp * np.sin(k * p[:, 0] + ph[2]) * np.cos(k * p[:, 1] + ph[3])
    q = np.clip(np.round(p + np.column_stack([dx, dy])).astype(int), 0, ps.width - 1)
    m = np.zeros((ps.height, ps.width), dtype=bool)
    m[q[:, 1], q[:, 0]] = True
    return PointSet.from_mask(thin(ndimage.binary_closing(m, np.ones((3, 3))) | m))


def test_source_beats_perturbed_decoys(small_db):
    designs, sherds = small_db
    rng = np.random.default_rng(3)
    for (sid, ps, truth), src in zip(sherds, designs):
        decoys = [DesignRecord(f"X{k}", _warped(src.point_set, rng)) for k in range(3)]
        assert rank_designs(ps, decoys + [src], CFG)[0].design_id == truth


def test_failing_design_ranked_last(small_db, monkeypatch):
    designs, sherds = small_db
    real = eval_bench.match_value

    def flaky(sherd, design, cfg, method, dmap=None):
        if design is designs[1].point_set:
            raise PatternError("broken design")
        return real(sherd, design, cfg, method, dmap)

    monkeypatch.setattr(eval_bench, "match_value", flaky)
    r = rank_designs(sherds[0][1], designs, CFG)
    assert r[-1].design_id == "D1" and r[-1].error == "broken design"


def test_duplicate_ids_rejected(small_db):
    designs, sherds = small_db
    with pytest.raises(PatternError):
        rank_designs(sherds[0][1], [designs[0], DesignRecord("D0", designs[1].point_set)], CFG)
    with pytest.raises(PatternError):
        DesignRecord("", designs[0].point_set)


def test_rankings_invariant_to_db_order(small_db):
    designs, sherds = small_db
    a = rank_designs(sherds[1][1], designs, CFG)
    b = rank_designs(sherds[1][1], designs[::-1], CFG)
    assert [(e.design_id, e.value) for e in a] == [(e.design_id, e.value) for e in b]


def test_evaluate_and_recount(small_db, tmp_path):
    designs, sherds = small_db
    rep = evaluate(sherds, designs, CFG, cache_dir=tmp_path / "cache")
    for m, curve in rep.curves.items():
        assert len(curve) == len(designs) and curve.accuracy_at_rank[-1] == 1.0
        assert all(b >= a for a, b in zip(curve.accuracy_at_rank, curve.accuracy_at_rank[1:]))
    assert rep.curves["composite"].at(1) == 1.0
    write_results_csv(rep, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert set(rows[0]) == {"sherd_id", "design_id", "method", "score", "rank"}
    assert len(rows) == 3 * len(sherds) * len(designs)
    for m in rep.methods:
        assert cmc_from_results_csv(tmp_path / "r.csv", m, rep.truths) == rep.curves[m]
    # a second run is served from the cache and agrees exactly
    again = evaluate(sherds, designs, CFG, cache_dir=tmp_path / "cache")
    assert again.curves == rep.curves
    assert {sid: [e.value for e in r] for sid, r in again.rankings["chamfer"].items()} == {
        sid: [e.value for e in r] for sid, r in rep.rankings["chamfer"].items()
    }
    plot_cmc_svg(rep.curves, tmp_path / "cmc.svg")
    assert (tmp_path / "cmc.svg").read_text().lstrip().startswith("<?xml")


def test_cache_key_depends_on_inputs(small_db, tmp_path):
    designs, sherds = small_db
    ps = sherds[0][1]
    k = ResultCache.key(ps, designs[0], CFG, "composite")
    assert k == ResultCache.key(ps, designs[0], CFG, "composite")
    assert k != ResultCache.key(ps, designs[1], CFG, "composite")
    assert k != ResultCache.key(ps, designs[0], CFG.replace(alpha=2.0), "composite")
    assert k != ResultCache.key(ps, designs[0], CFG, "image")
    cache = ResultCache(tmp_path)
    assert cache.get(k) is None
    cache.put(k, {"value": 1.0})
    assert cache.get(k) == {"value": 1.0}


def test_n_jobs_invariant(small_db):
    designs, sherds = small_db
    a = evaluate(sherds[:2], designs, CFG, methods=("chamfer",), n_jobs=1)
    b = evaluate(sherds[:2], designs, CFG, methods=("chamfer",), n_jobs=2)
    assert a.curves == b.curves
    assert [e.value for e in a.rankings["chamfer"]["D0_S0"]] == [e.value for e in b.rankings["chamfer"]["D0_S0"]]


def test_unknown_method(small_db):
    designs, sherds = small_db
    with pytest.raises(ValueError):
        evaluate(sherds, designs, CFG, methods=("hoosc",))
