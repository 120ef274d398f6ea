import math
import statistics
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpeval.errors import ConfigError, MatcherError, ParseError, ScoreImportError, ScoreLookupError
from fpeval.matcher import (
    BuiltinMatcher,
    BuiltinParams,
    ExternalMatcher,
    PrecomputedMatcher,
    ScoreCache,
    SymmetrizedMatcher,
    check_symmetry,
    compare,
    compute_score_matrix,
    import_score_matrix,
    matcher_from_spec,
)
from fpeval.protocols import genuine_pairs, random_impostor_pairs
from fpeval.records import ComparisonPair, write_score_matrix
from fpeval.synth import SynthParams, pad_template, rigid_transform, synth_database, synth_impression, synth_template
from fpeval.templates import Minutia, MinutiaeTemplate, TemplateKey, TemplateStore


def _exact_pairing_count(probe, gallery, dx, dy, dtheta, r=12.0, th=20.0):
    """Reference: pair under a known transform (rotation about probe image centre)."""
    cx, cy = probe.width / 2, probe.height / 2
    c, s = math.cos(math.radians(dtheta)), math.sin(math.radians(dtheta))
    used, p = set(), 0
    for mt in probe.minutiae:
        x = cx + c * (mt.x - cx) - s * (mt.y - cy) + dx
        y = cy + s * (mt.x - cx) + c * (mt.y - cy) + dy
        a = (mt.angle + dtheta) % 360
        best = None
        for j, g in enumerate(gallery.minutiae):
            d = math.hypot(x - g.x, y - g.y)
            ad = abs((a - g.angle + 180) % 360 - 180)
            if j not in used and d <= r and ad <= th and (best is None or d < best[0]):
                best = (d, j)
        if best:
            used.add(best[1])
            p += 1
    return p


def test_self_comparison_is_100(builtin, params):
    for seed in range(20):
        tpl = synth_template(params, seed)
        assert compare(builtin, tpl, tpl) == 100.0


def test_rigid_transform_example(builtin, params):
    tpl = pad_template(synth_template(params, 11), 100)
    moved = rigid_transform(tpl, 10, -5, 15)
    # oracle: the exact transform pairs every minutia
    assert _exact_pairing_count(tpl, moved, 10, -5, 15) == len(tpl)
    assert compare(builtin, tpl, moved) == pytest.approx(100.0)


def test_impostor_below_genuine_median(builtin, params):
    genuine, impostor = [], []
    for s in range(100):
        base = synth_template(params, 7000 + s)
        genuine.append(compare(builtin, synth_impression(base, params, [s, 1]), synth_impression(base, params, [s, 2])))
        other = synth_template(params, 9000 + s)
        impostor.append(compare(builtin, synth_impression(base, params, [s, 3]), synth_impression(other, params, [s, 4])))
    median = statistics.median(genuine)
    assert max(impostor) < median


def test_fewer_than_four_minutiae_scores_zero(builtin):
    tpl = MinutiaeTemplate("1", 1, (Minutia(1, 1, 0), Minutia(20, 20, 90), Minutia(40, 5, 180)))
    assert compare(builtin, tpl, tpl) == 0.0


def test_empty_template_rejected(builtin):
    tpl = MinutiaeTemplate("1", 1, ())
    with pytest.raises(MatcherError):
        compare(builtin, tpl, tpl)


def test_params_validated():
    with pytest.raises(ConfigError):
        BuiltinParams(bin_theta=7)
    with pytest.raises(ConfigError):
        BuiltinParams(r_pair=0)


def test_quality_weighting_changes_score(params):
    base = synth_template(params, 5)
    imp = synth_impression(base, params, 5)
    plain = compare(BuiltinMatcher(), base, imp)
    weighted = compare(BuiltinMatcher(BuiltinParams(quality_weighted=True)), base, imp)
    assert 0 < weighted < plain


def test_fingerprint_tracks_parameters():
    assert BuiltinMatcher().fingerprint == BuiltinMatcher(BuiltinParams()).fingerprint
    assert BuiltinMatcher().fingerprint != BuiltinMatcher(BuiltinParams(r_pair=10)).fingerprint


templates = st.lists(
    st.tuples(st.integers(0, 387), st.integers(0, 373), st.integers(0, 359)), min_size=1, max_size=30, unique_by=lambda t: t[:2]
).map(lambda rows: MinutiaeTemplate("1", 1, tuple(Minutia(x, y, a) for x, y, a in rows), 388, 374))


@settings(max_examples=60, deadline=None)
@given(templates, templates)
def test_score_bounds_and_determinism(p, g):
    m = BuiltinMatcher()
    s = compare(m, p, g)
    assert 0.0 <= s <= 100.0
    assert compare(m, p, g) == s
    assert compare(m, p, p) >= s or len(p) < 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(-30, 30), st.floats(-40, 40), st.floats(-40, 40))
def test_rigid_motion_robustness(seed, dtheta, dx, dy):
    tpl = pad_template(synth_template(SynthParams(), seed), 150)
    assert compare(BuiltinMatcher(), tpl, rigid_transform(tpl, dx, dy, dtheta)) >= 95


def _store(params, n=6, m=3, name="db"):
    manifest, tpls = synth_database(params, n, m, name=name)
    return manifest, TemplateStore([manifest], tpls)


def test_score_matrix_counts_and_order(builtin, params):
    manifest, store = _store(params, 100, 8)
    pairs = genuine_pairs(manifest)
    records = compute_score_matrix(builtin, pairs, store)
    assert len(records) == 2800
    assert [(r.probe, r.gallery) for r in records] == [(p.probe, p.gallery) for p in pairs]
    assert all(r.label == "genuine" for r in records)


def test_empty_batch(builtin, params):
    _, store = _store(params, 2, 2)
    assert compute_score_matrix(builtin, [], store) == []


def test_rerun_served_from_cache(builtin, params):
    manifest, store = _store(params)
    cache = ScoreCache()
    pairs = random_impostor_pairs(manifest, 2)
    first = compute_score_matrix(builtin, pairs, store, cache)
    assert cache.misses == len(pairs)
    cache.misses = 0
    second = compute_score_matrix(builtin, pairs, store, cache)
    assert cache.misses == 0 and cache.hits >= len(pairs)
    assert first == second


def test_cache_keyed_by_fingerprint(params):
    manifest, store = _store(params)
    cache = ScoreCache()
    pairs = genuine_pairs(manifest)
    compute_score_matrix(BuiltinMatcher(), pairs, store, cache)
    cache.misses = 0
    compute_score_matrix(BuiltinMatcher(BuiltinParams(r_pair=8)), pairs, store, cache)
    assert cache.misses == len(pairs)


def test_cache_persistence(tmp_path, builtin, params):
    manifest, store = _store(params)
    cache = ScoreCache()
    pairs = genuine_pairs(manifest)
    records = compute_score_matrix(builtin, pairs, store, cache)
    cache.save(tmp_path, builtin.fingerprint)
    fresh = ScoreCache()
    assert fresh.load(tmp_path, builtin.fingerprint) == len(pairs)
    assert compute_score_matrix(builtin, pairs, store, fresh) == records
    assert fresh.misses == 0


@pytest.mark.parametrize("workers", [4, 8])
def test_worker_count_does_not_change_scores(builtin, params, workers):
    manifest, store = _store(params, 8, 4)
    pairs = random_impostor_pairs(manifest, 2)
    serial = compute_score_matrix(builtin, pairs, store, workers=1)
    parallel = compute_score_matrix(builtin, pairs, store, workers=workers)
    assert serial == parallel


def test_batch_error_names_pair_and_keeps_partial_cache():
    k = [TemplateKey("db", i, 1) for i in range(1, 5)]
    matcher = PrecomputedMatcher({(k[0], k[1]): 1.0, (k[0], k[2]): 2.0})
    pairs = [ComparisonPair(k[0], k[1]), ComparisonPair(k[0], k[3]), ComparisonPair(k[0], k[2])]
    cache = ScoreCache()
    with pytest.raises(ScoreLookupError) as exc:
        compute_score_matrix(matcher, pairs, TemplateStore(), cache)
    assert exc.value.pair == pairs[1]
    assert "db:1_1 -> db:4_1" in str(exc.value)
    assert cache.get(matcher.fingerprint, k[0], k[1]) == 1.0


def test_builtin_is_asymmetric_in_general(builtin, params):
    manifest, store = _store(params, 10, 2)
    sample = random_impostor_pairs(manifest, 1)[:10]
    report = check_symmetry(builtin, sample, store, 0.0)
    # oracle: evaluate both directions directly
    direct = [abs(compare(builtin, store[p.probe], store[p.gallery]) - compare(builtin, store[p.gallery], store[p.probe])) for p in sample]
    assert [d for _, _, d in report.deviations] == direct
    assert max(direct) > 0
    assert report.symmetric is False


def test_symmetrized_matcher_is_symmetric(builtin, params):
    manifest, store = _store(params, 10, 2)
    sample = random_impostor_pairs(manifest, 1)[:10]
    report = check_symmetry(SymmetrizedMatcher(builtin), sample, store, 0.0)
    assert report.symmetric is True and report.max_deviation == 0


def test_one_directional_matrix_symmetry_unknown():
    a, b = TemplateKey("db", 1, 1), TemplateKey("db", 2, 1)
    report = check_symmetry(PrecomputedMatcher({(a, b): 3.0}), [ComparisonPair(a, b)], TemplateStore())
    assert report.symmetric is None
    assert "symmetry unknown" in report.reason


def test_symmetry_needs_pairs(builtin):
    with pytest.raises(ConfigError):
        check_symmetry(builtin, [], TemplateStore())


def test_import_4950_rows(tmp_path):
    keys = [TemplateKey("fvc", i, 1) for i in range(1, 101)]
    rows = [(keys[i], keys[x], float(i + x)) for i in range(100) for x in range(i + 1, 100)]
    write_score_matrix(rows, tmp_path / "m.csv")
    matcher = import_score_matrix(tmp_path / "m.csv")
    assert len(matcher) == 4950
    assert all(matcher.lookup(p, g) == s for p, g, s in rows)
    with pytest.raises(ScoreLookupError):
        matcher.lookup(keys[1], keys[0])


HEADER = "probe_db,probe_finger,probe_impression,gallery_db,gallery_finger,gallery_impression,score\n"


def test_import_non_numeric_score(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a,1,1,a,2,1,5\na,1,1,a,3,1,abc\n")
    with pytest.raises(ParseError) as exc:
        import_score_matrix(tmp_path / "m.csv")
    assert exc.value.line == 3


def test_import_duplicates(tmp_path):
    (tmp_path / "ok.csv").write_text(HEADER + "a,1,1,a,2,1,5\na,1,1,a,2,1,5.0\n")
    assert len(import_score_matrix(tmp_path / "ok.csv")) == 1
    (tmp_path / "bad.csv").write_text(HEADER + "a,1,1,a,2,1,5\na,1,1,a,2,1,6\n")
    with pytest.raises(ScoreImportError):
        import_score_matrix(tmp_path / "bad.csv")


def test_import_wrong_columns(tmp_path):
    (tmp_path / "m.csv").write_text("probe,gallery,score\n")
    with pytest.raises(ParseError):
        import_score_matrix(tmp_path / "m.csv")


def test_precomputed_compare_by_template_key():
    tpl_a = MinutiaeTemplate("1", 1, (Minutia(1, 1, 1),), source_db="db")
    tpl_b = MinutiaeTemplate("2", 1, (Minutia(1, 1, 1),), source_db="db")
    m = PrecomputedMatcher({(tpl_a.key, tpl_b.key): 42.0})
    assert compare(m, tpl_a, tpl_b) == 42.0


@pytest.fixture
def script(tmp_path):
    path = tmp_path / "ext.py"
    path.write_text(
        "import sys\n"
        "p, g = sys.argv[1], sys.argv[2]\n"
        "n = lambda f: len([l for l in open(f) if l.strip()])\n"
        "if 'fail' in p: sys.exit(3)\n"
        "print('junk' if 'junk' in p else n(p) * 10 + n(g))\n"
    )
    return path


def _ext(script):
    return ExternalMatcher(f"{sys.executable} {script} {{probe}} {{gallery}}", timeout=30)


def test_external_matcher(tmp_path, script):
    (tmp_path / "a.xyt").write_text("1 1 1\n2 2 2\n")
    (tmp_path / "b.xyt").write_text("1 1 1\n")
    m = _ext(script)
    assert m.run(tmp_path / "a.xyt", tmp_path / "b.xyt") == 21.0
    tpl = MinutiaeTemplate("1", 1, (Minutia(1, 1, 1), Minutia(3, 3, 3), Minutia(5, 5, 5)))
    assert compare(m, tpl, tpl) == 33.0


def test_external_matcher_batch_order(tmp_path, script, params):
    manifest, tpls = synth_database(params, 3, 2, tmp_path / "db", name="db")
    store = TemplateStore([manifest])
    pairs = random_impostor_pairs(manifest, 2)
    records = compute_score_matrix(_ext(script), pairs, store, workers=3)
    expected = [len(store[p.probe]) * 10 + len(store[p.gallery]) for p in pairs]
    assert [r.score for r in records] == expected


@pytest.mark.parametrize("name, needle", [("fail.xyt", "status 3"), ("junk.xyt", "non-numeric")])
def test_external_matcher_errors(tmp_path, script, name, needle):
    (tmp_path / name).write_text("1 1 1\n")
    with pytest.raises(MatcherError, match=needle) as exc:
        _ext(script).run(tmp_path / name, tmp_path / name)
    assert exc.value.transcript["argv"][-1].endswith(name)


def test_external_needs_placeholders():
    with pytest.raises(ConfigError):
        ExternalMatcher("match {probe}")


def test_matcher_from_spec(tmp_path):
    assert isinstance(matcher_from_spec({"kind": "builtin", "params": {"r_pair": 10}}), BuiltinMatcher)
    (tmp_path / "m.csv").write_text(HEADER + "a,1,1,a,2,1,5\n")
    m = matcher_from_spec({"kind": "precomputed", "csv": "m.csv", "symmetrize": True}, tmp_path)
    assert isinstance(m, SymmetrizedMatcher)
    with pytest.raises(ConfigError):
        matcher_from_spec({"kind": "neural"})


def test_kernel_handles_wraparound_angles(builtin):
    rng = np.random.default_rng(3)
    pts = list(dict.fromkeys((int(x), int(y)) for x, y in rng.integers(100, 300, (30, 2))))
    tpl = MinutiaeTemplate("1", 1, tuple(Minutia(x, y, 358 if k % 2 else 1) for k, (x, y) in enumerate(pts)), 400, 400)
    for dtheta in (-2, 2):
        moved = rigid_transform(tpl, 4, -6, dtheta)
        assert {mt.angle for mt in moved.minutiae} & {0, 359}
        assert compare(builtin, tpl, moved) == 100.0
