import json

import numpy as np
import pytest

from sadm.bench import (
    FULL_SUITE_LANGUAGE_COUNTS,
    FULL_SUITE_SIZE,
    BenchmarkCase,
    BenchmarkSuite,
    aggregate_scores,
    load_suite,
    mask_filename,
    resolve_masks,
    save_suite,
    shipped_suite,
)
from sadm.canvas import generate_canvas_mask, save_mask_png
from sadm.errors import BenchmarkFormatError, MaskResolutionError


def test_shipped_suite_counts():
    suite = shipped_suite()
    assert len(suite.cases) == FULL_SUITE_SIZE == 145
    assert suite.language_counts() == FULL_SUITE_LANGUAGE_COUNTS
    assert suite.is_full_suite()
    for case in suite.cases:
        assert len(set(case.characters)) == 4
    assert sum(1 for c in suite.cases if c.desk_class is not None) >= 20


def test_empty_suite_is_valid(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("[]", encoding="utf-8")
    suite = load_suite(p)
    assert suite.cases == ()
    assert not suite.is_full_suite()


def test_three_character_case_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps([{
        "characters": "abc", "font_type": "HOBO", "category": "Food",
        "prompt": "sushi", "language": "en",
    }]), encoding="utf-8")
    with pytest.raises(BenchmarkFormatError, match="case 0.*4 unique"):
        load_suite(p)


def test_duplicate_characters_and_bad_category_rejected(tmp_path):
    p = tmp_path / "bad2.json"
    p.write_text(json.dumps([{
        "characters": "aabc", "font_type": "HOBO", "category": "Fruit",
        "prompt": "x", "language": "en",
    }]), encoding="utf-8")
    with pytest.raises(BenchmarkFormatError, match="case 0"):
        load_suite(p)


def test_unknown_field_rejected(tmp_path):
    p = tmp_path / "bad3.json"
    p.write_text(json.dumps([{
        "characters": "abcd", "font_type": "HOBO", "category": "Food",
        "prompt": "x", "language": "en", "bogus": 1,
    }]), encoding="utf-8")
    with pytest.raises(BenchmarkFormatError, match="unknown fields"):
        load_suite(p)


def test_save_load_roundtrip(tmp_path):
    suite = shipped_suite()
    p = tmp_path / "copy.json"
    save_suite(suite, p)
    again = load_suite(p)
    assert again == suite


def test_resolve_masks_order_and_missing(tmp_path):
    case = BenchmarkCase(characters="abXy", font_type="TESTFONT", category="Food",
                         prompt="sushi", language="en", desk_class=1)
    font_dir = tmp_path / "TESTFONT"
    font_dir.mkdir()
    made = {}
    for i, ch in enumerate(case.characters):
        m = generate_canvas_mask(i, 64, 64, "glyphlike")
        save_mask_png(m, font_dir / mask_filename(ch))
        made[ch] = m
    masks = resolve_masks(case, tmp_path)
    assert len(masks) == 4
    for ch, got in zip(case.characters, masks):
        assert np.array_equal(got.data, made[ch].data)

    (font_dir / mask_filename("X")).unlink()
    with pytest.raises(MaskResolutionError, match="U\\+0058"):
        resolve_masks(case, tmp_path)


def test_resolve_masks_validates_pixels(tmp_path):
    from PIL import Image
    case = BenchmarkCase(characters="mnop", font_type="F", category="Food",
                         prompt="x", language="en")
    d = tmp_path / "F"
    d.mkdir()
    for ch in case.characters:
        m = generate_canvas_mask(1, 64, 64, "ellipse")
        save_mask_png(m, d / mask_filename(ch))
    bad = np.zeros((64, 64), dtype=np.uint8)
    bad[10, 12] = 99
    Image.fromarray(bad, mode="L").save(d / mask_filename("m"))
    from sadm.errors import ParameterError
    with pytest.raises(ParameterError, match="row=10, col=12"):
        resolve_masks(case, tmp_path)


def test_aggregates_are_exact_means():
    rng = np.random.default_rng(0)
    rows = []
    for i, cat in enumerate(["Food", "Food", "Nature", "Animal", "Nature"]):
        rows.append({
            "index": i, "category": cat,
            "m_sim_int": float(rng.random()),
            "m_sim_ext": float(rng.random()),
            "style_consistency": float(rng.random()),
        })
    agg = aggregate_scores(rows)
    # independent re-aggregation oracle
    for cat in ("Food", "Nature", "Animal"):
        member = [r for r in rows if r["category"] == cat]
        for key in ("m_sim_int", "m_sim_ext", "style_consistency"):
            want = sum(r[key] for r in member) / len(member)
            assert abs(agg["by_category"][cat][key] - want) < 1e-12
    for key in ("m_sim_int", "m_sim_ext", "style_consistency"):
        want = sum(r[key] for r in rows) / len(rows)
        assert abs(agg["overall"][key] - want) < 1e-12
    assert agg["overall"]["n"] == 5


def test_empty_aggregate():
    agg = aggregate_scores([])
    assert agg["overall"] == {"n": 0}
    assert agg["by_category"] == {}


def test_suite_type_equality_via_json(tmp_path):
    # round-trip preserves every field byte-for-byte at the JSON level
    suite = BenchmarkSuite((BenchmarkCase(
        characters="wxyz", font_type="HOBO", category="Nature",
        prompt="mossy rocks", language="en", desk_class=4), ))
    p = tmp_path / "s.json"
    save_suite(suite, p)
    text1 = p.read_text(encoding="utf-8")
    save_suite(load_suite(p), p)
    assert p.read_text(encoding="utf-8") == text1
