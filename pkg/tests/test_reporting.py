import csv

import numpy as np

from sadm import reporting
from sadm.bench import aggregate_scores
from sadm.canvas import RgbImage


def fake_report(n=6, seed=0):
    rng = np.random.default_rng(seed)
    cats = ["Food", "Nature", "Animal", "Material", "Landscape"]
    rows = [{
        "index": i, "characters": "abcd", "category": cats[i % len(cats)],
        "language": "en", "desk_class": i % 8, "reference": 0,
        "m_sim_int": float(rng.random()),
        "m_sim_ext": float(rng.random()),
        "style_consistency": float(rng.random()),
    } for i in range(n)]
    return {"seed": 0, "cases": rows, "skipped": [], "aggregates": aggregate_scores(rows)}


def test_json_and_csv_mirror(tmp_path):
    report = fake_report()
    jp, cp = tmp_path / "r.json", tmp_path / "r.csv"
    reporting.write_report_json(report, jp)
    reporting.write_report_csv(report, cp)

    import json
    back = json.loads(jp.read_text(encoding="utf-8"))
    assert back["aggregates"]["overall"]["n"] == len(report["cases"])

    rows = reporting.read_report_csv(cp)
    case_rows = [r for r in rows if r["row_type"] == "case"]
    assert len(case_rows) == len(report["cases"])
    # re-aggregate from the CSV and compare against the report to 1e-9
    for cat, stats in report["aggregates"]["by_category"].items():
        member = [r for r in case_rows if r["category"] == cat]
        for key in ("m_sim_int", "m_sim_ext", "style_consistency"):
            want = sum(float(r[key]) for r in member) / len(member)
            assert abs(stats[key] - want) < 1e-9
    overall_row = [r for r in rows if r["row_type"] == "overall"][0]
    for key in ("m_sim_int", "m_sim_ext", "style_consistency"):
        mean = sum(float(r[key]) for r in case_rows) / len(case_rows)
        assert abs(float(overall_row[key]) - mean) < 1e-9


def test_csv_deterministic_bytes(tmp_path):
    report = fake_report(seed=3)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    reporting.write_report_csv(report, a)
    reporting.write_report_csv(report, b)
    assert a.read_bytes() == b.read_bytes()


def test_figures_render(tmp_path):
    report = fake_report()
    fig_path = tmp_path / "cats.png"
    reporting.render_category_figure(report, fig_path)
    assert fig_path.stat().st_size > 0

    sweep_path = tmp_path / "sweep.png"
    reporting.render_strength_sweep_figure([0, 0.4, 0.8], [0.01, 0.02, 0.05], sweep_path)
    assert sweep_path.stat().st_size > 0

    rng = np.random.default_rng(1)
    imgs = [RgbImage(rng.random((16, 16, 3)).astype(np.float32)) for _ in range(5)]
    sheet = tmp_path / "sheet.png"
    reporting.render_contact_sheet(imgs, sheet, labels=["a", "b", "c", "d", "e"])
    assert sheet.stat().st_size > 0


def test_empty_report_figure(tmp_path):
    report = {"cases": [], "skipped": [], "aggregates": aggregate_scores([])}
    p = tmp_path / "empty.png"
    reporting.render_category_figure(report, p)
    assert p.stat().st_size > 0
