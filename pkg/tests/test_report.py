"""Report artifacts: schemas, byte determinism, figures."""

import csv
import json
import math

from offbandit.report import write_report

EXPECTED_FILES = {
    "methods.csv", "restarts.csv", "beta.csv", "m_sweep.csv", "box_samples.csv",
    "summary.json", "timing.txt",
    "fig_restarts.png", "fig_beta.png", "fig_methods.png", "fig_m_sweep.png",
}


def _read_csv(path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_write_report_produces_every_artifact(tiny_result, tmp_path):
    written = write_report(tiny_result, tmp_path / "out")
    assert {p.name for p in written} == EXPECTED_FILES
    for p in written:
        assert p.stat().st_size > 0


def test_csv_headers_are_stable(tiny_result, tmp_path):
    out = tmp_path / "out"
    write_report(tiny_result, out)
    header, rows = _read_csv(out / "methods.csv")
    assert header == ["method", "predicted_mean_tp", "predicted_std_tp",
                      "true_mean_tp", "true_se", "mean_sigma", "iterations_total"]
    assert len(rows) == len(tiny_result.reports)
    header, rows = _read_csv(out / "restarts.csv")
    assert header == ["restarts", "predicted_mean_tp", "predicted_std_tp",
                      "true_mean_tp", "true_se", "mean_sigma", "iterations_total"]
    assert [int(r[0]) for r in rows] == [1, 3]
    header, rows = _read_csv(out / "beta.csv")
    assert header == ["beta", "mean_mu", "mean_sigma", "true_mean_tp", "true_se"]
    assert [float(r[0]) for r in rows] == [0.0, 1.0]
    header, rows = _read_csv(out / "m_sweep.csv")
    assert header == ["m", "estimate", "standard_error"]
    assert [r[0] for r in rows] == ["1.0", "10.0", "inf"]


def test_box_samples_cover_methods_by_context(tiny_result, tmp_path):
    out = tmp_path / "out"
    write_report(tiny_result, out)
    header, rows = _read_csv(out / "box_samples.csv")
    assert header == ["method", "context_index", "predicted_value", "true_value"]
    n = tiny_result.config.heldout
    assert len(rows) == len(tiny_result.reports) * n
    hybrid_rows = [r for r in rows if r[0] == "hybrid"]
    assert [int(r[1]) for r in hybrid_rows] == list(range(n))
    rep = tiny_result.report("hybrid")
    assert [float(r[2]) for r in hybrid_rows] == list(rep.predicted_values)
    assert [float(r[3]) for r in hybrid_rows] == list(rep.true_values)


def test_csv_and_json_byte_deterministic(tiny_result, tmp_path):
    write_report(tiny_result, tmp_path / "a")
    write_report(tiny_result, tmp_path / "b")
    for name in sorted(EXPECTED_FILES):
        if not (name.endswith(".csv") or name.endswith(".json")):
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_summary_json_loads_clean(tiny_result, tmp_path):
    out = tmp_path / "out"
    write_report(tiny_result, out)
    doc = json.loads((out / "summary.json").read_text())
    assert doc == tiny_result.summary
    assert not math.isinf(doc["checks"]["dm_vs_logging_true_ratio"])


def test_timing_txt_structure(tiny_result, tmp_path):
    out = tmp_path / "out"
    write_report(tiny_result, out)
    lines = [l for l in (out / "timing.txt").read_text().splitlines()
             if l and not l.startswith("#")]
    assert lines[0] == "section\tname\tseconds"
    sections = {line.split("\t")[0] for line in lines[1:]}
    assert sections == {"per_context_median", "stage"}
    names = {line.split("\t")[1] for line in lines[1:] if line.startswith("per_context_median")}
    assert "hybrid" in names and "DM-3-restarts" in names


def test_figures_are_png(tiny_result, tmp_path):
    out = tmp_path / "out"
    write_report(tiny_result, out)
    for name in EXPECTED_FILES:
        if name.endswith(".png"):
            assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n", name
