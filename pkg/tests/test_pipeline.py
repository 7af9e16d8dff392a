"""Manifest-driven cohort analysis and report emission."""

import csv
import json
import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from octaquant.config import config_from_mapping
from octaquant.imaging import save_grayscale
from octaquant.pipeline import (
    GROUPS,
    emit_report,
    parse_manifest,
    run_cohort,
)
from octaquant.stats import summarize, welch_ttest
from phantoms import stroke_image


def _write_cohort(root, specs, identical=True):
    """Write PNG pairs plus a manifest; specs = (pid, group, res, seed)."""
    rows = ["patient_id,group,resolution,tr_path,gt_path"]
    for pid, group, res, seed in specs:
        img = stroke_image(seed)
        tr, gt = f"{pid}_{res}_tr.png", f"{pid}_{res}_gt.png"
        save_grayscale(str(root / tr), img)
        gt_img = img if identical else np.clip(img * 0.9 + 0.03, 0.0, 1.0)
        save_grayscale(str(root / gt), gt_img)
        rows.append(f"{pid},{group},{res},{tr},{gt}")
    path = root / "manifest.csv"
    path.write_text("\n".join(rows) + "\n")
    return str(path)


def _run(entries, **kwargs):
    # small cohorts legitimately trigger the covariance sample-size warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_cohort(entries, **kwargs)


IDENTITY_SPECS = [
    ("p01", "AMD", "mm3", 1),
    ("p02", "AMD", "mm3", 2),
    ("p03", "Normal", "mm3", 3),
    ("p04", "Normal", "mm3", 4),
    ("p05", "DR", "mm6", 5),
    ("p06", "DR", "mm6", 6),
    ("p07", "Normal", "mm6", 7),
    ("p08", "Normal", "mm6", 8),
]


# ----------------------------------------------------------- parse_manifest


def test_parse_manifest_resolves_paths(tmp_path):
    m = _write_cohort(tmp_path, [("p01", "AMD", "mm3", 1)])
    entries = parse_manifest(m)
    assert len(entries) == 1
    e = entries[0]
    assert e.patient_id == "p01" and e.group == "AMD" and e.resolution == "mm3"
    assert os.path.isabs(e.tr_path) and os.path.isfile(e.tr_path)
    assert e.tr_ref == "p01_mm3_tr.png"  # manifest-relative id preserved
    assert e.tr_path != e.gt_path


def test_parse_manifest_accepts_every_group_label(tmp_path):
    rows = ["patient_id,group,resolution,tr_path,gt_path"]
    for i, group in enumerate(GROUPS):
        for res in ("mm3", "mm6"):
            rows.append(f"p{i:02d},{group},{res},a_{i}_{res}.png,b_{i}_{res}.png")
    path = tmp_path / "m.csv"
    path.write_text("\n".join(rows) + "\n\n")  # trailing blank line is fine
    entries = parse_manifest(str(path))
    assert len(entries) == 2 * len(GROUPS)
    assert {e.group for e in entries} == set(GROUPS)


@pytest.mark.parametrize(
    "body,pattern",
    [
        ("id,group,resolution,tr_path,gt_path\n", "expected header"),
        ("patient_id,group,resolution,tr_path,gt_path\np,AMD,mm3,a.png\n", "expected 5 columns"),
        ("patient_id,group,resolution,tr_path,gt_path\n,AMD,mm3,a.png,b.png\n", "empty patient_id"),
        ("patient_id,group,resolution,tr_path,gt_path\np,XXX,mm3,a.png,b.png\n", "unknown group"),
        ("patient_id,group,resolution,tr_path,gt_path\np,AMD,9mm,a.png,b.png\n", "unknown resolution"),
        ("patient_id,group,resolution,tr_path,gt_path\np,AMD,mm3,,b.png\n", "empty image path"),
        ("patient_id,group,resolution,tr_path,gt_path\np,AMD,mm3,a.png,a.png\n", "must differ"),
        (
            "patient_id,group,resolution,tr_path,gt_path\n"
            "p,AMD,mm3,a.png,b.png\np,AMD,mm3,c.png,d.png\n",
            "duplicate",
        ),
    ],
)
def test_parse_manifest_rejects_bad_rows(tmp_path, body, pattern):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=pattern):
        parse_manifest(str(path))


def test_parse_manifest_missing_file():
    with pytest.raises(ValueError, match="unreadable file"):
        parse_manifest("/nonexistent/m.csv")


def test_parse_manifest_same_patient_both_resolutions_ok(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "patient_id,group,resolution,tr_path,gt_path\n"
        "p,AMD,mm3,a.png,b.png\n"
        "p,AMD,mm6,c.png,d.png\n"
    )
    assert len(parse_manifest(str(path))) == 2


# -------------------------------------------------------------- run_cohort


@pytest.fixture(scope="module")
def identity_report(tmp_path_factory):
    root = tmp_path_factory.mktemp("identity")
    manifest = _write_cohort(root, IDENTITY_SPECS)
    entries = parse_manifest(manifest)
    return _run(entries), entries


def test_identity_cohort_perfect_scores(identity_report):
    report, entries = identity_report
    assert len(report.results) == len(entries)
    assert report.errors == []
    for r in report.results:
        assert r.scores.ssim == 1.0
        assert r.scores.pcqi == 1.0
        assert r.tr == r.gt


def test_identity_cohort_degenerate_statistics(identity_report):
    report, _ = identity_report
    for res, res_block in report.resolutions.items():
        for group, block in res_block["groups"].items():
            for feature, fblock in block["features"].items():
                assert fblock["tr"] == fblock["gt"]
                t = fblock["ttest"]
                assert t is not None, (res, group, feature, fblock)
                assert t["t_statistic"] == 0.0
                assert t["p_value"] == 1.0
                assert t["significant_at_05"] is False
        q = report.quality[res]
        assert q["fid"] == pytest.approx(0.0, abs=1e-9)
        assert q["ssim"]["mean"] == 1.0 and q["ssim"]["std"] == 0.0
        assert q["pcqi"]["mean"] == 1.0


def test_identity_cohort_group_structure(identity_report):
    report, _ = identity_report
    mm3 = report.resolutions["mm3"]["groups"]
    assert list(mm3) == ["Complete", "AMD", "Normal"]
    assert mm3["Complete"]["n"] == 4
    assert mm3["AMD"]["n"] == 2
    mm6 = report.resolutions["mm6"]["groups"]
    assert list(mm6) == ["Complete", "DR", "Normal"]
    assert report.quality["mm3"]["n_pairs"] == 4
    assert report.quality["mm6"]["n_pairs"] == 4
    assert report.quality["mm3"]["fid_embedding"] == "builtin"


def test_reruns_and_parallelism_are_byte_identical(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS, identical=False)
    entries = parse_manifest(manifest)
    out = {}
    for label, jobs in (("a", 1), ("b", 1), ("c", 4)):
        report = _run(entries, jobs=jobs)
        out_dir = tmp_path / f"out_{label}"
        paths = emit_report(report, out_dir=str(out_dir))
        assert [os.path.basename(p) for p in paths] == [
            "rows.csv", "summary.json", "quality.json", "boxplots.json",
        ]
        out[label] = {os.path.basename(p): Path(p).read_bytes() for p in paths}
    assert out["a"] == out["b"]  # rerun stability
    assert out["a"] == out["c"]  # jobs-count independence


def test_corrupt_entry_is_quarantined(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    (tmp_path / "p02_mm3_gt.png").write_bytes(b"not a png at all")
    entries = parse_manifest(manifest)
    report = _run(entries)
    assert len(report.results) == 2
    assert len(report.errors) == 1
    err = report.errors[0]
    assert err.patient_id == "p02"
    assert err.message.startswith("load:")
    assert "unreadable file" in err.message


def test_blank_image_is_quarantined_with_stage(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    save_grayscale(str(tmp_path / "p03_mm3_tr.png"), np.full((64, 64), 0.2))
    report = _run(parse_manifest(manifest))
    assert len(report.results) == 2
    assert len(report.errors) == 1
    assert "empty vasculature" in report.errors[0].message


def test_missing_file_aborts_unless_skipped(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    os.remove(tmp_path / "p01_mm3_tr.png")
    entries = parse_manifest(manifest)
    with pytest.raises(ValueError, match="missing input file"):
        _run(entries)
    report = _run(entries, skip_missing=True)
    assert len(report.results) == 2
    assert len(report.errors) == 1
    assert "missing input file" in report.errors[0].message


def test_empty_eligible_cohort_aborts(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:2])
    os.remove(tmp_path / "p01_mm3_tr.png")
    os.remove(tmp_path / "p02_mm3_tr.png")
    entries = parse_manifest(manifest)
    with pytest.raises(ValueError, match="empty eligible cohort"):
        _run(entries, skip_missing=True)


# ------------------------------------------------------------- emit_report


def test_emit_selected_formats(tmp_path, identity_report):
    report, _ = identity_report
    paths = emit_report(report, formats=["rows"], out_dir=str(tmp_path / "r"))
    assert [os.path.basename(p) for p in paths] == ["rows.csv"]
    assert not os.path.exists(tmp_path / "r" / "summary.json")
    with pytest.raises(ValueError, match="unknown report format"):
        emit_report(report, formats=["rows", "pdf"], out_dir=str(tmp_path))


def test_rows_csv_shape_and_header(tmp_path, identity_report):
    report, entries = identity_report
    emit_report(report, formats=["rows"], out_dir=str(tmp_path))
    with open(tmp_path / "rows.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "id", "group", "kind", "bvd", "bvc", "bvt", "vpi",
        "n_branches", "n_cyclic_excluded", "resolution", "ssim", "pcqi",
    ]
    assert len(rows) == 1 + 2 * len(entries)  # tr and gt row per pair
    kinds = {r[2] for r in rows[1:]}
    assert kinds == {"tr", "gt"}


def test_summary_recomputable_from_rows(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS, identical=False)
    report = _run(parse_manifest(manifest))
    out = tmp_path / "out"
    emit_report(report, out_dir=str(out))

    with open(out / "rows.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    summary = json.loads((out / "summary.json").read_text())

    for res, res_block in summary["resolutions"].items():
        for group, block in res_block["groups"].items():
            members = [
                r for r in rows
                if r["resolution"] == res and (group == "Complete" or r["group"] == group)
            ]
            for feature in ("bvd", "bvc", "bvt", "vpi"):
                tr = [float(r[feature]) for r in members if r["kind"] == "tr"]
                gt = [float(r[feature]) for r in members if r["kind"] == "gt"]
                stored = block["features"][feature]
                s = summarize(tr)
                assert stored["tr"]["n"] == s.n
                assert stored["tr"]["mean"] == float(f"{s.mean:.6g}")
                assert stored["tr"]["std"] == float(f"{s.std:.6g}")
                assert stored["tr"]["min"] == float(f"{s.min:.6g}")
                assert stored["tr"]["max"] == float(f"{s.max:.6g}")
                if stored["ttest"] is not None:
                    t = welch_ttest(tr, gt)
                    assert stored["ttest"]["t_statistic"] == float(f"{t.t_statistic:.6g}")
                    assert stored["ttest"]["p_value"] == float(f"{t.p_value:.6g}")


def test_scale_factor_applies_to_rows_and_aggregates(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    entries = parse_manifest(manifest)
    base = _run(entries)
    scaled = _run(entries, config=config_from_mapping({"biomarkers.scale_factor": "100"}))
    out_b, out_s = tmp_path / "b", tmp_path / "s"
    emit_report(base, formats=["rows"], out_dir=str(out_b))
    emit_report(scaled, formats=["rows"], out_dir=str(out_s))
    with open(out_b / "rows.csv", newline="") as fh:
        rows_b = list(csv.DictReader(fh))
    with open(out_s / "rows.csv", newline="") as fh:
        rows_s = list(csv.DictReader(fh))
    for rb, rs in zip(rows_b, rows_s):
        assert float(rs["bvd"]) == pytest.approx(100 * float(rb["bvd"]), rel=1e-5)
        assert float(rs["vpi"]) == pytest.approx(100 * float(rb["vpi"]), rel=1e-5)
        assert rs["bvc"] == rb["bvc"]  # caliber and tortuosity are unscaled
        assert rs["bvt"] == rb["bvt"]
    g = scaled.resolutions["mm3"]["groups"]["Complete"]["features"]["bvd"]["tr"]
    raw = base.resolutions["mm3"]["groups"]["Complete"]["features"]["bvd"]["tr"]
    assert g["mean"] == pytest.approx(100 * raw["mean"], rel=1e-5)


# ------------------------------------------------------ external embeddings


def test_external_embeddings_used_for_fid(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:4])
    entries = parse_manifest(manifest)
    rng = np.random.default_rng(0)
    lines = ["id,f0,f1,f2"]
    for e in entries:
        for ref in (e.tr_ref, e.gt_ref):
            vec = rng.normal(size=3)
            lines.append(ref + "," + ",".join(f"{v:.6f}" for v in vec))
    emb = tmp_path / "emb.csv"
    emb.write_text("\n".join(lines) + "\n")
    report = _run(entries, embeddings_path=str(emb))
    q = report.quality["mm3"]
    assert q["fid_embedding"] == f"file:{emb}"
    assert q["fid"] is not None and q["fid"] > 0.0
    assert "fid_error" not in q


def test_external_embeddings_missing_id(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    entries = parse_manifest(manifest)
    emb = tmp_path / "emb.csv"
    emb.write_text("id,f0\np01_mm3_tr.png,0.5\n")
    report = _run(entries, embeddings_path=str(emb))
    q = report.quality["mm3"]
    assert q["fid"] is None
    assert "no embedding row for id" in q["fid_error"]


def test_embeddings_via_config_key(tmp_path):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    entries = parse_manifest(manifest)
    lines = ["id,f0,f1"]
    for e in entries:
        for ref in (e.tr_ref, e.gt_ref):
            lines.append(f"{ref},1.0,2.0")
    emb = tmp_path / "table.csv"
    emb.write_text("\n".join(lines) + "\n")
    cfg = config_from_mapping({"quality.fid.embedding": f"file:{emb}"})
    report = _run(entries, config=cfg)
    assert report.quality["mm3"]["fid_embedding"] == f"file:{emb}"
    assert report.quality["mm3"]["fid"] == pytest.approx(0.0, abs=1e-9)


# --------------------------------------------------------------------- CLI


def _main(argv):
    from octaquant.cli import main

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return main(argv)


def test_cli_run_writes_reports(tmp_path, capsys):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:2])
    out = tmp_path / "results"
    assert _main(["run", "--manifest", manifest, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "analyzed 2 pair(s), 0 error(s)" in stdout
    assert stdout.count("wrote ") == 4
    for name in ("rows.csv", "summary.json", "quality.json", "boxplots.json"):
        assert (out / name).is_file()


def test_cli_run_quarantine_exits_2(tmp_path, capsys):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    (tmp_path / "p02_mm3_gt.png").write_bytes(b"junk")
    code = _main(["run", "--manifest", manifest, "--out", str(tmp_path / "r")])
    captured = capsys.readouterr()
    assert code == 2
    assert "analyzed 2 pair(s), 1 error(s)" in captured.out
    assert "error: p02 [mm3]:" in captured.err


def test_cli_run_skip_missing_flag(tmp_path, capsys):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:3])
    os.remove(tmp_path / "p03_mm3_tr.png")
    argv = ["run", "--manifest", manifest, "--out", str(tmp_path / "r")]
    assert _main(argv) == 1  # aborts without the flag
    assert "missing input file" in capsys.readouterr().err
    assert _main(argv + ["--skip-missing"]) == 2
    assert "load: missing input file" in capsys.readouterr().err


def test_cli_run_abort_exits_1(tmp_path, capsys):
    code = _main(["run", "--manifest", str(tmp_path / "no.csv"), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "unreadable file" in err


def test_cli_run_rejects_bad_jobs(tmp_path, capsys):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:1])
    code = _main(["run", "--manifest", manifest, "--out", str(tmp_path), "--jobs", "0"])
    assert code == 1
    assert "--jobs must be >= 1" in capsys.readouterr().err


def test_cli_features_prints_feature_set(tmp_path, capsys):
    path = tmp_path / "img.png"
    save_grayscale(str(path), stroke_image(3))
    assert _main(["features", str(path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    keys = [line.split(" = ")[0] for line in lines]
    assert keys == ["bvd", "bvc", "bvt", "vpi", "n_branches", "n_cyclic_excluded"]
    assert float(lines[2].split(" = ")[1]) >= 1.0  # tortuosity lower bound


def test_cli_compare_identity_pair(tmp_path, capsys):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    img = stroke_image(4)
    save_grayscale(str(a), img)
    save_grayscale(str(b), img)
    assert _main(["compare", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "ssim = 1" in out and "pcqi = 1" in out


def test_cli_run_with_config_file(tmp_path, capsys):
    manifest = _write_cohort(tmp_path, IDENTITY_SPECS[:2])
    cfg = tmp_path / "analysis.cfg"
    cfg.write_text("biomarkers.scale_factor = 100\nstats.ttest = student\n")
    out = tmp_path / "r"
    argv = ["run", "--manifest", manifest, "--out", str(out), "--config", str(cfg)]
    assert _main(argv) == 0
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["biomarkers.scale_factor"] == 100.0
    bvd = summary["resolutions"]["mm3"]["groups"]["Complete"]["features"]["bvd"]
    assert bvd["tr"]["mean"] > 1.0  # scaled density, raw fraction is < 1
