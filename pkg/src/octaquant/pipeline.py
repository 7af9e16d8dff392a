"""Manifest-driven batch analysis of paired translated/ground-truth images.

A manifest row names one patient's pair of en-face projection maps at one
resolution. Each eligible pair yields two feature sets (translated and
ground truth), a pairwise SSIM and PCQI, and an embedding for the
per-resolution Fréchet distance between the translated and ground-truth
sets. Per-entry failures land in an error ledger and the run continues;
only an empty eligible cohort aborts.

Reports are byte-stable: no timestamps, fixed key order, and every float
serialized at 6 significant digits. Aggregate statistics are computed over
those same 6-digit row values, so every summary, t-test, and boxplot in the
report is exactly recomputable from rows.csv.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__, biomarkers, imaging, quality, stats
from .config import AnalysisConfig, config_snapshot

GROUPS = ("AMD", "CNV", "CSC", "DR", "RVO", "Normal", "Other")
RESOLUTIONS = ("mm3", "mm6")
FEATURES = ("bvd", "bvc", "bvt", "vpi")
_MANIFEST_HEADER = ["patient_id", "group", "resolution", "tr_path", "gt_path"]
COMPLETE_GROUP = "Complete"  # the union row, reported alongside disease groups


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    group: str
    resolution: str
    tr_path: str  # resolved against the manifest's directory
    gt_path: str
    tr_ref: str = ""  # path string as written in the manifest; embedding-file id
    gt_ref: str = ""


@dataclass(frozen=True)
class EntryError:
    patient_id: str
    resolution: str
    message: str


@dataclass
class EntryResult:
    entry: ManifestEntry
    tr: biomarkers.BiomarkerSet
    gt: biomarkers.BiomarkerSet
    scores: quality.QualityScores
    tr_embedding: object = None  # feature vector, or None when embedding failed
    gt_embedding: object = None
    embed_error: str | None = None


@dataclass
class CohortReport:
    version: str
    config: dict[str, object]
    results: list[EntryResult] = field(default_factory=list)
    errors: list[EntryError] = field(default_factory=list)
    # per resolution -> aggregate tree; see _aggregate_resolution for the shape
    resolutions: dict[str, dict] = field(default_factory=dict)
    quality: dict[str, dict] = field(default_factory=dict)
    boxplots: dict[str, dict] = field(default_factory=dict)


def parse_manifest(path) -> list[ManifestEntry]:
    """Read and validate a cohort manifest CSV.

    Header must be exactly `patient_id,group,resolution,tr_path,gt_path`.
    Relative image paths are resolved against the manifest's directory.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise ValueError(f"unreadable file: {path}: {err}") from err
    base = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    seen: dict[tuple[str, str], int] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _MANIFEST_HEADER:
            raise ValueError(
                f"{path}:1: expected header {','.join(_MANIFEST_HEADER)}, "
                f"got {','.join(header) if header else 'empty file'}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(_MANIFEST_HEADER):
                raise ValueError(
                    f"{path}:{line_no}: expected {len(_MANIFEST_HEADER)} columns, got {len(row)}"
                )
            patient_id, group, resolution, tr_ref, gt_ref = (cell.strip() for cell in row)
            if not patient_id:
                raise ValueError(f"{path}:{line_no}: empty patient_id")
            if group not in GROUPS:
                raise ValueError(
                    f"{path}:{line_no}: unknown group {group!r} (expected one of {', '.join(GROUPS)})"
                )
            if resolution not in RESOLUTIONS:
                raise ValueError(
                    f"{path}:{line_no}: unknown resolution {resolution!r} "
                    f"(expected one of {', '.join(RESOLUTIONS)})"
                )
            if not tr_ref or not gt_ref:
                raise ValueError(f"{path}:{line_no}: empty image path")
            if tr_ref == gt_ref:
                raise ValueError(f"{path}:{line_no}: tr_path and gt_path must differ")
            key = (patient_id, resolution)
            if key in seen:
                raise ValueError(
                    f"{path}:{line_no}: duplicate (patient_id, resolution) "
                    f"{key} first seen on line {seen[key]}"
                )
            seen[key] = line_no
            entries.append(
                ManifestEntry(
                    patient_id=patient_id,
                    group=group,
                    resolution=resolution,
                    tr_path=os.path.join(base, tr_ref) if not os.path.isabs(tr_ref) else tr_ref,
                    gt_path=os.path.join(base, gt_ref) if not os.path.isabs(gt_ref) else gt_ref,
                    tr_ref=tr_ref,
                    gt_ref=gt_ref,
                )
            )
    return entries


def _round6(x) -> float:
    """Collapse a float to 6 significant digits (the report-wide precision)."""
    return float(f"{float(x):.6g}")


def _process_entry(entry: ManifestEntry, config: AnalysisConfig, grid: int):
    try:
        tr_img = imaging.load_grayscale(entry.tr_path)
        gt_img = imaging.load_grayscale(entry.gt_path)
    except ValueError as err:
        return EntryError(entry.patient_id, entry.resolution, f"load: {err}")
    try:
        tr_set = biomarkers.biomarker_set(tr_img, config)
        gt_set = biomarkers.biomarker_set(gt_img, config)
    except ValueError as err:
        return EntryError(entry.patient_id, entry.resolution, str(err))
    try:
        scores = quality.QualityScores(
            ssim=quality.ssim(tr_img, gt_img, config.quality.ssim_params()),
            pcqi=quality.pcqi(
                tr_img, gt_img,
                window=config.quality.pcqi_window,
                stride=config.quality.pcqi_stride,
            ),
        )
    except ValueError as err:
        return EntryError(entry.patient_id, entry.resolution, f"quality: {err}")
    result = EntryResult(entry=entry, tr=tr_set, gt=gt_set, scores=scores)
    try:
        result.tr_embedding = quality.embed(tr_img, grid)
        result.gt_embedding = quality.embed(gt_img, grid)
    except ValueError as err:
        result.embed_error = str(err)
    return result


# report-facing attribute per feature column; bvd and vpi carry the display scale
_FEATURE_ATTR = {"bvd": "display_bvd", "bvc": "bvc", "bvt": "bvt", "vpi": "display_vpi"}


def _feature_values(results: list[EntryResult], feature: str, side: str) -> list[float]:
    attr = _FEATURE_ATTR[feature]
    return [_round6(getattr(getattr(r, side), attr)) for r in results]


def _summary_dict(values: list[float]) -> dict:
    s = stats.summarize(values)
    return {
        "n": s.n,
        "mean": _round6(s.mean),
        "std": _round6(s.std),
        "min": _round6(s.min),
        "max": _round6(s.max),
    }


def _ttest_dict(tr_values: list[float], gt_values: list[float], config: AnalysisConfig):
    if config.stats.paired:
        test_fn = stats.paired_ttest
    elif config.stats.ttest == "student":
        test_fn = stats.student_ttest
    else:
        test_fn = stats.welch_ttest
    try:
        t = test_fn(tr_values, gt_values)
    except ValueError as err:
        return None, str(err)
    return {
        "t_statistic": _round6(t.t_statistic),
        "degrees_of_freedom": _round6(t.degrees_of_freedom),
        "p_value": _round6(t.p_value),
        "significant_at_05": t.significant_at_05,
    }, None


def _boxplot_dict(values: list[float]) -> dict:
    b = stats.boxplot_stats(values)
    return {
        "q1": _round6(b.q1),
        "median": _round6(b.median),
        "q3": _round6(b.q3),
        "whisker_low": _round6(b.whisker_low),
        "whisker_high": _round6(b.whisker_high),
        "outliers": [_round6(v) for v in b.outliers],
    }


def _group_order(present: set[str]) -> list[str]:
    ordered = [COMPLETE_GROUP] if COMPLETE_GROUP in present else []
    return ordered + sorted(present - {COMPLETE_GROUP})


def _aggregate_resolution(results: list[EntryResult], config: AnalysisConfig) -> tuple[dict, dict]:
    """Summaries/t-tests and boxplots for one resolution's eligible results."""
    by_group: dict[str, list[EntryResult]] = {COMPLETE_GROUP: list(results)}
    for r in results:
        by_group.setdefault(r.entry.group, []).append(r)
    groups_block: dict[str, dict] = {}
    box_block: dict[str, dict] = {}
    for group in _group_order(set(by_group)):
        members = by_group[group]
        ssim_values = [_round6(r.scores.ssim) for r in members]
        features_block: dict[str, dict] = {}
        box_features: dict[str, dict] = {}
        for feature in FEATURES:
            tr_values = _feature_values(members, feature, "tr")
            gt_values = _feature_values(members, feature, "gt")
            ttest, ttest_error = _ttest_dict(tr_values, gt_values, config)
            block = {
                "tr": _summary_dict(tr_values),
                "gt": _summary_dict(gt_values),
                "ttest": ttest,
            }
            if ttest_error is not None:
                block["ttest_error"] = ttest_error
            features_block[feature] = block
            box_features[feature] = {
                "tr": _boxplot_dict(tr_values),
                "gt": _boxplot_dict(gt_values),
            }
        groups_block[group] = {
            "n": len(members),
            "ssim": _summary_dict(ssim_values),
            "features": features_block,
        }
        box_block[group] = box_features
    return groups_block, box_block


def _resolution_fid(
    results: list[EntryResult], config: AnalysisConfig, embeddings: dict | None
) -> tuple[float | None, str | None]:
    source = config.quality.fid_embedding
    if embeddings is not None:
        tr_vecs, gt_vecs = [], []
        for r in results:
            for ref, bucket in ((r.entry.tr_ref, tr_vecs), (r.entry.gt_ref, gt_vecs)):
                vec = embeddings.get(ref)
                if vec is None:
                    return None, f"no embedding row for id {ref!r}"
                bucket.append(vec)
    else:
        usable = [r for r in results if r.embed_error is None]
        skipped = len(results) - len(usable)
        if skipped:
            first = next(r.embed_error for r in results if r.embed_error is not None)
            return None, f"embedding failed for {skipped} pair(s): {first}"
        tr_vecs = [r.tr_embedding for r in usable]
        gt_vecs = [r.gt_embedding for r in usable]
    try:
        return quality.fid_from_embeddings(tr_vecs, gt_vecs), None
    except ValueError as err:
        return None, str(err)


def run_cohort(
    entries: list[ManifestEntry],
    config: AnalysisConfig | None = None,
    jobs: int = 1,
    skip_missing: bool = False,
    embeddings_path: str | None = None,
) -> CohortReport:
    """Analyze a cohort: per-pair features and scores, then aggregates.

    Missing input files abort the run unless skip_missing is set, in which
    case the affected entries are quarantined; all other per-entry failures
    are always quarantined and the run continues. Deterministic for fixed
    inputs and config, independent of the jobs count.
    """
    config = config or AnalysisConfig()
    report = CohortReport(version=__version__, config=config_snapshot(config))

    missing: list[tuple[ManifestEntry, str]] = []
    runnable: list[ManifestEntry] = []
    for entry in entries:
        absent = [p for p in (entry.tr_path, entry.gt_path) if not os.path.isfile(p)]
        if absent:
            missing.append((entry, absent[0]))
        else:
            runnable.append(entry)
    if missing and not skip_missing:
        entry, path = missing[0]
        raise ValueError(
            f"missing input file: {path} (entry {entry.patient_id}); "
            f"{len(missing)} entrie(s) affected, pass skip_missing to quarantine"
        )
    for entry, path in missing:
        report.errors.append(
            EntryError(entry.patient_id, entry.resolution, f"load: missing input file: {path}")
        )

    embeddings = None
    if embeddings_path is None and config.quality.fid_embedding.startswith("file:"):
        embeddings_path = config.quality.fid_embedding[5:]
    if embeddings_path is not None:
        embeddings = quality.load_embeddings_csv(embeddings_path)

    grid = config.quality.fid_grid
    if jobs > 1 and len(runnable) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda e: _process_entry(e, config, grid), runnable))
    else:
        outcomes = [_process_entry(e, config, grid) for e in runnable]
    for outcome in outcomes:
        if isinstance(outcome, EntryError):
            report.errors.append(outcome)
        else:
            report.results.append(outcome)

    if not report.results:
        raise ValueError("empty eligible cohort: no entry survived validation")

    fid_label = f"file:{embeddings_path}" if embeddings is not None else "builtin"
    for resolution in RESOLUTIONS:
        at_res = [r for r in report.results if r.entry.resolution == resolution]
        if not at_res:
            continue
        groups_block, box_block = _aggregate_resolution(at_res, config)
        report.resolutions[resolution] = {"groups": groups_block}
        report.boxplots[resolution] = box_block
        fid_value, fid_error = _resolution_fid(at_res, config, embeddings)
        quality_block = {
            "n_pairs": len(at_res),
            "fid": None if fid_value is None else _round6(fid_value),
            "fid_embedding": fid_label,
            "pcqi": _summary_dict([_round6(r.scores.pcqi) for r in at_res]),
            "ssim": _summary_dict([_round6(r.scores.ssim) for r in at_res]),
        }
        if fid_error is not None:
            quality_block["fid_error"] = fid_error
        report.quality[resolution] = quality_block
    return report


_ROW_FIELDS = [
    "id", "group", "kind", "bvd", "bvc", "bvt", "vpi",
    "n_branches", "n_cyclic_excluded", "resolution", "ssim", "pcqi",
]


def _format_float(x: float) -> str:
    return f"{float(x):.6g}"


def emit_report(report: CohortReport, formats=None, out_dir=".") -> list[str]:
    """Write report files to out_dir; returns the paths written.

    formats selects a subset of {"rows", "summary", "quality", "boxplots"}
    (None means all four). Output is byte-stable for identical report
    content. Feature values in rows.csv are the display values (the
    configured scale factor applied to bvd and vpi).
    """
    all_formats = ("rows", "summary", "quality", "boxplots")
    chosen = tuple(formats) if formats is not None else all_formats
    unknown = sorted(set(chosen) - set(all_formats))
    if unknown:
        raise ValueError(f"unknown report format(s): {', '.join(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    if "rows" in chosen:
        path = os.path.join(out_dir, "rows.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_ROW_FIELDS)
            for r in report.results:
                for kind, feats in (("tr", r.tr), ("gt", r.gt)):
                    writer.writerow([
                        r.entry.patient_id,
                        r.entry.group,
                        kind,
                        _format_float(feats.display_bvd),
                        _format_float(feats.bvc),
                        _format_float(feats.bvt),
                        _format_float(feats.display_vpi),
                        feats.n_branches,
                        feats.n_cyclic_excluded,
                        r.entry.resolution,
                        _format_float(r.scores.ssim),
                        _format_float(r.scores.pcqi),
                    ])
        written.append(path)

    def _dump_json(name: str, payload) -> None:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, allow_nan=False)
            fh.write("\n")
        written.append(path)

    if "summary" in chosen:
        _dump_json("summary.json", {
            "version": report.version,
            "config": report.config,
            "resolutions": report.resolutions,
            "errors": [
                {"patient_id": e.patient_id, "resolution": e.resolution, "message": e.message}
                for e in report.errors
            ],
        })
    if "quality" in chosen:
        _dump_json("quality.json", report.quality)
    if "boxplots" in chosen:
        _dump_json("boxplots.json", report.boxplots)
    return written
