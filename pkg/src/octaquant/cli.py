"""Command-line entry points.

  octa-quant run --manifest m.csv --out results/ [--config c.toml]
                 [--jobs N] [--skip-missing] [--embeddings file.csv]
  octa-quant features <image> [--config c.toml]
  octa-quant compare <tr> <gt> [--config c.toml]

Exit codes: 0 success, 1 abort, 2 completed with a non-empty error ledger.
"""

from __future__ import annotations

import argparse
import sys

from . import biomarkers, imaging, pipeline, quality
from .config import AnalysisConfig, load_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octa-quant",
        description="Vascular biomarkers and image-quality metrics for paired "
        "en-face OCTA projection maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="analyze a manifest of image pairs")
    run.add_argument("--manifest", required=True, help="cohort CSV manifest")
    run.add_argument("--out", required=True, help="output directory for report files")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--jobs", type=int, default=1, help="concurrent image pairs (default 1)")
    run.add_argument(
        "--skip-missing", action="store_true",
        help="quarantine entries whose files are missing instead of aborting",
    )
    run.add_argument(
        "--embeddings",
        help="CSV of externally computed feature vectors for FID "
        "(header id,f0,f1,...; ids are manifest path strings)",
    )

    features = sub.add_parser("features", help="print the feature set of one image")
    features.add_argument("image", help="grayscale PNG or PGM")
    features.add_argument("--config", help="flat key=value config file")

    compare = sub.add_parser("compare", help="print SSIM and PCQI for an image pair")
    compare.add_argument("tr", help="translated image")
    compare.add_argument("gt", help="ground-truth image")
    compare.add_argument("--config", help="flat key=value config file")
    return parser


def _load_config(path: str | None) -> AnalysisConfig:
    return load_config(path) if path else AnalysisConfig()


def _fmt(x: float) -> str:
    return f"{float(x):.6g}"


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    entries = pipeline.parse_manifest(args.manifest)
    report = pipeline.run_cohort(
        entries,
        config=config,
        jobs=args.jobs,
        skip_missing=args.skip_missing,
        embeddings_path=args.embeddings,
    )
    written = pipeline.emit_report(report, None, args.out)
    print(f"analyzed {len(report.results)} pair(s), {len(report.errors)} error(s)")
    for path in written:
        print(f"wrote {path}")
    if report.errors:
        for err in report.errors:
            print(f"error: {err.patient_id} [{err.resolution}]: {err.message}", file=sys.stderr)
        return 2
    return 0


def _cmd_features(args) -> int:
    config = _load_config(args.config)
    img = imaging.load_grayscale(args.image)
    feats = biomarkers.biomarker_set(img, config)
    print(f"bvd = {_fmt(feats.display_bvd)}")
    print(f"bvc = {_fmt(feats.bvc)}")
    print(f"bvt = {_fmt(feats.bvt)}")
    print(f"vpi = {_fmt(feats.display_vpi)}")
    print(f"n_branches = {feats.n_branches}")
    print(f"n_cyclic_excluded = {feats.n_cyclic_excluded}")
    return 0


def _cmd_compare(args) -> int:
    config = _load_config(args.config)
    tr = imaging.load_grayscale(args.tr)
    gt = imaging.load_grayscale(args.gt)
    print(f"ssim = {_fmt(quality.ssim(tr, gt, config.quality.ssim_params()))}")
    print(
        "pcqi = "
        + _fmt(
            quality.pcqi(
                tr, gt,
                window=config.quality.pcqi_window,
                stride=config.quality.pcqi_stride,
            )
        )
    )
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "features": _cmd_features, "compare": _cmd_compare}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
