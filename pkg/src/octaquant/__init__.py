"""Vascular biomarker and image-quality analysis for en-face OCTA projection maps.

The package quantifies four vascular features (density, caliber, tortuosity,
perimeter index) from binary vessel masks, scores paired images with SSIM,
PCQI and an FID-style Gaussian feature distance, and aggregates per-cohort
statistics into machine-readable reports.
"""

__version__ = "0.1.0"

from .imaging import load_grayscale, save_grayscale, otsu_threshold, binarize, clean_mask
from .vasculature import VesselGraph, Branch, Node, skeletonize, extract_graph, contour_length
from .biomarkers import BiomarkerSet, bvd, bvc, bvt, vpi, biomarker_set, biomarkers_from_mask, segment
from .quality import (
    SsimParams,
    GaussianFit,
    QualityScores,
    ssim,
    pcqi,
    pcqi_terms,
    embed,
    fit_gaussian,
    sqrtm_spd,
    frechet_distance,
    fid,
    fid_from_embeddings,
    load_embeddings_csv,
)
from .stats import (
    SummaryStats,
    TTestResult,
    BoxplotStats,
    summarize,
    welch_ttest,
    student_ttest,
    paired_ttest,
    boxplot_stats,
)
from .config import AnalysisConfig, load_config, config_from_mapping
from .pipeline import ManifestEntry, CohortReport, parse_manifest, run_cohort, emit_report

__all__ = [
    "__version__",
    "load_grayscale", "save_grayscale", "otsu_threshold", "binarize", "clean_mask",
    "VesselGraph", "Branch", "Node", "skeletonize", "extract_graph", "contour_length",
    "BiomarkerSet", "bvd", "bvc", "bvt", "vpi", "biomarker_set", "biomarkers_from_mask", "segment",
    "SsimParams", "GaussianFit", "QualityScores", "ssim", "pcqi", "pcqi_terms",
    "embed", "fit_gaussian", "sqrtm_spd", "frechet_distance", "fid",
    "fid_from_embeddings", "load_embeddings_csv",
    "SummaryStats", "TTestResult", "BoxplotStats", "summarize", "welch_ttest", "student_ttest", "paired_ttest", "boxplot_stats",
    "AnalysisConfig", "load_config", "config_from_mapping",
    "ManifestEntry", "CohortReport", "parse_manifest", "run_cohort", "emit_report",
]
