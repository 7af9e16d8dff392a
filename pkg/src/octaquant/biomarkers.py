"""The four vascular features computed from a mask and its branch graph.

Definitions (all raw ratios of pixel quantities):

  density    BVD = vessel pixels / image pixels
  caliber    BVC = vessel pixels / total skeleton geodesic length
  tortuosity BVT = mean over non-cyclic branches of geodesic/Euclidean
  perimeter  VPI = boundary contour length / vessel pixels

BVC divides by the single global length sum (cyclic branches included);
BVT excludes cyclic branches, whose endpoint Euclidean distance is 0, and
reports how many were excluded. Published group tables for these features
use an unstated unit convention, so values here stay raw ratios and a
multiplicative scale_factor (default 1) is applied to BVD and VPI only at
report-display time; cross-group orderings are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging, vasculature
from .config import AnalysisConfig


@dataclass(frozen=True)
class BiomarkerSet:
    """The four features of one image, plus branch bookkeeping."""

    bvd: float
    bvc: float
    bvt: float
    vpi: float
    n_branches: int
    n_cyclic_excluded: int
    scale_factor: float = 1.0

    @property
    def display_bvd(self) -> float:
        return self.bvd * self.scale_factor

    @property
    def display_vpi(self) -> float:
        return self.vpi * self.scale_factor


def _as_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    return mask.astype(bool)


def bvd(mask: np.ndarray) -> float:
    """Vessel density: fraction of image pixels that are vessel."""
    mask = _as_mask(mask)
    if mask.size == 0:
        raise ValueError("empty image")
    return float(np.count_nonzero(mask)) / float(mask.size)


def bvc(mask: np.ndarray, graph: vasculature.VesselGraph, skel: np.ndarray) -> float:
    """Vessel caliber proxy: vessel area per unit skeleton length, in pixels."""
    mask = _as_mask(mask)
    area = float(np.count_nonzero(mask))
    if area == 0.0:
        raise ValueError("empty vasculature")
    total = graph.total_geodesic_length()
    if not np.asarray(skel, dtype=bool).any() or total <= 0.0:
        raise ValueError("degenerate skeleton")
    return area / total


def bvt(graph: vasculature.VesselGraph) -> float:
    """Mean branch tortuosity: geodesic over Euclidean endpoint distance.

    Cyclic branches (coincident endpoints) are excluded; by the triangle
    inequality the result is >= 1.
    """
    ratios = [
        b.geodesic_length / b.euclidean_length()
        for b in graph.branches
        if not b.cyclic
    ]
    if not ratios:
        raise ValueError("no measurable branches")
    return float(sum(ratios) / len(ratios))


def vpi(mask: np.ndarray, contour: float) -> float:
    """Perimeter index: boundary length per vessel pixel (1/pixels)."""
    mask = _as_mask(mask)
    area = float(np.count_nonzero(mask))
    if area == 0.0:
        raise ValueError("empty vasculature")
    return float(contour) / area


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValueError as err:
        raise ValueError(f"{stage}: {err}") from err


def segment(img: np.ndarray, config: AnalysisConfig) -> np.ndarray:
    """Threshold and clean a grayscale image into a vessel mask.

    With Otsu thresholding, a degenerate (single-level) histogram means no
    foreground/background split exists; that yields the empty mask rather
    than an error, so downstream stages report "empty vasculature".
    """
    if config.segmentation.threshold_mode == "otsu":
        try:
            threshold = imaging.otsu_threshold(img)
        except ValueError as err:
            if "degenerate histogram" not in str(err):
                raise
            return np.zeros(np.asarray(img).shape, dtype=bool)
    else:
        threshold = config.segmentation.fixed_threshold
    mask = imaging.binarize(img, threshold)
    return imaging.clean_mask(
        mask,
        min_component_px=config.segmentation.min_component_px,
        opening_radius=config.segmentation.opening_radius,
    )


def biomarkers_from_mask(mask: np.ndarray, config: AnalysisConfig) -> BiomarkerSet:
    """All four features from an already-segmented mask."""
    mask = _as_mask(mask)
    skel = _staged("skeleton", vasculature.skeletonize, mask)
    graph = _staged(
        "graph", vasculature.extract_graph, skel,
        min_branch_px=config.vasculature.min_branch_px,
    )
    contour = _staged("contour", vasculature.contour_length, mask)
    return BiomarkerSet(
        bvd=_staged("biomarkers", bvd, mask),
        bvc=_staged("biomarkers", bvc, mask, graph, skel),
        bvt=_staged("biomarkers", bvt, graph),
        vpi=_staged("biomarkers", vpi, mask, contour),
        n_branches=graph.branch_count,
        n_cyclic_excluded=graph.cyclic_count,
        scale_factor=config.biomarkers.scale_factor,
    )


def biomarker_set(img: np.ndarray, config: AnalysisConfig) -> BiomarkerSet:
    """Segment a grayscale image and compute its feature set.

    Deterministic for a fixed config. Errors carry the failing stage name,
    e.g. a blank image segments to an empty mask and fails with
    "biomarkers: empty vasculature".
    """
    mask = _staged("segmentation", segment, img, config)
    return biomarkers_from_mask(mask, config)
