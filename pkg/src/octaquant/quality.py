"""Pairwise and cohort image-quality metrics: SSIM, PCQI, and Fréchet distance.

SSIM is the standard Gaussian-weighted three-term form evaluated at every
fully interior window position. PCQI follows the patch-structure
formulation: per sampled patch the product of a structure-similarity term,
a contrast-change term (arctangent-compressed variance ratio) and a mean-
luminance term, averaged over a stride grid of patches.

Both metrics share one numerical convention: the sigma1*sigma2 product is
computed as sqrt(v1*v2) in one square root, which makes the identity
comparisons bitwise-exact (compare(x, x) = 1.0) and keeps both metrics
exactly symmetric in their arguments.

The cohort metric embeds each image as grid x grid cell means and standard
deviations, fits a Gaussian per group, and returns the Fréchet
(Wasserstein-2) distance between the fits. The embedding is a deterministic
stand-in for learned features; externally computed feature vectors (one CSV
row per image) can be supplied instead, and reports record which embedding
produced each score.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_COV_EPSILON = 1e-6  # ridge added to fitted covariances; small cohorts are rank-deficient
_NEG_EIGENVALUE_TOL = 1e-6  # relative; below -tol*norm the input is not PSD
_ASYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")


@dataclass(frozen=True)
class QualityScores:
    """Pairwise scores for one TR/GT image pair."""
    ssim: float
    pcqi: float


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("expected 2-D images")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    offsets = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean structural similarity over all interior window positions.

    Exactly symmetric; ssim(x, x) == 1.0 exactly.
    """
    params = params or SsimParams()
    a, b = _check_pair(a, b)
    h, w = a.shape
    win = params.window
    if h < win or w < win:
        raise ValueError(f"image {h}x{w} smaller than window {win}")
    kernel = _gaussian_kernel(win, params.gaussian_sigma)

    def smooth(img):
        full = ndimage.correlate(img, kernel, mode="constant", cval=0.0)
        half = win // 2
        return full[half : h - half, half : w - half]

    mu1, mu2 = smooth(a), smooth(b)
    v1 = smooth(a * a) - mu1 * mu1
    v2 = smooth(b * b) - mu2 * mu2
    cov = smooth(a * b) - mu1 * mu2
    sigma_prod = np.sqrt(np.maximum(v1 * v2, 0.0))

    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    c3 = c2 / 2.0
    luminance = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    contrast = (2.0 * sigma_prod + c2) / (v1 + v2 + c2)
    structure = (cov + c3) / (sigma_prod + c3)
    return float(np.mean(luminance * contrast * structure))


def _patch_stats(img: np.ndarray, window: int, stride: int):
    # two-pass moments: variance stays >= 0 even on constant patches, and at
    # identity the covariance below reproduces it bitwise, so pcqi(x, x) = 1
    patches = np.lib.stride_tricks.sliding_window_view(img, (window, window))
    patches = patches[::stride, ::stride]
    mu = patches.mean(axis=(-2, -1))
    centered = patches - mu[..., None, None]
    return centered, mu, (centered * centered).mean(axis=(-2, -1))


def pcqi_terms(
    reference: np.ndarray, test: np.ndarray, window: int = 11, stride: int = 4
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-patch (structure, contrast, luminance) term arrays for PCQI.

    Exposed separately so distortions can be attributed to a single term;
    a pure mean shift moves only the luminance term.
    """
    reference, test = _check_pair(reference, test)
    h, w = reference.shape
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than window {window}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cr, mu1, v1 = _patch_stats(reference, window, stride)
    ct, mu2, v2 = _patch_stats(test, window, stride)
    cov = (cr * ct).mean(axis=(-2, -1))
    sigma_prod = np.sqrt(v1 * v2)

    span = 1.0  # intensities live on [0, 1]
    c = 3.0 * (span / 256.0) ** 2
    structure = (cov + c) / (sigma_prod + c)
    contrast = (4.0 / math.pi) * np.arctan((cov + c) / (v1 + c))
    luminance = np.exp(-np.abs(mu1 - mu2) / span)
    return structure, contrast, luminance


def pcqi(reference: np.ndarray, test: np.ndarray, window: int = 11, stride: int = 4) -> float:
    """Patch-based contrast quality index; 1.0 at identity, exactly."""
    structure, contrast, luminance = pcqi_terms(reference, test, window, stride)
    return float(np.mean(structure * contrast * luminance))


# ---------------------------------------------------------------------------
# cohort distance


def embed(img: np.ndarray, grid: int = 8) -> np.ndarray:
    """Grid-statistics feature vector: cell means, then cell standard deviations.

    Cells tile the image exactly (grid must divide both dimensions) and must
    be at least 4x4 px; the vector has length 2*grid*grid, cells row-major.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    h, w = img.shape
    if grid < 1:
        raise ValueError("grid must be >= 1")
    if h % grid or w % grid:
        raise ValueError(f"grid {grid} does not divide image dimensions {h}x{w}")
    ch, cw = h // grid, w // grid
    if ch < 4 or cw < 4:
        raise ValueError(f"grid too fine: {ch}x{cw} px cells, need at least 4x4")
    cells = img.reshape(grid, ch, grid, cw)
    means = cells.mean(axis=(1, 3))
    stds = cells.std(axis=(1, 3))  # population std per cell
    return np.concatenate([means.ravel(), stds.ravel()])


def fit_gaussian(vectors) -> GaussianFit:
    """Sample mean and (n-1)-divisor covariance with a small ridge.

    The ridge (1e-6 on the diagonal) keeps downstream square roots defined
    when there are fewer samples than dimensions.
    """
    try:
        arr = np.asarray(list(vectors), dtype=np.float64)
    except ValueError as err:
        raise ValueError("inconsistent dimensions among feature vectors") from err
    if arr.ndim != 2:
        raise ValueError("inconsistent dimensions among feature vectors")
    n, dim = arr.shape
    if n < 2:
        raise ValueError(f"fewer than 2 vectors: got {n}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0 + _COV_EPSILON * np.eye(dim)
    return GaussianFit(mean=mean, covariance=cov)


def sqrtm_spd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Slightly negative eigenvalues (to -1e-6 * norm) are clamped to zero;
    anything more negative means the input is not PSD and is an error.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(float(np.abs(m).max()), np.finfo(np.float64).tiny)
    if float(np.abs(m - m.T).max()) > _ASYMMETRY_TOL * scale:
        raise ValueError("asymmetric input")
    eigenvalues, eigenvectors = np.linalg.eigh((m + m.T) / 2.0)
    norm = max(float(np.abs(eigenvalues).max()), np.finfo(np.float64).tiny)
    if eigenvalues[0] < -_NEG_EIGENVALUE_TOL * norm:
        raise ValueError(
            f"significantly negative eigenvalue: {eigenvalues[0]:.3e} (norm {norm:.3e})"
        )
    root = eigenvectors @ np.diag(np.sqrt(np.maximum(eigenvalues, 0.0))) @ eigenvectors.T
    return (root + root.T) / 2.0


def frechet_distance(g1: GaussianFit, g2: GaussianFit) -> float:
    """Fréchet (Wasserstein-2) distance between two Gaussian fits.

    ||mu1 - mu2||^2 + tr(S1 + S2 - 2*(S1^{1/2} S2 S1^{1/2})^{1/2}), using
    the symmetric product so only SPD square roots are needed. Tiny negative
    results from floating point (within -1e-8) clamp to zero.
    """
    if g1.dimension != g2.dimension:
        raise ValueError(f"dimension mismatch: {g1.dimension} vs {g2.dimension}")
    root1 = sqrtm_spd(g1.covariance)
    inner = root1 @ g2.covariance @ root1
    cross = sqrtm_spd((inner + inner.T) / 2.0)
    diff = g1.mean - g2.mean
    value = float(
        diff @ diff
        + np.trace(g1.covariance)
        + np.trace(g2.covariance)
        - 2.0 * np.trace(cross)
    )
    if -1e-8 <= value < 0.0:
        return 0.0
    return value


def _check_group_size(n: int, label: str, dim: int) -> None:
    if n < 2:
        raise ValueError(f"group too small: {label} has {n} image(s), need at least 2")
    if n < dim:
        warnings.warn(
            f"{label}: {n} samples for {dim}-dimensional embeddings; "
            "covariance is rank-deficient and the ridge dominates",
            RuntimeWarning,
            stacklevel=3,
        )


def fid(group_a, group_b, grid: int = 8) -> float:
    """Fréchet distance between the embedded distributions of two image sets."""
    group_a, group_b = list(group_a), list(group_b)
    dim = 2 * grid * grid
    _check_group_size(len(group_a), "group_a", dim)
    _check_group_size(len(group_b), "group_b", dim)
    fit_a = fit_gaussian([embed(img, grid) for img in group_a])
    fit_b = fit_gaussian([embed(img, grid) for img in group_b])
    return frechet_distance(fit_a, fit_b)


def fid_from_embeddings(vectors_a, vectors_b) -> float:
    """FID over externally computed feature vectors (see load_embeddings_csv)."""
    vectors_a, vectors_b = list(vectors_a), list(vectors_b)
    if not vectors_a or not vectors_b:
        raise ValueError("group too small: empty embedding group")
    dim = len(vectors_a[0])
    _check_group_size(len(vectors_a), "group_a", dim)
    _check_group_size(len(vectors_b), "group_b", dim)
    return frechet_distance(fit_gaussian(vectors_a), fit_gaussian(vectors_b))


def load_embeddings_csv(path) -> dict[str, np.ndarray]:
    """Read per-image feature vectors: header `id,f0,f1,...`, one row per image.

    Returns a mapping from the id column (matched against manifest image
    paths) to the feature vector. All rows must have the header's width.
    """
    table: dict[str, np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "id" or len(header) < 2:
            raise ValueError(f"{path}: expected header starting with 'id' plus feature columns")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{line_no}: expected {width} columns, got {len(row)}")
            key = row[0].strip()
            if key in table:
                raise ValueError(f"{path}:{line_no}: duplicate id {key!r}")
            try:
                table[key] = np.asarray([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as err:
                raise ValueError(f"{path}:{line_no}: non-numeric feature value") from err
    if not table:
        raise ValueError(f"{path}: no embedding rows")
    return table
