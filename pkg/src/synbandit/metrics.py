"""Baseline image/distribution quality metrics: SSIM, PSNR, IS, FID, aggregates.

Set-level scores (IS, FID) get per-image attributions so every metric can
rank individual synthetic images: FID via leave-one-in deltas, IS via each
row's KL contribution against the marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .images import ImageArray
from .store import EmbeddingSet

# Standard SSIM stabilizers for 8-bit dynamic range.
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
SSIM_WINDOW = 8

PSNR_CAP_DB = 99.0

AGGREGATE_KINDS = ("ME", "MD", "MX", "MN")


class MetricError(Exception):
    pass


class DimensionError(MetricError):
    pass


class ValidationError(MetricError):
    pass


class InsufficientDataError(MetricError):
    pass


def _as_float_planes(img: ImageArray) -> np.ndarray:
    return img.pixels.astype(np.float64)


def ssim(a: ImageArray, b: ImageArray) -> float:
    """Mean SSIM over non-overlapping 8x8 windows, averaged across channels.

    Window statistics are population moments; partial edge windows are
    included so images smaller than the window still score.
    """
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise DimensionError(
            f"shape mismatch: {(a.height, a.width, a.channels)} vs "
            f"{(b.height, b.width, b.channels)}"
        )
    pa, pb = _as_float_planes(a), _as_float_planes(b)
    channel_means = []
    for c in range(a.channels):
        vals = []
        for y in range(0, a.height, SSIM_WINDOW):
            for x in range(0, a.width, SSIM_WINDOW):
                wa = pa[y : y + SSIM_WINDOW, x : x + SSIM_WINDOW, c]
                wb = pb[y : y + SSIM_WINDOW, x : x + SSIM_WINDOW, c]
                mu_a, mu_b = wa.mean(), wb.mean()
                var_a, var_b = wa.var(), wb.var()
                cov = ((wa - mu_a) * (wb - mu_b)).mean()
                num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
                den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
                vals.append(num / den)
        channel_means.append(float(np.mean(vals)))
    return float(np.mean(channel_means))


def psnr(a: ImageArray, b: ImageArray) -> float:
    """10*log10(255^2 / MSE) in dB; identical images return the 99.0 dB cap."""
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise DimensionError(
            f"shape mismatch: {(a.height, a.width, a.channels)} vs "
            f"{(b.height, b.width, b.channels)}"
        )
    mse = float(np.mean((_as_float_planes(a) - _as_float_planes(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0**2 / mse)


@dataclass
class ProbMatrix:
    """N x C conditional class probabilities, one image per row."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"expected a 2-D matrix, got shape {p.shape}")
        if np.any(p < 0):
            raise ValidationError("negative probabilities")
        sums = p.sum(axis=1)
        bad = np.abs(sums - 1.0) > 1e-6
        if np.any(bad):
            raise ValidationError(
                f"{int(bad.sum())} rows not normalized (first bad sum {sums[bad][0]!r})"
            )
        self.probs = p

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


def _kl_rows_vs(p_rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p_row || q) in nats with the 0*log(0) = 0 convention."""
    out = np.zeros(p_rows.shape[0])
    for i, row in enumerate(p_rows):
        mask = row > 0
        out[i] = float(np.sum(row[mask] * (np.log(row[mask]) - np.log(q[mask]))))
    return out


def inception_score(p: ProbMatrix, splits: int = 1) -> float:
    """Mean over splits of exp(mean_row KL(p(y|x) || p(y)))."""
    if splits < 1:
        raise ValidationError(f"splits must be >= 1, got {splits}")
    if p.n < splits:
        raise ValidationError(f"need at least {splits} rows, have {p.n}")
    scores = []
    for chunk in np.array_split(p.probs, splits):
        marginal = chunk.mean(axis=0)
        scores.append(math.exp(float(np.mean(_kl_rows_vs(chunk, marginal)))))
    return float(np.mean(scores))


def per_image_is_scores(p: ProbMatrix) -> np.ndarray:
    """Each row's KL contribution against the full-set marginal (higher = sharper)."""
    marginal = p.probs.mean(axis=0)
    return _kl_rows_vs(p.probs, marginal)


@dataclass
class GaussianStats:
    """Mean vector and symmetric PSD covariance of a feature set."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DimensionError(f"covariance shape {cov.shape} != ({d}, {d})")
        # tolerances are relative above unit scale: eigvalsh roundoff grows
        # with the matrix norm, and rank-deficient covariances sit exactly
        # on the PSD boundary
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-9 * scale:
            raise ValidationError("covariance not symmetric within tolerance")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-9 * scale:
            raise ValidationError("covariance has eigenvalues below tolerance")
        self.mean = mean
        self.covariance = cov

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(data: EmbeddingSet | np.ndarray | Sequence[Sequence[float]]) -> GaussianStats:
    """Sample mean and unbiased sample covariance of the given vectors.

    A sample covariance is PSD up to floating-point roundoff, but at high
    dimension the roundoff can exceed the strict eigenvalue tolerance;
    negative eigenvalues are clamped to zero before validation.
    """
    if isinstance(data, EmbeddingSet):
        vectors = data.vectors().astype(np.float64)
    else:
        vectors = np.asarray(data, dtype=np.float64)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
    if vectors.shape[0] < 2:
        raise InsufficientDataError(
            f"need at least 2 vectors to fit a Gaussian, have {vectors.shape[0]}"
        )
    mean = vectors.mean(axis=0)
    cov = np.atleast_2d(np.cov(vectors, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2.0
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < 0.0:
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, covariance=cov)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root; eigenvalues below zero are clamped."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)."""
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    delta = a.mean - b.mean
    sqrt_a = _sqrtm_psd(a.covariance)
    inner = sqrt_a @ b.covariance @ sqrt_a
    inner = (inner + inner.T) / 2.0
    cross = _sqrtm_psd(inner)
    value = float(
        delta @ delta
        + np.trace(a.covariance)
        + np.trace(b.covariance)
        - 2.0 * np.trace(cross)
    )
    return max(value, 0.0)


def per_image_fid_scores(real: GaussianStats, syn_vectors: np.ndarray) -> np.ndarray:
    """Leave-one-in FID deltas: FID without image i minus FID with it.

    Positive scores mark images whose inclusion pulls the synthetic set
    toward the real distribution.
    """
    syn_vectors = np.asarray(syn_vectors, dtype=np.float64)
    if syn_vectors.ndim == 1:
        syn_vectors = syn_vectors[:, None]
    n = syn_vectors.shape[0]
    if n < 3:
        raise InsufficientDataError("need at least 3 synthetic vectors for deltas")
    base = fid(real, fit_gaussian(syn_vectors))
    scores = np.zeros(n)
    for i in range(n):
        rest = np.delete(syn_vectors, i, axis=0)
        scores[i] = fid(real, fit_gaussian(rest)) - base
    return scores


def pair_nearest_real(
    syn_mid: EmbeddingSet, real_mid: EmbeddingSet
) -> dict[str, str]:
    """Map each synthetic image to its nearest same-class real image.

    Distance is euclidean in the mid-level embedding space; ties go to the
    lexicographically smallest real image id.
    """
    real_by_class = real_mid.by_class()
    pairs: dict[str, str] = {}
    for rec in syn_mid.records:
        candidates = real_by_class.get(rec.class_id)
        if not candidates:
            raise ValidationError(
                f"no real images of class {rec.class_id} to pair with {rec.image_id!r}"
            )
        best = min(
            candidates,
            key=lambda r: (float(np.linalg.norm(rec.vector - r.vector)), r.image_id),
        )
        pairs[rec.image_id] = best.image_id
    return pairs


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; constant vectors map to all-0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        return np.full(scores.shape, 0.5)
    return (scores - lo) / (hi - lo)


def aggregate_scores(
    per_metric: Mapping[str, Sequence[float] | np.ndarray], kind: str
) -> np.ndarray:
    """Per-image ME/MD/MX/MN aggregate of min-max-normalized metric scores."""
    kind = kind.upper()
    if kind not in AGGREGATE_KINDS:
        raise ValidationError(f"unknown aggregate kind {kind!r}")
    if not per_metric:
        raise ValidationError("no metrics to aggregate")
    lengths = {name: len(np.asarray(v)) for name, v in per_metric.items()}
    if len(set(lengths.values())) != 1:
        raise DimensionError(f"score vectors differ in length: {lengths}")
    stacked = np.stack([minmax_normalize(np.asarray(v)) for v in per_metric.values()])
    if kind == "ME":
        return stacked.mean(axis=0)
    if kind == "MD":
        return np.median(stacked, axis=0)
    if kind == "MX":
        return stacked.max(axis=0)
    return stacked.min(axis=0)
