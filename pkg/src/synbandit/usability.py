"""Usability scoring of synthetic images: the two-component U = [psi, phi].

psi (diversity-and-photorealism) works on mid-level embeddings through
per-image mean/std summaries measured against real/synthetic class
statistics. phi (feature cohesion) is the reciprocal KL divergence between
a synthetic image's normalized high-level features and a K-sample real
class prototype. Also here: the photorealism-distance / entropy / joint
objective trio and top-M subset selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .store import EmbeddingSet, FeatureRecord


class UsabilityError(Exception):
    pass


class MissingClassError(UsabilityError):
    pass


DEFAULT_EPS_KL = 1e-10
DEFAULT_PHI_CAP = 1e6
DISTANCE_METRICS = ("euclidean", "cosine", "mahalanobis")
MAHALANOBIS_RIDGE = 1e-6
KMEANS_ITERATIONS = 50


class MuSigma(NamedTuple):
    mu: float
    sigma: float


def _dist2(a: MuSigma | tuple[float, float], b: MuSigma | tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass
class ClassStatistics:
    """Per-class and leave-class-out (mu, sigma) summaries for both domains.

    Class-level statistics pool each image's scalar feature mean; sigma is
    the population std of those pooled means.
    """

    num_classes: int
    real_class: dict[int, MuSigma]
    syn_class: dict[int, MuSigma]
    real_excl: dict[int, MuSigma]
    syn_excl: dict[int, MuSigma]


def _per_image_means(emb_set: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    means = np.array([float(np.mean(r.vector)) for r in emb_set.records])
    classes = emb_set.class_ids()
    return means, classes


def _pool(means: np.ndarray) -> MuSigma:
    return MuSigma(float(np.mean(means)), float(np.std(means)))


def compute_class_statistics(
    real: EmbeddingSet, syn: EmbeddingSet
) -> ClassStatistics:
    """Class-level and leave-class-out stats over per-image feature means."""
    if real.num_classes != syn.num_classes:
        raise MissingClassError(
            f"class counts differ: real {real.num_classes}, syn {syn.num_classes}"
        )
    real_means, real_cls = _per_image_means(real)
    syn_means, syn_cls = _per_image_means(syn)
    missing = set(np.unique(syn_cls)) - set(np.unique(real_cls))
    if missing:
        raise MissingClassError(
            f"classes present in synthetic set but absent in real: {sorted(missing)}"
        )

    def domain_stats(means: np.ndarray, cls: np.ndarray):
        per_class: dict[int, MuSigma] = {}
        excl: dict[int, MuSigma] = {}
        for c in sorted(set(int(x) for x in cls)):
            in_c = means[cls == c]
            per_class[c] = _pool(in_c)
            rest = means[cls != c]
            if rest.size:
                excl[c] = _pool(rest)
        return per_class, excl

    real_class, real_excl = domain_stats(real_means, real_cls)
    syn_class, syn_excl = domain_stats(syn_means, syn_cls)
    return ClassStatistics(
        num_classes=real.num_classes,
        real_class=real_class,
        syn_class=syn_class,
        real_excl=real_excl,
        syn_excl=syn_excl,
    )


def dps(
    record: FeatureRecord,
    stats: ClassStatistics,
    weights: tuple[float, float] = (0.5, 0.5),
) -> tuple[float, float, float]:
    """Diversity-and-photorealism score of one synthetic image.

    Returns (psi, P, D). P = 1/(1 + d2 to the real class stats) rewards
    proximity to real intra-class statistics; D = d2 to the synthetic class
    stats damped by 1 + d2 to the real leave-class-out stats rewards spread
    that stays near the real manifold. psi = w_p*P + w_d*D.
    """
    c = record.class_id
    try:
        real_c = stats.real_class[c]
        syn_c = stats.syn_class[c]
        real_ex = stats.real_excl[c]
    except KeyError as exc:
        raise MissingClassError(f"no statistics for class {c}") from exc
    point = record.summary_mean_std()
    p_term = 1.0 / (1.0 + _dist2(point, real_c))
    d_term = _dist2(point, syn_c) / (1.0 + _dist2(point, real_ex))
    w_p, w_d = weights
    return w_p * p_term + w_d * d_term, p_term, d_term


def normalize_features(vector: np.ndarray, eps: float = DEFAULT_EPS_KL) -> np.ndarray:
    """Map activations onto the strictly positive simplex.

    Negative components are clamped to zero (activations are rectified),
    then every component gets +eps before dividing by the sum.
    """
    v = np.clip(np.asarray(vector, dtype=np.float64), 0.0, None) + eps
    return v / v.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = DEFAULT_EPS_KL) -> float:
    """KL(p || q) in nats after eps-smoothing both inputs.

    Inputs must already be near the probability simplex (sum within 1e-6
    of one); smoothing guarantees a finite result.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if abs(float(vec.sum()) - 1.0) > 1e-6:
            raise ValueError(f"{name} is not on the simplex (sum {vec.sum()!r})")
    p = normalize_features(p, eps)
    q = normalize_features(q, eps)
    return float(np.sum(p * (np.log(p) - np.log(q))))


@dataclass
class RealClassPrototype:
    """Averaged high-level features of K sampled real images of one class."""

    class_id: int
    k: int
    mean_feature: np.ndarray
    normalized: np.ndarray
    sample_ids: list[str] = field(default_factory=list)


def build_prototypes(
    real_high: EmbeddingSet,
    k: int,
    seed: int = 0,
    eps: float = DEFAULT_EPS_KL,
) -> dict[int, RealClassPrototype]:
    """One prototype per class from min(k, class size) sampled real records."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    prototypes: dict[int, RealClassPrototype] = {}
    for c, members in sorted(real_high.by_class().items()):
        if len(members) > k:
            idx = sorted(rng.choice(len(members), size=k, replace=False))
            chosen = [members[i] for i in idx]
        else:
            chosen = members
        mean_feat = np.mean([m.vector for m in chosen], axis=0).astype(np.float64)
        prototypes[c] = RealClassPrototype(
            class_id=c,
            k=k,
            mean_feature=mean_feat,
            normalized=normalize_features(mean_feat, eps),
            sample_ids=[m.image_id for m in chosen],
        )
    return prototypes


def fcs(
    record: FeatureRecord,
    prototype: RealClassPrototype,
    eps: float = DEFAULT_EPS_KL,
    cap: float = DEFAULT_PHI_CAP,
) -> float:
    """Feature cohesion score: 1 / (KL(prototype || image) + eps), capped."""
    if record.class_id != prototype.class_id:
        raise MissingClassError(
            f"record class {record.class_id} != prototype class {prototype.class_id}"
        )
    if record.vector.shape != prototype.mean_feature.shape:
        raise ValueError(
            f"dimension mismatch: {record.vector.shape} vs {prototype.mean_feature.shape}"
        )
    f_hat = normalize_features(record.vector, eps)
    divergence = float(np.sum(prototype.normalized * (np.log(prototype.normalized) - np.log(f_hat))))
    divergence = max(divergence, 0.0)
    return min(1.0 / (divergence + eps), cap)


@dataclass
class UsabilityScore:
    """U = [psi, phi] for one synthetic image, with psi's P/D components."""

    image_id: str
    psi: float
    phi: float
    p_term: float
    d_term: float


def photorealism_distance(
    syn_vec: np.ndarray,
    real: EmbeddingSet | np.ndarray,
    metric: str = "euclidean",
) -> float:
    """Distance from a synthetic feature vector to the real-set feature mean."""
    if metric not in DISTANCE_METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    vectors = real.vectors().astype(np.float64) if isinstance(real, EmbeddingSet) else np.asarray(real, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[None, :]
    if vectors.shape[0] == 0:
        raise ValueError("real set is empty")
    v = np.asarray(syn_vec, dtype=np.float64)
    if v.shape != (vectors.shape[1],):
        raise ValueError(f"dimension mismatch: {v.shape} vs ({vectors.shape[1]},)")
    mean = vectors.mean(axis=0)
    if metric == "euclidean":
        return float(np.linalg.norm(v - mean))
    if metric == "cosine":
        nv, nm = float(np.linalg.norm(v)), float(np.linalg.norm(mean))
        if nv == 0.0 or nm == 0.0:
            return 1.0
        return float(1.0 - (v @ mean) / (nv * nm))
    cov = np.cov(vectors, rowvar=False, ddof=1) if vectors.shape[0] > 1 else np.zeros((v.shape[0], v.shape[0]))
    cov = np.atleast_2d(cov) + MAHALANOBIS_RIDGE * np.eye(v.shape[0])
    diff = v - mean
    return float(math.sqrt(diff @ np.linalg.solve(cov, diff)))


def similarity_from_distance(distance: float) -> float:
    """Map a distance to a higher-is-better similarity in (0, 1]."""
    return 1.0 / (1.0 + distance)


def kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    iterations: int = KMEANS_ITERATIONS,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ followed by a fixed number of Lloyd iterations.

    Empty clusters keep their previous centroid. Returns (labels, centers).
    """
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iterations):
        dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dists, axis=1)
        for j in range(k):
            members = points[labels == j]
            if members.shape[0]:
                centers[j] = members.mean(axis=0)
    return labels, centers


def dataset_entropy(syn: EmbeddingSet, k: int | None = None, seed: int = 0) -> float:
    """Entropy of the k-means cluster-occupancy distribution, in nats.

    k defaults to the set's class count. Points are sorted
    lexicographically before clustering so the result is invariant to
    record order.
    """
    n = len(syn.records)
    if k is None:
        k = syn.num_classes
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    points = syn.vectors().astype(np.float64)
    order = np.lexsort(points.T[::-1])
    labels, _ = kmeans(points[order], k, np.random.default_rng(seed))
    _, counts = np.unique(labels, return_counts=True)
    freq = counts / n
    return float(-np.sum(freq * np.log(freq)))


def joint_objective(photorealism_score: float, entropy_score: float, alpha: float) -> float:
    """alpha-blend of a photorealism similarity and a diversity entropy."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * photorealism_score + (1.0 - alpha) * entropy_score


def select_top_m(scores: Sequence[tuple[str, float]], m: int) -> list[str]:
    """The m highest-scoring ids, descending; ties broken by ascending id."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > len(scores):
        raise ValueError(f"m={m} exceeds {len(scores)} scored images")
    if any(not math.isfinite(s) for _, s in scores):
        raise ValueError("scores must be finite")
    ranked = sorted(scores, key=lambda item: (-item[1], item[0]))
    return [image_id for image_id, _ in ranked[:m]]


def compute_dps_scores(
    real_mid: EmbeddingSet,
    syn_mid: EmbeddingSet,
    weights: tuple[float, float] = (0.5, 0.5),
) -> dict[str, tuple[float, float, float]]:
    """(psi, P, D) per synthetic image id, in record order."""
    stats = compute_class_statistics(real_mid, syn_mid)
    return {rec.image_id: dps(rec, stats, weights) for rec in syn_mid.records}


def compute_fcs_scores(
    real_high: EmbeddingSet,
    syn_high: EmbeddingSet,
    k: int,
    seed: int = 0,
    eps: float = DEFAULT_EPS_KL,
    cap: float = DEFAULT_PHI_CAP,
) -> dict[str, float]:
    """phi per synthetic image id, in record order."""
    prototypes = build_prototypes(real_high, k, seed=seed, eps=eps)
    scores: dict[str, float] = {}
    for rec in syn_high.records:
        proto = prototypes.get(rec.class_id)
        if proto is None:
            raise MissingClassError(f"no real prototype for class {rec.class_id}")
        scores[rec.image_id] = fcs(rec, proto, eps=eps, cap=cap)
    return scores


def score_usability(
    real_mid: EmbeddingSet,
    syn_mid: EmbeddingSet,
    real_high: EmbeddingSet,
    syn_high: EmbeddingSet,
    weights: tuple[float, float] = (0.5, 0.5),
    k: int = 10,
    seed: int = 0,
    eps: float = DEFAULT_EPS_KL,
    cap: float = DEFAULT_PHI_CAP,
) -> list[UsabilityScore]:
    """Full U = [psi, phi] scoring of a synthetic set against its real set."""
    mid_ids = [r.image_id for r in syn_mid.records]
    high_ids = {r.image_id for r in syn_high.records}
    if set(mid_ids) != high_ids:
        raise UsabilityError(
            "synthetic mid-level and high-level sets cover different image ids"
        )
    dps_scores = compute_dps_scores(real_mid, syn_mid, weights)
    fcs_scores = compute_fcs_scores(real_high, syn_high, k, seed=seed, eps=eps, cap=cap)
    out = []
    for image_id in mid_ids:
        psi, p_term, d_term = dps_scores[image_id]
        out.append(
            UsabilityScore(
                image_id=image_id,
                psi=psi,
                phi=fcs_scores[image_id],
                p_term=p_term,
                d_term=d_term,
            )
        )
    return out
