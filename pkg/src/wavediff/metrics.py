"""Automatic evaluation battery for generated audio.

Feature-space Frechet distance, inception score and its pairwise (mIS) and
marginal-aware (AM) variants, and the number of statistically-different
K-means bins, all over a pluggable feature extractor. A small trainable
spectral classifier serves as the desk-scale extractor, exposing its
penultimate layer as the feature map.

Probabilities are clamped at 1e-12 before every log/KL so one-hot rows stay
finite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np

from .numerics import ops
from .numerics.tensor import ParamStore, Tensor, backward, no_grad
from .trainer import Adam

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class MetricReport:
    fid: float | None = None
    inception_score: float | None = None
    modified_inception_score: float | None = None
    am_score: float | None = None
    ndb: int | None = None
    ndb_over_k: float | None = None
    fid_class_mean: float | None = None
    fid_class_std: float | None = None
    accuracy: float | None = None
    config: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class FeatureExtractor:
    """Maps a waveform batch to (features [n, D_f], class probabilities [n, K])."""

    feature_dim: int
    num_classes: int

    def extract_batch(self, waves: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


def gaussian_fit(feats: np.ndarray) -> GaussianFit:
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if feats.shape[0] < 2:
        raise ValueError("need at least 2 samples to fit a Gaussian")
    mean = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return GaussianFit(mean, cov)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    return (eigvecs * np.sqrt(np.maximum(eigvals, 0.0))) @ eigvecs.T


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Wasserstein-2 distance between Gaussians fitted to the two feature sets."""
    fa, fb = gaussian_fit(feats_a), gaussian_fit(feats_b)
    if fa.mean.shape != fb.mean.shape:
        raise ValueError(f"feature dims differ: {fa.mean.shape} vs {fb.mean.shape}")
    delta = float(np.sum((fa.mean - fb.mean) ** 2))
    sq_a = _psd_sqrt(fa.cov)
    inner = sq_a @ fb.cov @ sq_a
    cross_eigs = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = float(np.sum(np.sqrt(np.maximum(cross_eigs, 0.0))))
    return delta + float(np.trace(fa.cov) + np.trace(fb.cov)) - 2.0 * tr_cross


def _validated_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError("probs must be a nonempty [n, K] array")
    if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must be probability distributions")
    return np.maximum(probs, PROB_CLAMP)


def inception_score(probs: np.ndarray) -> float:
    """exp of the mean KL between each row and the marginal label distribution."""
    p = _validated_probs(probs)
    marginal = np.maximum(p.mean(axis=0), PROB_CLAMP)
    kl = np.sum(p * (np.log(p) - np.log(marginal)[None, :]), axis=1)
    return float(np.exp(kl.mean()))


def modified_inception_score(probs: np.ndarray) -> float:
    """exp of the mean pairwise KL over all n^2 ordered row pairs (i=j included).

    The pair average factorizes, so no explicit pair loop: mean_ij KL(p_i|p_j)
    = mean_i sum(p_i log p_i) - dot(mean_i p_i, mean_j log p_j).
    """
    p = _validated_probs(probs)
    if p.shape[0] < 2:
        raise ValueError("need at least 2 rows for pairwise diversity")
    logs = np.log(p)
    self_term = float(np.mean(np.sum(p * logs, axis=1)))
    cross_term = float(np.dot(p.mean(axis=0), logs.mean(axis=0)))
    return float(np.exp(self_term - cross_term))


def am_score(probs_train: np.ndarray, probs_gen: np.ndarray) -> float:
    """KL(train marginal | generated marginal) plus mean generated-row entropy."""
    pt = _validated_probs(probs_train)
    pg = _validated_probs(probs_gen)
    mt = np.maximum(pt.mean(axis=0), PROB_CLAMP)
    mg = np.maximum(pg.mean(axis=0), PROB_CLAMP)
    kl = float(np.sum(mt * (np.log(mt) - np.log(mg))))
    entropy = float(np.mean(-np.sum(pg * np.log(pg), axis=1)))
    return kl + entropy


def _kmeans(feats: np.ndarray, k: int, rng: np.random.Generator, iters=100, tol=1e-6):
    """Seeded k-means++ initialization plus Lloyd iterations; returns centroids."""
    n = feats.shape[0]
    centroids = np.empty((k, feats.shape[1]), dtype=np.float64)
    centroids[0] = feats[rng.integers(n)]
    dist = np.sum((feats - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = dist.sum()
        if total <= 0.0:
            centroids[i:] = centroids[0]
            break
        centroids[i] = feats[rng.choice(n, p=dist / total)]
        dist = np.minimum(dist, np.sum((feats - centroids[i]) ** 2, axis=1))
    for _ in range(iters):
        assign = _nearest(feats, centroids)
        new = centroids.copy()
        for j in range(k):
            members = feats[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.max(np.sum((new - centroids) ** 2, axis=1)))
        centroids = new
        if shift < tol:
            break
    return centroids


def _nearest(feats: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = np.sum(feats**2, axis=1)[:, None] - 2.0 * feats @ centroids.T + np.sum(
        centroids**2, axis=1
    )[None, :]
    return d.argmin(axis=1)


def ndb(
    feats_train: np.ndarray,
    feats_gen: np.ndarray,
    k: int = 50,
    significance: float = 0.05,
    seed: int = 0,
) -> tuple[int, float]:
    """Number of K-means bins whose occupancy differs significantly between sets.

    Training features are clustered into k bins; both sets are assigned to
    nearest centroids and each bin gets a pooled two-proportion z-test at the
    given significance. Deterministic given the clustering seed.
    """
    feats_train = np.atleast_2d(np.asarray(feats_train, dtype=np.float64))
    feats_gen = np.atleast_2d(np.asarray(feats_gen, dtype=np.float64))
    n_t, n_g = feats_train.shape[0], feats_gen.shape[0]
    if n_t < k:
        raise ValueError(f"need at least k={k} training samples, got {n_t}")
    centroids = _kmeans(feats_train, k, np.random.default_rng(seed))
    bins_t = np.bincount(_nearest(feats_train, centroids), minlength=k)
    bins_g = np.bincount(_nearest(feats_gen, centroids), minlength=k)
    threshold = NormalDist().inv_cdf(1.0 - significance / 2.0)
    count = 0
    for j in range(k):
        p_t = bins_t[j] / n_t
        p_g = bins_g[j] / n_g
        pooled = (bins_t[j] + bins_g[j]) / (n_t + n_g)
        denom = pooled * (1.0 - pooled) * (1.0 / n_t + 1.0 / n_g)
        if denom <= 0.0:
            continue
        if abs(p_t - p_g) / np.sqrt(denom) > threshold:
            count += 1
    return count, count / k


def fid_class(
    gen_by_label: dict[int, np.ndarray], train_by_label: dict[int, np.ndarray]
) -> tuple[float, float]:
    """Per-label FID summarized as (mean, population std) over labels."""
    labels = sorted(train_by_label)
    missing = [lbl for lbl in labels if lbl not in gen_by_label]
    if missing or sorted(gen_by_label) != labels:
        raise ValueError(f"label sets differ (missing from generated: {missing})")
    scores = np.array([fid(gen_by_label[lbl], train_by_label[lbl]) for lbl in labels])
    return float(scores.mean()), float(scores.std())


def classifier_accuracy(extractor: FeatureExtractor, waves: np.ndarray, labels) -> float:
    _, probs = extractor.extract_batch(np.asarray(waves))
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


class SpectralToneClassifier(FeatureExtractor):
    """Tiny trainable classifier on log-magnitude spectra.

    One hidden layer; its post-ReLU activations are the feature map (D_f
    defaults to 64). Good enough to separate the synthetic tone corpus, which
    is all the desk-scale metric suite needs.
    """

    def __init__(self, input_length: int, num_classes: int, feature_dim: int = 64, seed: int = 0):
        self.input_length = input_length
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        n_bins = input_length // 2 + 1
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        scale1 = 1.0 / np.sqrt(n_bins)
        scale2 = 1.0 / np.sqrt(feature_dim)
        self.params.add("fc1.w", (rng.random((feature_dim, n_bins)) * 2 - 1) * scale1)
        self.params.add("fc1.b", np.zeros(feature_dim))
        self.params.add("fc2.w", (rng.random((num_classes, feature_dim)) * 2 - 1) * scale2)
        self.params.add("fc2.b", np.zeros(num_classes))

    def _spectra(self, waves: np.ndarray) -> np.ndarray:
        waves = np.atleast_2d(np.asarray(waves, dtype=np.float64))
        if waves.shape[1] != self.input_length:
            raise ValueError(f"expected length {self.input_length}, got {waves.shape[1]}")
        return np.log(np.abs(np.fft.rfft(waves, axis=1)) + 1e-6)

    def _logits(self, spectra) -> tuple[Tensor, Tensor]:
        hidden = ops.relu(ops.affine(spectra, self.params["fc1.w"], self.params["fc1.b"]))
        return ops.affine(hidden, self.params["fc2.w"], self.params["fc2.b"]), hidden

    def fit(self, waves: np.ndarray, labels, steps: int = 400, lr: float = 3e-3) -> float:
        """Full-batch Adam on cross-entropy; returns the final loss."""
        spectra = self._spectra(waves)
        labels = np.asarray(labels)
        opt = Adam(self.params, lr)
        loss_value = float("nan")
        for _ in range(steps):
            logits, _ = self._logits(spectra)
            loss = ops.cross_entropy(logits, labels)
            self.params.zero_grad()
            backward(loss)
            opt.step()
            loss_value = float(loss.data)
        return loss_value

    def extract_batch(self, waves: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            logits, hidden = self._logits(self._spectra(waves))
            probs = ops.softmax(logits, axis=-1)
        return hidden.data, probs.data
