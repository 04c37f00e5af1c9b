"""Unknown-activity extension: bag-of-words video vectors, video clustering, per-set discovery."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .clustering import _assign, build_cluster_model, kmeans, sq_distances
from .dataset import Dataset
from .decoding import BACKGROUND_LABEL, Segmentation, decode_video
from .embedding import EmbeddingConfig, EmbeddingModel, embed_dataset, train_embedding

SIGMA_FLOOR = 1e-6
VIDEO_REPRESENTATIONS = ("soft", "hard", "mean")


@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.centers.shape[0] < 1:
            raise ValueError("codebook needs at least one word")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def size(self) -> int:
        return self.centers.shape[0]


def build_codebook(embedded: Dataset, V: int, rng_seed: int) -> Codebook:
    """k-means vocabulary over all embedded frames; bandwidth = mean distance to assigned word."""
    X = embedded.all_frames()
    centers, assign = kmeans(X, V, rng_seed)
    sigma = float(np.mean(np.linalg.norm(X - centers[assign], axis=1)))
    return Codebook(centers, max(sigma, SIGMA_FLOOR))


def soft_assignments(frames, codebook: Codebook) -> np.ndarray:
    """Per-frame Gaussian-kernel weights over the words, each row summing to one."""
    logits = -sq_distances(np.asarray(frames, dtype=np.float64), codebook.centers) / (2 * codebook.sigma ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def bow_vector(frames, codebook: Codebook, mode: str = "soft") -> np.ndarray:
    """L1-normalized bag-of-words histogram of one video's embedded frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("cannot build a bag of words for an empty video")
    if mode == "soft":
        hist = soft_assignments(frames, codebook).sum(axis=0)
    elif mode == "hard":
        a, _ = _assign(frames, codebook.centers)
        hist = np.bincount(a, minlength=codebook.size).astype(np.float64)
    else:
        raise ValueError(f"unknown bag-of-words mode {mode!r}")
    return hist / hist.sum()


def video_vectors(embedded: Dataset, codebook: Optional[Codebook], representation: str = "soft") -> np.ndarray:
    """One row per video. ``mean`` skips quantization and mean-pools the embedded frames."""
    if representation == "mean":
        return np.array([s.frames.mean(axis=0) for s in embedded])
    return np.array([bow_vector(s.frames, codebook, representation) for s in embedded])


@dataclass(frozen=True)
class ActivityPartition:
    video_ids: tuple
    assignments: np.ndarray   # set index (0-based) per video

    @property
    def K_prime(self) -> int:
        return int(self.assignments.max()) + 1 if len(self.assignments) else 0

    def video_sets(self) -> list[list[int]]:
        return [np.flatnonzero(self.assignments == s).tolist() for s in range(self.K_prime)]

    def to_text(self) -> str:
        return "".join(f"{v} {int(a)}\n" for v, a in zip(self.video_ids, self.assignments))


def read_partition(path) -> dict[str, int]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            vid, s = line.split()
            out[vid] = int(s)
    return out


def cluster_videos(vectors, K_prime: int, rng_seed: int, video_ids=None, metric: str = "euclidean") -> ActivityPartition:
    vectors = np.asarray(vectors, dtype=np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = vectors / np.where(norms > 0, norms, 1.0)
    elif metric != "euclidean":
        raise ValueError(f"unknown metric {metric!r}")
    _, assign = kmeans(vectors, K_prime, rng_seed)
    if video_ids is None:
        video_ids = [str(i) for i in range(len(vectors))]
    return ActivityPartition(tuple(video_ids), assign)


@dataclass
class DiscoveryResult:
    segmentations: list
    partition: ActivityPartition
    cluster_models: list
    codebook: Optional[Codebook] = None
    set_embeddings: list = field(default_factory=list)


def discover(dataset: Dataset, model: EmbeddingModel, K_prime: int, K: int, tau: float,
             rng_seed: int, codebook_size: Optional[int] = None, representation: str = "soft",
             metric: str = "euclidean", set_embedding: Optional[EmbeddingConfig] = None,
             cluster_seed: Optional[int] = None, codebook_seed: Optional[int] = None,
             video_seed: Optional[int] = None) -> DiscoveryResult:
    """Discover activities and their subactions with one shared embedding.

    Labels of video set ``s`` (0-based) are offset by ``s * K``, giving
    ``K_prime * K`` distinct labels overall. Passing ``set_embedding`` retrains an
    embedding on each video set before its subaction clustering.

    Per-stage seeds default to ``rng_seed``.
    """
    cluster_seed = rng_seed if cluster_seed is None else cluster_seed
    codebook_seed = rng_seed if codebook_seed is None else codebook_seed
    video_seed = rng_seed if video_seed is None else video_seed
    embedded = embed_dataset(model, dataset)
    codebook = None
    if K_prime == 1:
        partition = ActivityPartition(tuple(dataset.video_ids), np.zeros(len(dataset), dtype=np.int64))
    else:
        if representation != "mean":
            V = codebook_size if codebook_size is not None else K_prime * K
            codebook = build_codebook(embedded, V, codebook_seed)
        vectors = video_vectors(embedded, codebook, representation)
        partition = cluster_videos(vectors, K_prime, video_seed, dataset.video_ids, metric)
    segs: list = [None] * len(dataset)
    models, set_models = [], []
    for s, members in enumerate(partition.video_sets()):
        if set_embedding is not None:
            local = train_embedding(dataset.subset(members), set_embedding)
            set_models.append(local)
            sub = embed_dataset(local, dataset.subset(members))
        else:
            sub = embedded.subset(members)
        n_frames = sum(seq.n_frames for seq in sub)
        if n_frames < K:
            raise ValueError(f"video set {s} has {n_frames} frames, too few for K={K} clusters")
        cm = build_cluster_model(sub, K, tau, cluster_seed)
        models.append(cm)
        for i, seq in zip(members, sub):
            seg = decode_video(seq, cm)
            labels = np.where(seg.labels == BACKGROUND_LABEL, BACKGROUND_LABEL, seg.labels + s * K)
            segs[i] = Segmentation(labels, seg.score)
    return DiscoveryResult(segs, partition, models, codebook, set_models)
