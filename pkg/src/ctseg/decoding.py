"""Order-constrained Viterbi decoding of a video against temporally ordered clusters.

A label path visits ordered clusters ``1..K``: it starts at 1, ends at K, and each
frame either keeps the previous label or advances by one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusterModel
from .dataset import BACKGROUND, FeatureSequence

BACKGROUND_LABEL = -1
BRUTE_FORCE_MAX_N = 16
BRUTE_FORCE_MAX_K = 5


class DecodingError(ValueError):
    pass


@dataclass(frozen=True)
class Segmentation:
    """Per-frame labels (``BACKGROUND_LABEL`` or an ordered cluster index ``1..K``)."""

    labels: np.ndarray
    score: float

    def __len__(self):
        return len(self.labels)

    def foreground(self) -> np.ndarray:
        return self.labels[self.labels != BACKGROUND_LABEL]


def path_score(logp: np.ndarray, labels) -> float:
    """Sum of ``logp[n, labels[n] - 1]`` in frame order (exactly rounded)."""
    labels = np.asarray(labels)
    return math.fsum(logp[np.arange(len(labels)), labels - 1])


def is_monotone_path(labels, K: int) -> bool:
    labels = np.asarray(labels)
    labels = labels[labels != BACKGROUND_LABEL]
    if len(labels) == 0:
        return False
    steps = np.diff(labels)
    return bool(labels[0] == 1 and labels[-1] == K and np.all((steps == 0) | (steps == 1)))


def _check_emissions(logp) -> np.ndarray:
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2:
        raise DecodingError("emission matrix must be N x K")
    N, K = logp.shape
    if K < 1:
        raise DecodingError("need at least one cluster")
    if N < K:
        raise DecodingError(f"{N} frames cannot visit all {K} ordered clusters")
    if not np.all(np.isfinite(logp)):
        raise DecodingError("emission matrix has non-finite entries")
    return logp


def viterbi_decode(logp) -> Segmentation:
    """Best monotone full-coverage path through an ``N x K`` log-emission matrix.

    Among equally scoring paths the lexicographically smallest one is returned,
    i.e. the path that stays in a cluster as long as possible. A backward pass
    computes the best completion score from every (frame, cluster) cell and a
    forward pass then follows it greedily, preferring to stay.
    """
    logp = _check_emissions(logp)
    N, K = logp.shape
    # best[n, k]: best score of frames n..N-1 given frame n sits in cluster k and the
    # path ends in cluster K-1; infeasible cells hold -inf
    best = np.full((N, K), -np.inf)
    best[N - 1, K - 1] = logp[N - 1, K - 1]
    for n in range(N - 2, -1, -1):
        nxt = best[n + 1]
        cont = nxt.copy()
        cont[:-1] = np.maximum(nxt[:-1], nxt[1:])
        best[n] = logp[n] + cont
    labels = np.empty(N, dtype=np.int64)
    k = 0
    labels[0] = 1
    for n in range(1, N):
        if k + 1 < K and best[n, k + 1] > best[n, k]:
            k += 1
        labels[n] = k + 1
    return Segmentation(labels, path_score(logp, labels))


def monotone_paths(N: int, K: int):
    """All full-coverage monotone label paths; an advance happens at each chosen frame."""
    for advances in itertools.combinations(range(1, N), K - 1):
        labels = np.ones(N, dtype=np.int64)
        for a in advances:
            labels[a:] += 1
        yield labels


def brute_force_decode(logp) -> Segmentation:
    """Exhaustive search over all monotone paths (test oracle, small inputs only)."""
    logp = _check_emissions(logp)
    N, K = logp.shape
    if N > BRUTE_FORCE_MAX_N or K > BRUTE_FORCE_MAX_K:
        raise DecodingError(
            f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, K <= {BRUTE_FORCE_MAX_K}"
        )
    best_key, best_labels = None, None
    for labels in monotone_paths(N, K):
        s = path_score(logp, labels)
        key = (-s, tuple(labels))
        if best_key is None or key < best_key:
            best_key, best_labels = key, labels
    return Segmentation(best_labels, -best_key[0])


def decode_video(seq: FeatureSequence, model: ClusterModel, order=None) -> Segmentation:
    """Label background frames, then Viterbi-decode the rest against the ordered clusters.

    ``order`` overrides the model's temporal cluster order with another permutation
    (e.g. one proposed by an external ordering model).
    """
    frames = seq.frames
    if frames.shape[1] != model.dim:
        raise DecodingError(f"{seq.video_id}: features have {frames.shape[1]} dims, model {model.dim}")
    if order is not None:
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(model.K)):
            raise DecodingError("order must be a permutation of the cluster indices")
    bg = model.background_mask(frames)
    keep = np.flatnonzero(~bg)
    if len(keep) < model.K:
        raise DecodingError(
            f"{seq.video_id}: fewer than K non-background frames ({len(keep)} < {model.K})"
        )
    em = model.ordered_log_likelihoods(frames[keep], order)
    inner = viterbi_decode(em)
    labels = np.full(seq.n_frames, BACKGROUND_LABEL, dtype=np.int64)
    labels[keep] = inner.labels
    return Segmentation(labels, inner.score)


# --------------------------------------------------------------------------- files


def format_labels(labels) -> str:
    return "".join(
        f"{BACKGROUND}\n" if lab == BACKGROUND_LABEL else f"{int(lab)}\n" for lab in labels
    )


def write_segmentation(path, seg: Segmentation) -> None:
    Path(path).write_text(format_labels(seg.labels))


def read_segmentation(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for line in fh:
            tok = line.strip()
            if tok:
                out.append(BACKGROUND_LABEL if tok == BACKGROUND else int(tok))
    return np.array(out, dtype=np.int64)
