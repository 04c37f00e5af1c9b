"""Hungarian-matched segmentation metrics: MoF, IoU (Jaccard) and segment F1."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset import BACKGROUND, Dataset, label_runs
from .decoding import BACKGROUND_LABEL

PROTOCOLS = ("breakfast", "yti", "salads")
F1_FRAMES_PER_SEGMENT = 15


@dataclass(frozen=True)
class ConfusionCounts:
    """Frame co-occurrence of predicted labels (rows) and ground-truth classes (columns).

    Background predictions and background ground truth are not part of the matrix.
    """

    counts: np.ndarray
    predicted_labels: tuple
    gt_classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_counts(preds: Sequence[np.ndarray], gts: Sequence[Sequence[str]],
                     predicted_labels=None, gt_classes=None) -> ConfusionCounts:
    preds = [np.asarray(p) for p in preds]
    if predicted_labels is None:
        found = set()
        for p in preds:
            found.update(int(x) for x in np.unique(p))
        found.discard(BACKGROUND_LABEL)
        predicted_labels = sorted(found)
    if gt_classes is None:
        found = set()
        for g in gts:
            found.update(g)
        found.discard(BACKGROUND)
        gt_classes = sorted(found)
    row = {lab: i for i, lab in enumerate(predicted_labels)}
    col = {c: j for j, c in enumerate(gt_classes)}
    counts = np.zeros((len(predicted_labels), len(gt_classes)), dtype=np.int64)
    for p, g in zip(preds, gts):
        if len(p) != len(g):
            raise ValueError("prediction and ground truth lengths differ")
        for lab, cls in zip(p.tolist(), g):
            if lab in row and cls in col:
                counts[row[lab], col[cls]] += 1
    return ConfusionCounts(counts, tuple(predicted_labels), tuple(gt_classes))


def hungarian_match(cc: ConfusionCounts) -> dict:
    """One-to-one predicted-label -> class mapping maximizing matched frames.

    Predicted labels left without a class (more labels than classes) map to
    background. The count matrix is padded square and its negation minimized.
    """
    P, G = cc.counts.shape
    mapping = {lab: BACKGROUND for lab in cc.predicted_labels}
    if P == 0 or G == 0:
        return mapping
    n = max(P, G)
    cost = np.zeros((n, n))
    cost[:P, :G] = -cc.counts
    rows, cols = linear_sum_assignment(cost)
    for r, c in zip(rows, cols):
        if r < P and c < G:
            mapping[cc.predicted_labels[r]] = cc.gt_classes[c]
    return mapping


def matched_total(cc: ConfusionCounts, mapping: Mapping) -> int:
    col = {c: j for j, c in enumerate(cc.gt_classes)}
    return int(sum(
        cc.counts[i, col[mapping[lab]]]
        for i, lab in enumerate(cc.predicted_labels)
        if mapping.get(lab, BACKGROUND) in col
    ))


def apply_mapping(pred, mapping: Mapping) -> np.ndarray:
    """Translate predicted labels into class names; unmatched labels become background."""
    return np.array(
        [BACKGROUND if lab == BACKGROUND_LABEL else mapping.get(lab, BACKGROUND) for lab in np.asarray(pred).tolist()],
        dtype=object,
    )


def _flatten(preds, gts, mapping):
    if isinstance(preds, np.ndarray) and preds.ndim == 1:
        preds, gts = [preds], [gts]
    mapped = np.concatenate([apply_mapping(p, mapping) for p in preds]) if len(preds) else np.array([], dtype=object)
    truth = np.concatenate([np.asarray(list(g), dtype=object) for g in gts]) if len(gts) else np.array([], dtype=object)
    if mapped.shape != truth.shape:
        raise ValueError("prediction and ground truth lengths differ")
    return mapped, truth


def mof(pred, gt, mapping: Mapping, include_background: bool = True) -> float:
    """Mean over frames: fraction of frames whose mapped prediction equals the ground truth.

    ``pred``/``gt`` are one video or parallel lists of videos. Without background,
    frames whose ground truth is background are dropped entirely.
    """
    mapped, truth = _flatten(pred, gt, mapping)
    if not include_background:
        keep = truth != BACKGROUND
        mapped, truth = mapped[keep], truth[keep]
    if len(truth) == 0:
        return 0.0
    return float(np.mean(mapped == truth))


def iou(pred, gt, mapping: Mapping, include_background: bool = True) -> float:
    """Mean Jaccard index over ground-truth classes (background counted iff requested)."""
    mapped, truth = _flatten(pred, gt, mapping)
    classes = sorted(set(truth.tolist()))
    if not include_background and BACKGROUND in classes:
        classes.remove(BACKGROUND)
    scores = []
    for c in classes:
        p, g = mapped == c, truth == c
        union = np.count_nonzero(p | g)
        if union:
            scores.append(np.count_nonzero(p & g) / union)
    return float(np.mean(scores)) if scores else 0.0


def f1_segments(pred, gt, mapping: Mapping, frames_per_segment: int = F1_FRAMES_PER_SEGMENT,
                rng_seed: Optional[int] = None, mode: str = "exhaustive",
                include_background: bool = True) -> tuple[float, float, float]:
    """Segment-level F1, precision and recall.

    A predicted segment (maximal run of one label) is correct when at least half
    of its checked frames carry its mapped class in the ground truth. ``sampled``
    checks ``min(frames_per_segment, length)`` frames drawn without replacement;
    ``exhaustive`` checks all of them. A ground-truth segment is recalled when a
    correct predicted segment of its class overlaps it.
    """
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(pred, np.ndarray) and pred.ndim == 1:
        pred, gt = [pred], [gt]
    rng = np.random.default_rng(rng_seed) if mode == "sampled" else None
    n_pred = n_correct = n_gt = n_hit = 0
    for p, g in zip(pred, gt):
        mapped = apply_mapping(p, mapping)
        truth = np.asarray(list(g), dtype=object)
        gt_runs = [r for r in label_runs(truth.tolist())
                   if include_background or r[0] != BACKGROUND]
        hit = [False] * len(gt_runs)
        for cls, start, stop in label_runs(mapped.tolist()):
            if not include_background and cls == BACKGROUND:
                continue
            n_pred += 1
            frames = np.arange(start, stop)
            if mode == "sampled":
                frames = rng.choice(frames, size=min(frames_per_segment, len(frames)), replace=False)
            if 2 * np.count_nonzero(truth[frames] == cls) < len(frames):
                continue
            n_correct += 1
            for i, (gcls, gs, ge) in enumerate(gt_runs):
                if gcls == cls and gs < stop and start < ge:
                    hit[i] = True
        n_gt += len(gt_runs)
        n_hit += sum(hit)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_hit / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f1, precision, recall


@dataclass(frozen=True)
class MetricReport:
    mof: float
    iou: float
    f1: float
    precision: float
    recall: float
    with_background: bool


@dataclass
class Evaluation:
    protocol: str
    with_bg: MetricReport
    without_bg: MetricReport
    mapping: dict = field(default_factory=dict)
    activity_accuracy: Optional[float] = None

    @property
    def headline(self) -> MetricReport:
        """YouTube Instructions reports without background; the others with."""
        return self.without_bg if self.protocol == "yti" else self.with_bg

    def as_dict(self) -> dict:
        out = {"protocol": self.protocol}
        for tag, rep in (("bg", self.with_bg), ("nobg", self.without_bg)):
            for k, v in asdict(rep).items():
                if k != "with_background":
                    out[f"{k}_{tag}"] = v
        out["matched"] = sum(1 for v in self.mapping.values() if v != BACKGROUND)
        out["unmatched"] = sum(1 for v in self.mapping.values() if v == BACKGROUND)
        if self.activity_accuracy is not None:
            out["activity_accuracy"] = self.activity_accuracy
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.as_dict().items())


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def evaluate(gt: Dataset | Sequence, segmentations: Sequence, protocol: str = "breakfast",
             f1_mode: str = "exhaustive", rng_seed: Optional[int] = None) -> Evaluation:
    """Global Hungarian matching over all videos, then every metric in both background variants.

    ``segmentations`` holds label arrays or objects with a ``labels`` attribute, in
    the same video order as ``gt``.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    gts = gt.ground_truth if isinstance(gt, Dataset) else gt
    if gts is None:
        raise ValueError("dataset carries no ground truth")
    labels = [np.asarray(getattr(g, "labels", g)) for g in gts]
    preds = [np.asarray(getattr(s, "labels", s)) for s in segmentations]
    if len(preds) != len(labels):
        raise ValueError("one segmentation per video is required")
    cc = confusion_counts(preds, labels)
    mapping = hungarian_match(cc)
    reports = []
    for with_bg in (True, False):
        f1, p, r = f1_segments(preds, labels, mapping, rng_seed=rng_seed, mode=f1_mode,
                               include_background=with_bg)
        reports.append(MetricReport(
            mof(preds, labels, mapping, with_bg), iou(preds, labels, mapping, with_bg),
            f1, p, r, with_bg,
        ))
    return Evaluation(protocol, reports[0], reports[1], mapping)


def activity_accuracy(video_sets: Sequence[int], activities: Sequence[str]) -> float:
    """Fraction of videos whose set is Hungarian-matched to their activity ("mean over videos")."""
    sets = sorted(set(video_sets))
    acts = sorted(set(activities))
    cc = confusion_counts([np.asarray(video_sets)], [list(activities)], sets, acts)
    mapping = hungarian_match(cc)
    return matched_total(cc, mapping) / len(video_sets)


def boundary_displacements(pred, gt_labels, mapping: Mapping) -> np.ndarray:
    """Distance from every ground-truth change point to the nearest predicted one."""
    mapped = apply_mapping(pred, mapping)
    truth = np.asarray(list(gt_labels), dtype=object)
    gt_bounds = np.flatnonzero(truth[1:] != truth[:-1]) + 1
    pred_bounds = np.flatnonzero(mapped[1:] != mapped[:-1]) + 1
    if len(gt_bounds) == 0:
        return np.zeros(0)
    if len(pred_bounds) == 0:
        return np.full(len(gt_bounds), float(len(truth)))
    return np.min(np.abs(gt_bounds[:, None] - pred_bounds[None, :]), axis=1).astype(float)


SWEEP_COLUMNS = (
    "dataset", "K_prime", "K", "tau", "seed",
    "mof_bg", "mof_nobg", "iou_bg", "iou_nobg",
    "f1_bg", "f1_nobg", "precision_bg", "precision_nobg", "recall_bg", "recall_nobg",
    "activity_accuracy",
)


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) if v is not None else "" for k, v in row.items()})
    return buf.getvalue()
