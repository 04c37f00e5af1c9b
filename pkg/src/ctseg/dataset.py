"""Per-frame feature sequences, ground truth, file IO and a synthetic generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

BACKGROUND = "background"

FSEQ_MAGIC = b"FSEQ1"
FEATURE_SUFFIXES = (".txt", ".fseq")
GT_SUFFIX = ".txt"
ACTIVITY_MAP = "activities.map"


class DatasetError(ValueError):
    """Raised when feature or ground-truth data violates the loader contract."""


def relative_timestamps(n_frames: int) -> np.ndarray:
    """Relative time of each frame, ``(n + 1) / N`` for 0-based ``n``."""
    if n_frames < 1:
        raise DatasetError("a sequence needs at least one frame")
    return np.arange(1, n_frames + 1, dtype=np.float64) / n_frames


@dataclass(frozen=True)
class FeatureSequence:
    video_id: str
    frames: np.ndarray
    timestamps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DatasetError(f"{self.video_id}: frames must be a 2-D matrix")
        if frames.shape[0] == 0:
            raise DatasetError(f"{self.video_id}: empty sequence (N_m = 0)")
        if not np.all(np.isfinite(frames)):
            raise DatasetError(f"{self.video_id}: non-finite feature values")
        frames.setflags(write=False)
        ts = self.timestamps
        if ts is None:
            ts = relative_timestamps(frames.shape[0])
        else:
            ts = np.asarray(ts, dtype=np.float64)
            if ts.shape != (frames.shape[0],):
                raise DatasetError(f"{self.video_id}: timestamp length mismatch")
        ts.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames: np.ndarray) -> "FeatureSequence":
        """Same video and timestamps, new per-frame features."""
        frames = np.asarray(frames)
        if frames.shape[0] != self.n_frames:
            raise DatasetError(f"{self.video_id}: replacement changes the frame count")
        return FeatureSequence(self.video_id, frames, self.timestamps)


@dataclass(frozen=True)
class GroundTruth:
    video_id: str
    labels: tuple
    activity: Optional[str] = None
    background_marker: str = BACKGROUND

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    def __len__(self):
        return len(self.labels)

    def segments(self) -> list[tuple[str, int, int]]:
        """Maximal constant runs as ``(label, start, stop)`` with ``stop`` exclusive."""
        return label_runs(self.labels)


def label_runs(labels: Sequence) -> list[tuple]:
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((labels[start], start, i))
            start = i
    return runs


@dataclass(frozen=True)
class Dataset:
    sequences: tuple
    ground_truth: Optional[tuple] = None

    def __post_init__(self):
        seqs = tuple(self.sequences)
        ids = [s.video_id for s in seqs]
        if len(set(ids)) != len(ids):
            raise DatasetError("video ids must be unique")
        if seqs and len({s.dim for s in seqs}) > 1:
            raise DatasetError("feature dimension differs across videos")
        object.__setattr__(self, "sequences", seqs)
        if self.ground_truth is not None:
            gts = tuple(self.ground_truth)
            if [g.video_id for g in gts] != ids:
                raise DatasetError("ground truth is not aligned with the sequences")
            for s, g in zip(seqs, gts):
                if len(g) != s.n_frames:
                    raise DatasetError(
                        f"{s.video_id}: ground truth has {len(g)} labels for {s.n_frames} frames"
                    )
            object.__setattr__(self, "ground_truth", gts)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def video_ids(self) -> list[str]:
        return [s.video_id for s in self.sequences]

    @property
    def dim(self) -> int:
        return self.sequences[0].dim

    def all_frames(self) -> np.ndarray:
        return np.concatenate([s.frames for s in self.sequences], axis=0)

    def all_timestamps(self) -> np.ndarray:
        return np.concatenate([s.timestamps for s in self.sequences])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        seqs = [self.sequences[i] for i in indices]
        gts = None if self.ground_truth is None else [self.ground_truth[i] for i in indices]
        return Dataset(seqs, gts)

    def map_frames(self, fn) -> "Dataset":
        return Dataset([s.with_frames(fn(s.frames)) for s in self.sequences], self.ground_truth)


# --------------------------------------------------------------------------- file IO


def read_feature_file(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".fseq":
        raw = path.read_bytes()
        if raw[:5] != FSEQ_MAGIC:
            raise DatasetError(f"{path}: bad magic")
        n, d = struct.unpack("<II", raw[5:13])
        body = raw[13:]
        if len(body) != 8 * n * d:
            raise DatasetError(f"{path}: truncated payload")
        return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise DatasetError(f"{path}: empty sequence (N_m = 0)")
    if len({len(r) for r in rows}) != 1:
        raise DatasetError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def write_feature_file(path, frames: np.ndarray, binary: bool = True) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    path = Path(path)
    if binary:
        n, d = frames.shape
        path.write_bytes(FSEQ_MAGIC + struct.pack("<II", n, d) + frames.tobytes())
    else:
        with open(path, "w") as fh:
            for row in frames:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_gt_file(path) -> list[str]:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def _feature_files(feature_dir: Path) -> list[Path]:
    files = sorted(p for p in feature_dir.iterdir() if p.suffix in FEATURE_SUFFIXES)
    stems = [p.stem for p in files]
    if len(set(stems)) != len(stems):
        raise DatasetError(f"{feature_dir}: a video is stored in both text and binary form")
    return files


def read_activity_map(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                vid, act = line.split()
                out[vid] = act
    return out


def load_dataset(feature_dir, gt_dir=None) -> Dataset:
    """Load every ``*.txt`` / ``*.fseq`` file in ``feature_dir`` as one video.

    Videos are ordered by file stem. When ``gt_dir`` is given, each video needs a
    ``<video_id>.txt`` label file there; an optional ``activities.map`` assigns
    activity names.
    """
    feature_dir = Path(feature_dir)
    files = _feature_files(feature_dir)
    if not files:
        raise DatasetError(f"{feature_dir}: no feature files")
    seqs = []
    for p in files:
        frames = read_feature_file(p)
        if seqs and frames.shape[1] != seqs[0].dim:
            raise DatasetError(
                f"{p.name}: dimension {frames.shape[1]} differs from {seqs[0].dim}"
            )
        seqs.append(FeatureSequence(p.stem, frames))
    gts = None
    if gt_dir is not None:
        gt_dir = Path(gt_dir)
        amap_path = gt_dir / ACTIVITY_MAP
        amap = read_activity_map(amap_path) if amap_path.exists() else {}
        gts = []
        for s in seqs:
            labels = read_gt_file(gt_dir / f"{s.video_id}{GT_SUFFIX}")
            if len(labels) != s.n_frames:
                raise DatasetError(
                    f"{s.video_id}: ground truth has {len(labels)} labels for {s.n_frames} frames"
                )
            gts.append(GroundTruth(s.video_id, labels, amap.get(s.video_id)))
    return Dataset(seqs, gts)


def save_dataset(dataset: Dataset, feature_dir, gt_dir=None, binary: bool = True) -> None:
    feature_dir = Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".fseq" if binary else ".txt"
    for s in dataset:
        write_feature_file(feature_dir / f"{s.video_id}{suffix}", s.frames, binary=binary)
    if gt_dir is not None and dataset.ground_truth is not None:
        gt_dir = Path(gt_dir)
        gt_dir.mkdir(parents=True, exist_ok=True)
        for g in dataset.ground_truth:
            (gt_dir / f"{g.video_id}{GT_SUFFIX}").write_text("".join(f"{x}\n" for x in g.labels))
        if any(g.activity is not None for g in dataset.ground_truth):
            (gt_dir / ACTIVITY_MAP).write_text(
                "".join(f"{g.video_id} {g.activity}\n" for g in dataset.ground_truth)
            )


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a desk-scale dataset with a fixed subaction order per activity.

    ``num_subactions`` is per activity; activities use disjoint sets of centers.
    """

    num_videos: int = 30
    num_subactions: int = 5
    feature_dim: int = 16
    segment_length_range: tuple = (15, 40)
    subaction_center_spread: float = 8.0
    noise_scale: float = 0.3
    background_fraction: float = 0.0
    drop_probability: float = 0.0
    rng_seed: int = 0
    num_activities: int = 1

    def __post_init__(self):
        lo, hi = self.segment_length_range
        if not 1 <= lo <= hi:
            raise ValueError("segment_length_range must satisfy 1 <= min <= max")
        if self.subaction_center_spread <= 0:
            raise ValueError("subaction_center_spread must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0 <= self.background_fraction < 1:
            raise ValueError("background_fraction must lie in [0, 1)")
        if not 0 <= self.drop_probability < 1:
            raise ValueError("drop_probability must lie in [0, 1)")
        if min(self.num_videos, self.num_subactions, self.feature_dim, self.num_activities) < 1:
            raise ValueError("counts must be positive")


def subaction_name(activity: int, index: int, num_activities: int = 1) -> str:
    if num_activities == 1:
        return f"S{index}"
    return f"A{activity}_S{index}"


def _draw_centers(rng, n, dim, spread) -> np.ndarray:
    centers = []
    while len(centers) < n:
        c = rng.normal(0.0, spread, size=dim)
        if all(np.linalg.norm(c - o) >= spread for o in centers):
            centers.append(c)
    return np.array(centers)


def _draw_background(rng, n, centers, spread) -> np.ndarray:
    """Frames in a shell of radius ``[spread/2, spread]`` around random centers.

    Every frame keeps at least ``spread/2`` from all centers.
    """
    dim = centers.shape[1]
    out = np.empty((n, dim))
    i = 0
    while i < n:
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        p = centers[rng.integers(len(centers))] + u * rng.uniform(spread / 2, spread)
        if np.min(np.linalg.norm(centers - p, axis=1)) >= spread / 2:
            out[i] = p
            i += 1
    return out


def synthetic_centers(spec: SynthSpec) -> np.ndarray:
    """Subaction centers of :func:`generate_synthetic`, shape ``(A * K, D)``."""
    rng = np.random.default_rng(spec.rng_seed)
    return _draw_centers(
        rng, spec.num_activities * spec.num_subactions, spec.feature_dim, spec.subaction_center_spread
    )


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset; video ``m`` performs activity ``m % num_activities``."""
    rng = np.random.default_rng(spec.rng_seed)
    K, A = spec.num_subactions, spec.num_activities
    centers = _draw_centers(rng, A * K, spec.feature_dim, spec.subaction_center_spread)
    lo, hi = spec.segment_length_range
    width = len(str(spec.num_videos - 1))
    seqs, gts = [], []
    for m in range(spec.num_videos):
        act = m % A
        while True:
            kept = [j for j in range(K) if rng.random() >= spec.drop_probability]
            if kept:
                break
        blocks, labels = [], []
        for j in kept:
            length = int(rng.integers(lo, hi + 1))
            c = centers[act * K + j]
            blocks.append(c + spec.noise_scale * rng.standard_normal((length, spec.feature_dim)))
            labels.append([subaction_name(act, j, A)] * length)
        if spec.background_fraction > 0:
            n_sub = sum(len(b) for b in blocks)
            n_bg = int(round(spec.background_fraction * n_sub / (1 - spec.background_fraction)))
            gaps = rng.multinomial(n_bg, np.full(len(blocks) + 1, 1.0 / (len(blocks) + 1)))
            bg = _draw_background(rng, n_bg, centers[act * K:(act + 1) * K], spec.subaction_center_spread)
            frames, gt, used = [], [], 0
            for g, block, lab in zip(gaps, blocks + [None], labels + [None]):
                frames.append(bg[used:used + g])
                gt.extend([BACKGROUND] * g)
                used += g
                if block is not None:
                    frames.append(block)
                    gt.extend(lab)
            frames = np.concatenate(frames, axis=0)
        else:
            frames = np.concatenate(blocks, axis=0)
            gt = [x for lab in labels for x in lab]
        vid = f"vid{m:0{width}d}"
        seqs.append(FeatureSequence(vid, frames))
        gts.append(GroundTruth(vid, gt, activity=f"A{act}"))
    return Dataset(seqs, gts)
