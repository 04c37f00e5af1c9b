"""End-to-end runs, configuration files and parameter sweeps."""

from __future__ import annotations

import hashlib
import itertools
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

from .activity import VIDEO_REPRESENTATIONS, ActivityPartition, discover
from .clustering import build_cluster_model
from .dataset import Dataset
from .decoding import decode_video
from .embedding import EmbeddingConfig, EmbeddingModel, TrainingLog, embed_dataset, train_embedding
from .evaluation import PROTOCOLS, Evaluation, activity_accuracy, evaluate

log = logging.getLogger(__name__)

MODES = ("known", "unknown")


def derive_seed(seed: int, tag: str) -> int:
    """Stage seed: first 63 bits of ``sha256("<seed>/<tag>")``."""
    digest = hashlib.sha256(f"{seed}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class RunConfig:
    mode: str = "known"
    K: int = 5
    K_prime: int = 1
    tau: float = 0.0
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    codebook_size: Optional[int] = None
    rng_seed: int = 0
    protocol: str = "breakfast"
    representation: str = "soft"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.K < 1 or self.K_prime < 1:
            raise ValueError("K and K_prime must be >= 1")
        if self.mode == "known" and self.K_prime != 1:
            raise ValueError("known mode uses a single video set (K_prime = 1)")
        if not 0 <= self.tau < 1:
            raise ValueError("tau must lie in [0, 1)")
        if self.codebook_size is not None and self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        if self.representation not in VIDEO_REPRESENTATIONS:
            raise ValueError(f"representation must be one of {VIDEO_REPRESENTATIONS}")

    def embedding_config(self) -> EmbeddingConfig:
        """Embedding settings with the seed derived from the run seed."""
        return replace(self.embedding, rng_seed=derive_seed(self.rng_seed, "embedding"))


_EMBED_KEYS = {f.name for f in fields(EmbeddingConfig)} - {"rng_seed"}
_CASTS = {
    "K": int, "K_prime": int, "tau": float, "codebook_size": int, "rng_seed": int, "seed": int,
    "embed_dim": int, "learning_rate": float, "epochs": int, "batch_size": int,
    "weight_init_scale": float,
}


def parse_config(text: str, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from ``key=value`` lines (``#`` starts a comment).

    Embedding settings use their own names (``embed_dim``, ``epochs``, ...);
    ``seed`` is accepted for ``rng_seed``. Keyword overrides win over the text.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    run_kw, embed_kw = {}, {}
    for key, val in values.items():
        if key == "seed":
            key = "rng_seed"
        cast = _CASTS.get(key, str)
        val = cast(val) if isinstance(val, str) else val
        if key in _EMBED_KEYS:
            embed_kw[key] = val
        elif key in {f.name for f in fields(RunConfig)} - {"embedding"}:
            run_kw[key] = val
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(embedding=EmbeddingConfig(**embed_kw), **run_kw)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)


def format_config(cfg: RunConfig) -> str:
    items = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "embedding"}
    items.update({k: getattr(cfg.embedding, k) for k in sorted(_EMBED_KEYS)})
    return "".join(f"{k}={v}\n" for k, v in items.items() if v is not None)


@dataclass
class RunResult:
    segmentations: list
    cluster_models: list
    evaluation: Optional[Evaluation]
    loss_curve: list
    timings: dict
    embedding: EmbeddingModel
    partition: Optional[ActivityPartition] = None


class _Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _embedding(dataset, cfg, model, timer):
    training = TrainingLog()
    if model is None:
        with timer.stage("embedding"):
            model = train_embedding(dataset, cfg.embedding_config(), training)
    return model, training.losses


def run_known(dataset: Dataset, cfg: RunConfig, model: Optional[EmbeddingModel] = None) -> RunResult:
    """Embed, cluster, order and decode every video of one activity.

    A pre-trained ``model`` skips embedding training.
    """
    timer = _Timer()
    model, losses = _embedding(dataset, cfg, model, timer)
    with timer.stage("clustering"):
        embedded = embed_dataset(model, dataset)
        cm = build_cluster_model(embedded, cfg.K, cfg.tau, derive_seed(cfg.rng_seed, "cluster"))
    with timer.stage("decoding"):
        segs = [decode_video(seq, cm) for seq in embedded]
    ev = None
    if dataset.ground_truth is not None:
        with timer.stage("evaluation"):
            ev = evaluate(dataset, segs, cfg.protocol)
    return RunResult(segs, [cm], ev, losses, timer.timings, model)


def run_unknown(dataset: Dataset, cfg: RunConfig, model: Optional[EmbeddingModel] = None,
                set_embedding: bool = False) -> RunResult:
    """Whole-dataset embedding, activity clustering, per-set discovery, global matching."""
    timer = _Timer()
    model, losses = _embedding(dataset, cfg, model, timer)
    with timer.stage("discovery"):
        res = discover(
            dataset, model, cfg.K_prime, cfg.K, cfg.tau, cfg.rng_seed,
            codebook_size=cfg.codebook_size,
            representation=cfg.representation,
            set_embedding=cfg.embedding_config() if set_embedding else None,
            cluster_seed=derive_seed(cfg.rng_seed, "cluster"),
            codebook_seed=derive_seed(cfg.rng_seed, "codebook"),
            video_seed=derive_seed(cfg.rng_seed, "videos"),
        )
    ev = None
    if dataset.ground_truth is not None:
        with timer.stage("evaluation"):
            ev = evaluate(dataset, res.segmentations, cfg.protocol)
            acts = [g.activity for g in dataset.ground_truth]
            if all(a is not None for a in acts):
                ev.activity_accuracy = activity_accuracy(res.partition.assignments.tolist(), acts)
    return RunResult(res.segmentations, res.cluster_models, ev, losses, timer.timings, model, res.partition)


def run(dataset: Dataset, cfg: RunConfig, model: Optional[EmbeddingModel] = None) -> RunResult:
    if cfg.mode == "known":
        return run_known(dataset, cfg, model)
    return run_unknown(dataset, cfg, model)


def sweep(dataset: Dataset, cfg: RunConfig, K_primes: Sequence[int], Ks: Sequence[int],
          taus: Sequence[float], name: str = "dataset",
          model: Optional[EmbeddingModel] = None) -> tuple[list[dict], list[RunResult]]:
    """Run every (K', K, tau) combination with one shared embedding.

    Returns the CSV rows (see :data:`ctseg.evaluation.SWEEP_COLUMNS`) and the results.
    """
    if model is None:
        model = train_embedding(dataset, cfg.embedding_config())
    rows, results = [], []
    for kp, k, tau in itertools.product(K_primes, Ks, taus):
        mode = "known" if (cfg.mode == "known" and kp == 1) else "unknown"
        point = replace(cfg, mode=mode, K_prime=kp, K=k, tau=tau)
        log.info("sweep point K'=%d K=%d tau=%g", kp, k, tau)
        res = run(dataset, point, model)
        row = {"dataset": name, "K_prime": kp, "K": k, "tau": tau, "seed": cfg.rng_seed}
        if res.evaluation is not None:
            row.update(res.evaluation.as_dict())
        rows.append(row)
        results.append(res)
    return rows, results
