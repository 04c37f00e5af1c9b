"""Unsupervised temporal action segmentation with a continuous temporal embedding."""

from .dataset import (
    BACKGROUND,
    Dataset,
    FeatureSequence,
    GroundTruth,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .decoding import BACKGROUND_LABEL, Segmentation, brute_force_decode, decode_video, viterbi_decode
from .embedding import EmbeddingConfig, EmbeddingModel, embed_dataset, train_embedding
from .clustering import ClusterModel, build_cluster_model, kmeans
from .activity import discover
from .evaluation import evaluate, hungarian_match
from .pipeline import RunConfig, RunResult, run_known, run_unknown, sweep

__version__ = "0.1.0"
