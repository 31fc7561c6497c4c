"""Confidence-weighted set embeddings for set-to-set identity matching.

Items are embedded by a small network, scored against per-identity context
vectors, and the resulting confidences drive two weightings: one for the
per-item classification loss and one for pooling items into a set embedding.
"""
from .attention import AttentionConfig, fla_score, ffa_score, ffa_mh_score, fuse_set, id_quality
from .config import ExperimentConfig
from .data import BenchmarkConfig, CorruptionSpec, SceneSpec, build_benchmark
from .evaluation import EvalReport, evaluate
from .model import EmbedderConfig, init_params
from .params import ParamStore
from .training import TrainConfig, train

__version__ = "0.1.0"
