"""Weakly supervised video anomaly detection on precomputed frame features.

The pipeline: a windowed local transformer plus similarity-graph convolution
encodes each video's feature sequence; three frame-level streams (text
alignment, binary, multiclass) and an intention-awareness stream are fused
into per-frame category scores; connected components of a rectified
similarity graph supply pseudo-labels; top-K pooling turns frame scores into
video-level MIL losses. Inference produces coarse per-frame anomaly scores
and fine-grained (start, end, category, confidence) instances.
"""

from .config import TrainConfig
from .data import (
    FeatureSequence,
    TextBank,
    VideoRecord,
    load_text_bank_prefix,
    read_feature_file,
    read_lasf,
    read_manifest,
    save_text_bank,
    write_lasf,
    write_manifest,
)
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    FormatError,
    LasVadError,
    NumericError,
    UndefinedMetricError,
    ValidationError,
)
from .inference import AnomalyInstance
from .metrics import EvalReport
from .model import LasVad
from .synthetic import SynthConfig, generate_synthetic_corpus
from .training import evaluate, infer, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AnomalyInstance",
    "ConfigurationError",
    "DegenerateInputError",
    "EvalReport",
    "FeatureSequence",
    "FormatError",
    "LasVad",
    "LasVadError",
    "NumericError",
    "SynthConfig",
    "TextBank",
    "TrainConfig",
    "UndefinedMetricError",
    "ValidationError",
    "VideoRecord",
    "evaluate",
    "generate_synthetic_corpus",
    "infer",
    "load_checkpoint",
    "load_text_bank_prefix",
    "read_feature_file",
    "read_lasf",
    "read_manifest",
    "save_text_bank",
    "train",
    "write_lasf",
    "write_manifest",
    "__version__",
]
