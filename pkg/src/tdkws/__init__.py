"""Streaming keyword spotting with a two-stage time-delay neural network.

Pipeline: log-Mel filterbank features, a phone-classifying network over
spliced frames, max-pooling over time, a word-classifying network over
pooled windows, posterior smoothing, and threshold detection with
bounded latency.  Includes frame skipping, an exact multiplication-cost
model, desk-scale two-stage training, FRR/FA evaluation, and seeded
synthetic data generation.
"""

from .errors import (
    BadMagicError,
    ConfigError,
    CounterDisabledError,
    DimensionMismatchError,
    DivergenceError,
    FormatVersionError,
    InputError,
    InsufficientDataError,
    KwsError,
    ModelFormatError,
    TruncatedPayloadError,
    UndefinedRateError,
    UndefinedSnrError,
)
from .features import (
    AudioStream,
    FeatureNormalizer,
    FrontendConfig,
    StreamingExtractor,
    extract_fbank,
    fit_normalizer,
    mel_filterbank,
    read_wav,
    write_wav,
)
from .kernels import BACKEND, available_backends, dense_forward
from .model import (
    FILLER_LABEL,
    DenseLayer,
    TdnnModel,
    build_default,
    build_model,
    load_model,
    save_model,
)
from .inference import (
    DetectionEvent,
    MultCounter,
    PosteriorTrace,
    SkipGeometry,
    StreamState,
    batch_forward,
    events_from_trace,
    parse_skip,
    read_events_jsonl,
    set_skip_mode,
    smooth_scores,
    stream_detect,
    write_events_jsonl,
)
from .cost import CostReport, format_count, measured_mulps, mulps, naive_mulps
from .training import (
    LabeledFrameSet,
    TrainConfig,
    loss_and_gradients,
    receptive_field_frames,
    train_phone_stage,
    train_word_stage,
    word_labels_from_truth,
    word_output_count,
)
from .evaluation import (
    Clip,
    GroundTruth,
    MixSpec,
    RocCurve,
    classify_utterance,
    make_derivative_stream,
    match_events,
    mix_noise,
    pink_noise,
    roc_sweep,
    roc_sweep_pooled,
    score_detections,
    white_noise,
)
from .synthesis import (
    GSC10_KEYWORDS,
    ToyLanguage,
    clip_set,
    load_clip_directory,
    make_language,
    phone_corpus,
    word_training_set,
    write_clip_directory,
)

__version__ = "0.1.0"

__all__ = [
    "AudioStream",
    "BACKEND",
    "BadMagicError",
    "Clip",
    "ConfigError",
    "CostReport",
    "CounterDisabledError",
    "DenseLayer",
    "DetectionEvent",
    "DimensionMismatchError",
    "DivergenceError",
    "FILLER_LABEL",
    "FeatureNormalizer",
    "FormatVersionError",
    "FrontendConfig",
    "GSC10_KEYWORDS",
    "GroundTruth",
    "InputError",
    "InsufficientDataError",
    "KwsError",
    "LabeledFrameSet",
    "MixSpec",
    "ModelFormatError",
    "MultCounter",
    "PosteriorTrace",
    "RocCurve",
    "SkipGeometry",
    "StreamState",
    "StreamingExtractor",
    "TdnnModel",
    "ToyLanguage",
    "TrainConfig",
    "TruncatedPayloadError",
    "UndefinedRateError",
    "UndefinedSnrError",
    "available_backends",
    "batch_forward",
    "build_default",
    "build_model",
    "classify_utterance",
    "clip_set",
    "dense_forward",
    "events_from_trace",
    "extract_fbank",
    "fit_normalizer",
    "format_count",
    "load_clip_directory",
    "load_model",
    "loss_and_gradients",
    "make_derivative_stream",
    "make_language",
    "match_events",
    "measured_mulps",
    "mel_filterbank",
    "mix_noise",
    "mulps",
    "naive_mulps",
    "parse_skip",
    "phone_corpus",
    "pink_noise",
    "read_events_jsonl",
    "read_wav",
    "receptive_field_frames",
    "roc_sweep",
    "roc_sweep_pooled",
    "save_model",
    "score_detections",
    "set_skip_mode",
    "smooth_scores",
    "stream_detect",
    "train_phone_stage",
    "train_word_stage",
    "white_noise",
    "word_labels_from_truth",
    "word_output_count",
    "word_training_set",
    "write_clip_directory",
    "write_events_jsonl",
    "write_wav",
]
