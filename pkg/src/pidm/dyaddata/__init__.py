"""Facial-parameter sequences, preprocessing, synthetic dyads and FSEQ files."""
from .fseq import (
    BadMagicError,
    FseqError,
    TruncatedPayloadError,
    VersionMismatchError,
    load_dataset,
    read_fseq,
    read_manifest,
    write_fseq,
    write_manifest,
)
from .sequences import (
    EXPRESSION,
    GROUPS,
    N_FEATURES,
    POSE,
    ROTATION,
    Coupling,
    DyadClip,
    FlameSequence,
    GroupStats,
    compute_norm_stats,
    denormalize,
    normalize,
    running_average,
    slide_windows,
    window_count,
)
from .synth import (
    ExperimentSplits,
    SynthConfig,
    corpus_clips,
    experiment_splits,
    lagged_xcorr,
    synth_corpus,
    synth_session,
)

__all__ = [
    "BadMagicError",
    "Coupling",
    "DyadClip",
    "EXPRESSION",
    "ExperimentSplits",
    "FlameSequence",
    "FseqError",
    "GROUPS",
    "GroupStats",
    "N_FEATURES",
    "POSE",
    "ROTATION",
    "SynthConfig",
    "TruncatedPayloadError",
    "VersionMismatchError",
    "compute_norm_stats",
    "corpus_clips",
    "denormalize",
    "experiment_splits",
    "lagged_xcorr",
    "load_dataset",
    "normalize",
    "read_fseq",
    "read_manifest",
    "running_average",
    "slide_windows",
    "synth_corpus",
    "synth_session",
    "window_count",
    "write_fseq",
    "write_manifest",
]
