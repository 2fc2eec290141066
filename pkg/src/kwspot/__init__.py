"""Query-by-example wake-word spotting.

Enroll a speaker from a few recordings of their chosen keyword, then
detect that keyword in test audio with a two-stage decision: subsequence
DTW template matching followed by a speaker-similarity check.  Includes
audio augmentation utilities and a budgeted evaluation harness with
MR + 9*FAR scoring.
"""

from .audio import AudioClip, apply_gain, load_wav, splice, splice_all, write_wav
from .augment import (
    AugmentPreset,
    AugmentSpec,
    PresetItem,
    add_noise,
    add_reverb,
    expand_testset,
    expansion_preset,
    perturb_volume,
    sv_training_preset,
)
from .detector import Decision, DetectorConfig, decide, predict_batch
from .dtw import (
    DtwConfig,
    MatchResult,
    align_path,
    dtw_full,
    dtw_oracle,
    frame_distance_matrix,
    scan_segments,
    sln_dtw,
)
from .enrollment import (
    EnrollmentProfile,
    average_template,
    build_profile,
    calibrate_threshold,
    load_profile,
    save_profile,
    select_medoid,
)
from .errors import (
    BandTooNarrow,
    BudgetExceeded,
    DegenerateFeatures,
    DimMismatch,
    DuplicateUtt,
    EmptyInput,
    EmptySequence,
    FormatError,
    InvalidScale,
    IoError,
    KwsError,
    LayoutError,
    ParseError,
    RateMismatch,
    SilentRir,
    SilentSignal,
    SystemCrashed,
    TooLarge,
    TooShort,
    UnknownUttId,
    WindowTooSmall,
    ZeroDuration,
)
from .estimator import KeywordSpotter, MfccTransformer
from .features import (
    FeatureConfig,
    FeatureMatrix,
    SpeakerEmbedding,
    cmvn,
    cosine_similarity,
    extract_mfcc,
    kwsf_decode,
    kwsf_encode,
    mel_filterbank,
    read_features,
    speaker_stats_embedding,
    write_features,
)
from .harness import (
    Budget,
    ExternalSystem,
    PredictionRecord,
    ScoreReport,
    SpeakerScore,
    SpeakerTask,
    TaskManifest,
    compute_rtf,
    format_report,
    load_manifest,
    read_labels,
    read_predictions,
    read_predictions_partial,
    report_lines,
    run_task,
    score_speaker,
    write_labels,
    write_predictions,
    write_report,
)

__version__ = "0.1.0"
