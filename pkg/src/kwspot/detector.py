"""Two-stage wake decision.

Stage 1 matches the profile template against the test utterance (query
by example); if that fires, stage 2 re-checks that the voice matches the
enrolled speaker via embedding cosine similarity.  Both stages can be
thresholded from the profile (calibrated at enrollment) or from the
config defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .audio import AudioClip
from .dtw import DtwConfig, MatchResult, scan_segments, sln_dtw
from .enrollment import EnrollmentProfile
from .errors import EmptyInput, FormatError
from .features import (
    FeatureConfig,
    FeatureMatrix,
    cosine_similarity,
    extract_mfcc,
    speaker_stats_embedding,
)

MATCH_MODES = ("sln_dtw", "segment_scan")

# Segment-scan geometry relative to the template length: windows half
# again as long as the template, hopping a quarter template at a time.
SCAN_WINDOW_FACTOR = 1.5
SCAN_HOP_FACTOR = 0.25


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds and matching strategy for the two-stage decision."""

    qbe_threshold_gamma1: float = 0.80
    sv_threshold_gamma2: float = 0.83
    use_sv_stage: bool = True
    match_mode: str = "sln_dtw"
    dtw: DtwConfig = field(default_factory=DtwConfig)
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        for name in ("qbe_threshold_gamma1", "sv_threshold_gamma2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise FormatError(f"{name} must be in [0, 1], got {value}")
        if self.match_mode not in MATCH_MODES:
            raise FormatError(f"match_mode must be one of {MATCH_MODES}")


@dataclass(frozen=True)
class Decision:
    """Outcome for one test utterance.

    sv_similarity is present exactly when the first stage fired and the
    speaker check ran.  error carries the message of a per-item failure
    (which always yields wake=False).
    """

    wake: bool
    qbe: MatchResult
    sv_similarity: float | None
    utt_id: str = ""
    error: str | None = None


def _test_features(test: AudioClip | FeatureMatrix, config: DetectorConfig) -> FeatureMatrix:
    if isinstance(test, AudioClip):
        return extract_mfcc(test, config.feature)
    if isinstance(test, FeatureMatrix):
        return test
    raise FormatError(f"cannot score a {type(test).__name__}")


def decide(
    profile: EnrollmentProfile,
    test: AudioClip | FeatureMatrix,
    config: DetectorConfig | None = None,
) -> Decision:
    """Score one utterance against a profile.

    Audio input requires a profile built from audio (the built-in front
    end); precomputed feature input is matched as-is and its speaker
    embedding is the stats summary of the given frames.
    """
    config = config or DetectorConfig()
    if isinstance(test, AudioClip) and profile.feature_kind != "builtin_mfcc":
        raise FormatError(
            "profile was built from external features; pass a FeatureMatrix"
        )
    features = _test_features(test, config)
    utt_id = features.source_id

    if config.match_mode == "segment_scan":
        template_len = profile.template.num_frames
        match = scan_segments(
            profile.template,
            features,
            window_frames=max(1, round(SCAN_WINDOW_FACTOR * template_len)),
            hop_frames=max(1, round(SCAN_HOP_FACTOR * template_len)),
            config=config.dtw,
        )
    else:
        match = sln_dtw(profile.template, features, config.dtw)

    qbe_threshold = (
        profile.qbe_threshold
        if profile.qbe_threshold is not None
        else config.qbe_threshold_gamma1
    )
    if match.similarity < qbe_threshold:
        return Decision(wake=False, qbe=match, sv_similarity=None, utt_id=utt_id)
    if not config.use_sv_stage:
        return Decision(wake=True, qbe=match, sv_similarity=None, utt_id=utt_id)

    if isinstance(test, AudioClip):
        raw = extract_mfcc(test, config.feature.without_cmvn())
        test_embedding = speaker_stats_embedding(raw)
    else:
        test_embedding = speaker_stats_embedding(features)
    sv = cosine_similarity(profile.embedding, test_embedding)
    sv_threshold = (
        profile.sv_threshold
        if profile.sv_threshold is not None
        else config.sv_threshold_gamma2
    )
    return Decision(wake=sv >= sv_threshold, qbe=match, sv_similarity=sv, utt_id=utt_id)


def predict_batch(
    profile: EnrollmentProfile,
    test_items: Sequence[AudioClip | FeatureMatrix],
    config: DetectorConfig | None = None,
) -> list[Decision]:
    """decide() over a list; a failing item is scored no-wake, not fatal."""
    if not test_items:
        raise EmptyInput("no test items")
    config = config or DetectorConfig()
    decisions = []
    for index, item in enumerate(test_items):
        try:
            decision = decide(profile, item, config)
        except Exception as exc:
            utt_id = getattr(item, "source_id", "") or str(index)
            decision = Decision(
                wake=False,
                qbe=MatchResult(0.0, 0, 0, 1.0),
                sv_similarity=None,
                utt_id=utt_id,
                error=str(exc),
            )
        if not decision.utt_id:
            decision = Decision(
                wake=decision.wake,
                qbe=decision.qbe,
                sv_similarity=decision.sv_similarity,
                utt_id=str(index),
                error=decision.error,
            )
        decisions.append(decision)
    return decisions
