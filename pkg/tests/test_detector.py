"""Two-stage decision logic and batch prediction."""

import numpy as np
import pytest

from kwspot import (
    Decision,
    DetectorConfig,
    EmptyInput,
    EnrollmentProfile,
    FeatureConfig,
    FeatureMatrix,
    FormatError,
    SpeakerEmbedding,
    build_profile,
    decide,
    extract_mfcc,
    predict_batch,
    speaker_stats_embedding,
)

from conftest import KEYWORDS, noise_clip, tone_word


@pytest.fixture(scope="module")
def s1_profile():
    clips = [tone_word(KEYWORDS["s1"], seed=k) for k in range(5)]
    return build_profile(clips, speaker_id="s1")


def gating_profile(clip, flip_embedding):
    """Profile whose template matches `clip` exactly; the embedding either
    matches the clip's own voice statistics or is inverted to force the
    speaker check to fail."""
    raw = extract_mfcc(clip, FeatureConfig().without_cmvn())
    own = speaker_stats_embedding(raw)
    vector = -own.vector if flip_embedding else own.vector
    return EnrollmentProfile(
        speaker_id="g",
        template=extract_mfcc(clip),
        embedding=SpeakerEmbedding(vector, kind="stats"),
        qbe_threshold=0.80,
        sv_threshold=0.83,
        feature_kind="builtin_mfcc",
        created_at=0.0,
    )


def test_own_rendition_wakes(s1_profile):
    decision = decide(s1_profile, tone_word(KEYWORDS["s1"], seed=77))
    assert decision.wake
    assert decision.qbe.similarity >= s1_profile.qbe_threshold
    assert decision.sv_similarity is not None
    assert decision.sv_similarity > 0.9
    assert decision.error is None


def test_noise_rejected_before_speaker_check(s1_profile):
    decision = decide(s1_profile, noise_clip(seed=5))
    assert not decision.wake
    assert decision.sv_similarity is None


def test_other_keyword_rejected(s1_profile):
    decision = decide(s1_profile, tone_word(KEYWORDS["s3"], seed=0))
    assert not decision.wake


def test_qbe_pass_sv_fail_means_no_wake():
    clip = tone_word(KEYWORDS["s2"], seed=0)
    profile = gating_profile(clip, flip_embedding=True)
    decision = decide(profile, clip)
    assert decision.qbe.similarity >= 0.80
    assert decision.sv_similarity is not None
    assert decision.sv_similarity < 0.83
    assert not decision.wake


def test_qbe_pass_sv_pass_means_wake():
    clip = tone_word(KEYWORDS["s2"], seed=0)
    profile = gating_profile(clip, flip_embedding=False)
    decision = decide(profile, clip)
    assert decision.qbe.similarity >= 0.80
    assert decision.sv_similarity is not None
    assert decision.sv_similarity >= 0.83
    assert decision.wake


def test_sv_stage_can_be_disabled():
    clip = tone_word(KEYWORDS["s2"], seed=0)
    profile = gating_profile(clip, flip_embedding=True)
    config = DetectorConfig(use_sv_stage=False)
    decision = decide(profile, clip, config)
    assert decision.wake
    assert decision.sv_similarity is None


def test_sv_similarity_present_iff_qbe_fired(s1_profile):
    items = [tone_word(KEYWORDS["s1"], seed=60), noise_clip(seed=6), tone_word(KEYWORDS["s2"], seed=1)]
    for item in items:
        decision = decide(s1_profile, item)
        fired = decision.qbe.similarity >= s1_profile.qbe_threshold
        assert (decision.sv_similarity is not None) == fired


def test_raising_thresholds_never_turns_rejection_into_wake():
    clips = [tone_word(KEYWORDS["s1"], seed=k) for k in range(5)]
    profile = build_profile(clips, calibrate=False)
    items = [tone_word(KEYWORDS["s1"], seed=61), noise_clip(seed=7), tone_word(KEYWORDS["s3"], seed=2)]
    low = DetectorConfig(qbe_threshold_gamma1=0.5, sv_threshold_gamma2=0.5)
    high = DetectorConfig(qbe_threshold_gamma1=0.9, sv_threshold_gamma2=0.95)
    for item in items:
        if not decide(profile, item, low).wake:
            assert not decide(profile, item, high).wake


def test_decision_is_deterministic(s1_profile):
    clip = tone_word(KEYWORDS["s1"], seed=62)
    a = decide(s1_profile, clip)
    b = decide(s1_profile, clip)
    assert a.wake == b.wake
    assert a.qbe == b.qbe
    assert a.sv_similarity == b.sv_similarity


def test_segment_scan_mode_runs(s1_profile):
    config = DetectorConfig(match_mode="segment_scan")
    decision = decide(s1_profile, tone_word(KEYWORDS["s1"], seed=63), config)
    assert isinstance(decision, Decision)
    assert 0.0 <= decision.qbe.similarity <= 1.0
    rejected = decide(s1_profile, noise_clip(seed=8), config)
    assert not rejected.wake


def test_audio_against_external_profile_rejected():
    rng = np.random.default_rng(0)
    items = [FeatureMatrix(rng.normal(size=(8, 40)).astype(np.float32), 0.01) for _ in range(3)]
    profile = build_profile(items)
    with pytest.raises(FormatError):
        decide(profile, noise_clip(seed=9))


def test_feature_input_against_builtin_profile(s1_profile):
    # Precomputed features are accepted; their speaker stats are not
    # comparable to audio-derived embeddings, so check the QbE stage only.
    feats = extract_mfcc(tone_word(KEYWORDS["s1"], seed=64))
    config = DetectorConfig(use_sv_stage=False)
    assert decide(s1_profile, feats, config).wake


def test_predict_batch_matches_itemwise_decide(s1_profile):
    items = [tone_word(KEYWORDS["s1"], seed=65), noise_clip(seed=10)]
    batch = predict_batch(s1_profile, items)
    singles = [decide(s1_profile, item) for item in items]
    assert [d.wake for d in batch] == [d.wake for d in singles]
    assert [d.qbe for d in batch] == [d.qbe for d in singles]


def test_predict_batch_identical_items_identical_decisions(s1_profile):
    clip = tone_word(KEYWORDS["s1"], seed=66)
    batch = predict_batch(s1_profile, [clip] * 4)
    assert len({d.wake for d in batch}) == 1
    assert len({d.qbe.similarity for d in batch}) == 1


def test_predict_batch_isolates_bad_items(s1_profile):
    rng = np.random.default_rng(1)
    bad = FeatureMatrix(rng.normal(size=(5, 7)).astype(np.float32), 0.01)
    good = tone_word(KEYWORDS["s1"], seed=67)
    batch = predict_batch(s1_profile, [good, bad, good])
    assert batch[0].wake and batch[2].wake
    assert not batch[1].wake
    assert batch[1].error is not None
    assert batch[0].error is None


def test_predict_batch_rejects_empty(s1_profile):
    with pytest.raises(EmptyInput):
        predict_batch(s1_profile, [])


def test_batch_fills_missing_utt_ids(s1_profile):
    rng = np.random.default_rng(2)
    feats = FeatureMatrix(rng.normal(size=(9, 40)).astype(np.float32), 0.01)
    batch = predict_batch(s1_profile, [feats])
    assert batch[0].utt_id == "0"


def test_detector_config_validation():
    with pytest.raises(FormatError):
        DetectorConfig(qbe_threshold_gamma1=1.2)
    with pytest.raises(FormatError):
        DetectorConfig(match_mode="exhaustive")
