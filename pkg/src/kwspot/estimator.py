"""scikit-learn flavored wrappers around the pipeline.

Enrollment maps onto fit (the profile is the fitted state) and detection
onto predict, so the spotter drops into sklearn tooling: get_params /
set_params for sweeps, clone for cross-validation over thresholds, and
decision_function for threshold-free match scores.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import AudioClip
from .detector import Decision, DetectorConfig, decide, predict_batch
from .dtw import DtwConfig
from .enrollment import build_profile
from .errors import EmptyInput, FormatError
from .features import FeatureConfig, FeatureMatrix, extract_mfcc


def _check_items(X) -> list:
    """Validate a sample collection: AudioClips or FeatureMatrix objects."""
    if isinstance(X, (AudioClip, FeatureMatrix)):
        X = [X]
    items = list(X)
    if not items:
        raise EmptyInput("X must contain at least one clip or feature matrix")
    for item in items:
        if not isinstance(item, (AudioClip, FeatureMatrix)):
            raise FormatError(
                f"samples must be AudioClip or FeatureMatrix, got {type(item).__name__}"
            )
    return items


class KeywordSpotter(BaseEstimator, ClassifierMixin):
    """Wake-word detector with the estimator interface.

    fit(X) enrolls a speaker from their keyword recordings; predict(X)
    returns 1 where the keyword was spotted in that speaker's voice.
    Thresholds given here are the fallbacks; with calibrate_thresholds
    the wake threshold is tuned from the enrollment data instead.
    """

    def __init__(
        self,
        qbe_threshold: float = 0.80,
        sv_threshold: float = 0.83,
        use_sv_stage: bool = True,
        match_mode: str = "sln_dtw",
        distance: str = "cosine",
        band_radius: int | None = None,
        calibrate_thresholds: bool = True,
        feature_config: FeatureConfig | None = None,
        speaker_id: str = "speaker",
    ):
        self.qbe_threshold = qbe_threshold
        self.sv_threshold = sv_threshold
        self.use_sv_stage = use_sv_stage
        self.match_mode = match_mode
        self.distance = distance
        self.band_radius = band_radius
        self.calibrate_thresholds = calibrate_thresholds
        self.feature_config = feature_config
        self.speaker_id = speaker_id

    def _config(self) -> DetectorConfig:
        return DetectorConfig(
            qbe_threshold_gamma1=self.qbe_threshold,
            sv_threshold_gamma2=self.sv_threshold,
            use_sv_stage=self.use_sv_stage,
            match_mode=self.match_mode,
            dtw=DtwConfig(distance=self.distance, band_radius=self.band_radius),
            feature=self.feature_config or FeatureConfig(),
        )

    def fit(self, X, y=None):
        """Enroll from keyword examples; y is ignored (all X are positives)."""
        items = _check_items(X)
        self.profile_ = build_profile(
            items,
            self._config(),
            speaker_id=self.speaker_id,
            created_at=0.0,
            calibrate=self.calibrate_thresholds,
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.profile_.template.dim
        return self

    def decide(self, x) -> Decision:
        """Full two-stage decision for a single clip or feature matrix."""
        check_is_fitted(self, "profile_")
        return decide(self.profile_, x, self._config())

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "profile_")
        items = _check_items(X)
        decisions = predict_batch(self.profile_, items, self._config())
        return np.array([int(d.wake) for d in decisions], dtype=int)

    def decision_function(self, X) -> np.ndarray:
        """Stage-1 match similarity per item (before any thresholding)."""
        check_is_fitted(self, "profile_")
        items = _check_items(X)
        return np.array(
            [decide(self.profile_, item, self._config()).qbe.similarity for item in items]
        )

    def score(self, X, y, sample_weight=None) -> float:
        """Plain accuracy, mostly for sklearn tooling compatibility."""
        y = np.asarray(y)
        return float(np.mean(self.predict(X) == y))


class MfccTransformer(BaseEstimator, TransformerMixin):
    """Stateless front end: audio clips in, feature matrices out."""

    def __init__(
        self,
        frame_length_seconds: float = 0.025,
        frame_shift_seconds: float = 0.01,
        num_mel_filters: int = 40,
        num_cepstra: int = 40,
        pre_emphasis: float = 0.97,
        apply_cmvn: bool = True,
    ):
        self.frame_length_seconds = frame_length_seconds
        self.frame_shift_seconds = frame_shift_seconds
        self.num_mel_filters = num_mel_filters
        self.num_cepstra = num_cepstra
        self.pre_emphasis = pre_emphasis
        self.apply_cmvn = apply_cmvn

    def _config(self) -> FeatureConfig:
        return FeatureConfig(
            frame_length_seconds=self.frame_length_seconds,
            frame_shift_seconds=self.frame_shift_seconds,
            num_mel_filters=self.num_mel_filters,
            num_cepstra=self.num_cepstra,
            pre_emphasis=self.pre_emphasis,
            apply_cmvn=self.apply_cmvn,
        )

    def fit(self, X, y=None):
        self._config()  # validate parameters up front
        return self

    def transform(self, X) -> list[FeatureMatrix]:
        config = self._config()
        out = []
        for item in _check_items(X):
            if not isinstance(item, AudioClip):
                raise FormatError("MfccTransformer expects AudioClip inputs")
            out.append(extract_mfcc(item, config))
        return out
