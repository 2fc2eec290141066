"""Build a speaker's wake-word profile from a handful of recordings.

The profile bundles everything the detector needs at test time: an
averaged feature template, a speaker embedding, and the two decision
thresholds.  Enrollment input is either raw audio clips (features are
extracted here) or precomputed feature matrices from an external front
end.  Profiles persist to a single versioned binary file per speaker.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .audio import AudioClip, splice_all
from .dtw import DtwConfig, align_path, dtw_full, sln_dtw
from .errors import EmptyInput, FormatError, IoError
from .features import (
    DEFAULT_FRAME_SHIFT_SECONDS,
    FeatureMatrix,
    SpeakerEmbedding,
    cosine_similarity,
    extract_mfcc,
    kwsf_decode,
    kwsf_encode,
    speaker_stats_embedding,
)

if TYPE_CHECKING:
    from .detector import DetectorConfig

KWSP_MAGIC = b"KWSP"
KWSP_VERSION = 1

# Wake threshold calibration: a fixed margin below the worst pairwise
# enrollment similarity, clamped into this range.
CALIBRATION_MARGIN = 0.9
QBE_CLAMP_LOW = 0.45
QBE_CLAMP_HIGH = 0.60

# Floor for the calibrated speaker-check threshold of stats embeddings.
SV_FLOOR = 0.5

MAX_ENROLLMENTS = 10

FEATURE_KINDS = ("builtin_mfcc", "external")
_KIND_CODE = {"builtin_mfcc": 0, "external": 1}
_KIND_NAME = {code: name for name, code in _KIND_CODE.items()}
_EMBED_CODE = {"stats": 0, "external": 1}
_EMBED_NAME = {code: name for name, code in _EMBED_CODE.items()}


@dataclass(frozen=True, eq=False)
class EnrollmentProfile:
    """Everything needed to answer "did this speaker say their keyword".

    qbe_threshold None means "not calibrated, use the detector default";
    the same convention applies to sv_threshold.
    """

    speaker_id: str
    template: FeatureMatrix
    embedding: SpeakerEmbedding
    qbe_threshold: float | None
    sv_threshold: float | None
    feature_kind: str = "builtin_mfcc"
    created_at: float = 0.0

    def __post_init__(self) -> None:
        if self.feature_kind not in FEATURE_KINDS:
            raise FormatError(f"feature_kind must be one of {FEATURE_KINDS}")
        for name in ("qbe_threshold", "sv_threshold"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise FormatError(f"{name} must be in [0, 1], got {value}")


def _frames_of(x: FeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.frames.astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def select_medoid(
    features: Sequence[FeatureMatrix | np.ndarray], config: DtwConfig | None = None
) -> int:
    """Index of the matrix with the smallest summed distance to the rest.

    Distances are length-normalised full alignments; ties go to the
    lowest index.
    """
    if not features:
        raise EmptyInput("no enrollment features")
    if len(features) == 1:
        return 0
    config = replace(config or DtwConfig(), normalize_by_path_length=True)
    totals = np.zeros(len(features))
    for i in range(len(features)):
        for j in range(i + 1, len(features)):
            d = dtw_full(features[i], features[j], config)
            totals[i] += d
            totals[j] += d
    return int(np.argmin(totals))


def average_template(
    features: Sequence[FeatureMatrix | np.ndarray], config: DtwConfig | None = None
) -> FeatureMatrix:
    """Collapse enrollment matrices into one template.

    Every matrix is DTW-aligned to the medoid; each medoid frame is then
    averaged with all frames that aligned to it.  The output therefore has
    the medoid's length.  Sums run in float64 so averaging identical
    float32 inputs reproduces them exactly.
    """
    if not features:
        raise EmptyInput("no enrollment features")
    config = config or DtwConfig()
    medoid_index = select_medoid(features, config)
    medoid = features[medoid_index]
    medoid_frames = _frames_of(medoid)
    sums = np.zeros_like(medoid_frames)
    counts = np.zeros(medoid_frames.shape[0])
    for matrix in features:
        frames = _frames_of(matrix)
        for i, j in align_path(medoid, matrix, config):
            sums[i] += frames[j]
            counts[i] += 1
    averaged = (sums / counts[:, None]).astype(np.float32)
    shift = (
        medoid.frame_shift_seconds
        if isinstance(medoid, FeatureMatrix)
        else DEFAULT_FRAME_SHIFT_SECONDS
    )
    return FeatureMatrix(frames=averaged, frame_shift_seconds=shift, source_id="template")


def calibrate_threshold(
    features: Sequence[FeatureMatrix | np.ndarray], config: DtwConfig | None = None
) -> float:
    """Wake threshold from intra-enrollment match scores.

    Runs every ordered pair through the subsequence matcher, takes the
    worst similarity, backs it off by a fixed margin, and clamps into
    [0.45, 0.60].  A single enrollment gives the clamp floor (no pairs to
    measure).
    """
    if not features:
        raise EmptyInput("no enrollment features")
    if len(features) == 1:
        return QBE_CLAMP_LOW
    config = config or DtwConfig()
    worst = min(
        sln_dtw(a, b, config).similarity
        for i, a in enumerate(features)
        for j, b in enumerate(features)
        if i != j
    )
    return float(min(max(CALIBRATION_MARGIN * worst, QBE_CLAMP_LOW), QBE_CLAMP_HIGH))


def _calibrate_sv_threshold(raw_features: Sequence[FeatureMatrix]) -> float:
    """Speaker-check threshold for the built-in stats embedding.

    Splits each enrollment into halves, embeds each half, and places the
    threshold two standard deviations below the mean pairwise similarity,
    never below SV_FLOOR.  Too little data falls back to the floor.
    """
    halves = []
    for matrix in raw_features:
        frames = matrix.frames
        mid = frames.shape[0] // 2
        if mid >= 2 and frames.shape[0] - mid >= 2:
            halves.append(speaker_stats_embedding(frames[:mid]))
            halves.append(speaker_stats_embedding(frames[mid:]))
    if len(halves) < 2:
        return SV_FLOOR
    sims = [
        cosine_similarity(halves[i], halves[j])
        for i in range(len(halves))
        for j in range(i + 1, len(halves))
    ]
    calibrated = float(np.mean(sims) - 2.0 * np.std(sims))
    return float(min(1.0, max(SV_FLOOR, calibrated)))


def build_profile(
    items: Sequence[AudioClip] | Sequence[FeatureMatrix],
    config: "DetectorConfig | None" = None,
    speaker_id: str = "",
    created_at: float | None = None,
    calibrate: bool = True,
) -> EnrollmentProfile:
    """Turn enrollment recordings (or feature matrices) into a profile.

    Audio input uses the built-in MFCC front end; the speaker embedding is
    computed from the spliced enrollment audio without CMVN, since CMVN
    erases exactly the per-speaker statistics the embedding summarises.
    With calibrate=False the profile carries no thresholds at all and the
    detector falls back to its configured defaults.
    """
    if config is None:
        from .detector import DetectorConfig

        config = DetectorConfig()
    if not items:
        raise EmptyInput("no enrollment items")
    if len(items) > MAX_ENROLLMENTS:
        warnings.warn(
            f"{len(items)} enrollment items; the protocol expects at most {MAX_ENROLLMENTS}",
            stacklevel=2,
        )
    all_audio = all(isinstance(x, AudioClip) for x in items)
    all_features = all(isinstance(x, FeatureMatrix) for x in items)
    if not (all_audio or all_features):
        raise FormatError("enrollment items must be all AudioClip or all FeatureMatrix")
    if created_at is None:
        created_at = time.time()

    if all_audio:
        clips = list(items)
        feats = [extract_mfcc(clip, config.feature) for clip in clips]
        template = average_template(feats, config.dtw)
        raw_config = config.feature.without_cmvn()
        embedding = speaker_stats_embedding(extract_mfcc(splice_all(clips), raw_config))
        sv_threshold = _calibrate_sv_threshold(
            [extract_mfcc(clip, raw_config) for clip in clips]
        )
        feature_kind = "builtin_mfcc"
    else:
        feats = list(items)
        template = average_template(feats, config.dtw)
        stacked = np.vstack([f.frames for f in feats])
        embedding = SpeakerEmbedding(
            speaker_stats_embedding(stacked).vector, kind="external"
        )
        sv_threshold = config.sv_threshold_gamma2
        feature_kind = "external"

    qbe_threshold = calibrate_threshold(feats, config.dtw) if calibrate else None
    return EnrollmentProfile(
        speaker_id=speaker_id,
        template=template,
        embedding=embedding,
        qbe_threshold=qbe_threshold,
        sv_threshold=sv_threshold if calibrate else None,
        feature_kind=feature_kind,
        created_at=float(created_at),
    )


def _pack_optional(value: float | None) -> bytes:
    return struct.pack("<d", float("nan") if value is None else value)


def save_profile(profile: EnrollmentProfile, path: str | Path) -> None:
    """Write a profile as one self-contained binary file."""
    sid = profile.speaker_id.encode("utf-8")
    blob = bytearray()
    blob += KWSP_MAGIC
    blob.append(KWSP_VERSION)
    blob += struct.pack("<I", len(sid))
    blob += sid
    blob.append(_KIND_CODE[profile.feature_kind])
    blob += struct.pack("<d", profile.created_at)
    blob += _pack_optional(profile.qbe_threshold)
    blob += _pack_optional(profile.sv_threshold)
    blob += struct.pack("<d", profile.template.frame_shift_seconds)
    template_block = kwsf_encode(profile.template.frames)
    blob += struct.pack("<I", len(template_block))
    blob += template_block
    blob.append(_EMBED_CODE[profile.embedding.kind])
    vector = np.ascontiguousarray(profile.embedding.vector, dtype="<f8")
    blob += struct.pack("<I", vector.size)
    blob += vector.tobytes()
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_profile(path: str | Path) -> EnrollmentProfile:
    """Inverse of save_profile; rejects unknown versions and truncation."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated profile file")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    if take(4) != KWSP_MAGIC:
        raise FormatError(f"{path} is not a profile file")
    version = take(1)[0]
    if version != KWSP_VERSION:
        raise FormatError(f"{path}: unsupported profile version {version}")
    (sid_len,) = struct.unpack("<I", take(4))
    speaker_id = take(sid_len).decode("utf-8")
    kind_code = take(1)[0]
    if kind_code not in _KIND_NAME:
        raise FormatError(f"{path}: unknown feature kind code {kind_code}")
    (created_at,) = struct.unpack("<d", take(8))
    (qbe_raw,) = struct.unpack("<d", take(8))
    (sv_raw,) = struct.unpack("<d", take(8))
    (frame_shift,) = struct.unpack("<d", take(8))
    (template_len,) = struct.unpack("<I", take(4))
    template_frames = kwsf_decode(take(template_len), origin=str(path))
    embed_code = take(1)[0]
    if embed_code not in _EMBED_NAME:
        raise FormatError(f"{path}: unknown embedding kind code {embed_code}")
    (dim,) = struct.unpack("<I", take(4))
    vector = np.frombuffer(take(8 * dim), dtype="<f8")
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")

    return EnrollmentProfile(
        speaker_id=speaker_id,
        template=FeatureMatrix(
            frames=template_frames,
            frame_shift_seconds=frame_shift,
            source_id="template",
        ),
        embedding=SpeakerEmbedding(vector=vector.copy(), kind=_EMBED_NAME[embed_code]),
        qbe_threshold=None if np.isnan(qbe_raw) else qbe_raw,
        sv_threshold=None if np.isnan(sv_raw) else sv_raw,
        feature_kind=_KIND_NAME[kind_code],
        created_at=created_at,
    )
