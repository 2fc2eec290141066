"""MFCC feature extraction, feature file formats, and speaker embeddings.

The front end is fixed by convention rather than configuration surface:
25 ms windows, 10 ms shift, 40 mel filters, 40 cepstra, per-utterance
cepstral mean and variance normalisation.  All parameters can still be
overridden through FeatureConfig for experiments.

Two serialisations are supported: a small binary format ("KWSF") that
round-trips float32 frames bit for bit, and CSV for eyeballing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft

from .audio import AudioClip
from .errors import DegenerateFeatures, FormatError, IoError, TooShort

KWSF_MAGIC = b"KWSF"
KWSF_VERSION = 1

# Default frame shift assumed when a feature file does not carry timing
# (KWSF stores only the frame grid, not the clock).
DEFAULT_FRAME_SHIFT_SECONDS = 0.01


@dataclass(frozen=True)
class FeatureConfig:
    """Front-end parameters.  Defaults give 40-dim MFCC on a 10 ms grid."""

    frame_length_seconds: float = 0.025
    frame_shift_seconds: float = 0.01
    num_mel_filters: int = 40
    num_cepstra: int = 40
    pre_emphasis: float = 0.97
    nfft: int = 512
    apply_cmvn: bool = True

    def __post_init__(self) -> None:
        if self.frame_length_seconds <= 0 or self.frame_shift_seconds <= 0:
            raise FormatError("frame length and shift must be positive")
        if self.frame_shift_seconds > self.frame_length_seconds:
            raise FormatError("frame shift cannot exceed frame length")
        if self.num_mel_filters < 1:
            raise FormatError("need at least one mel filter")
        if not 1 <= self.num_cepstra <= self.num_mel_filters:
            raise FormatError("num_cepstra must be in [1, num_mel_filters]")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise FormatError("pre_emphasis must be in [0, 1)")
        if self.nfft < 16:
            raise FormatError("nfft too small")

    def without_cmvn(self) -> "FeatureConfig":
        return replace(self, apply_cmvn=False)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """A (num_frames, dim) float32 matrix on a uniform frame grid."""

    frames: np.ndarray
    frame_shift_seconds: float = DEFAULT_FRAME_SHIFT_SECONDS
    source_id: str = ""

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[1] == 0:
            raise FormatError("feature matrix must be non-empty and 2-D")
        if self.frame_shift_seconds <= 0:
            raise FormatError("frame shift must be positive")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.num_frames * self.frame_shift_seconds


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (np.power(10.0, np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters: int, nfft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular mel filters as a (num_filters, nfft // 2 + 1) matrix.

    Filter edges are spaced uniformly on the mel scale from 0 Hz to the
    Nyquist frequency and snapped to FFT bins via floor((nfft + 1) f / sr).
    """
    low_mel = hz_to_mel(0.0)
    high_mel = hz_to_mel(sample_rate_hz / 2.0)
    mel_points = np.linspace(low_mel, high_mel, num_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((nfft + 1) * hz_points / sample_rate_hz).astype(int)

    bank = np.zeros((num_filters, nfft // 2 + 1), dtype=np.float64)
    for m in range(1, num_filters + 1):
        left, centre, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, centre):
            bank[m - 1, k] = (k - left) / max(centre - left, 1)
        for k in range(centre, right):
            bank[m - 1, k] = (right - k) / max(right - centre, 1)
    return bank


def _frame_signal(x: np.ndarray, frame_length: int, frame_shift: int) -> np.ndarray:
    if len(x) < frame_length:
        raise TooShort(
            f"signal of {len(x)} samples is shorter than one {frame_length}-sample frame"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_length)
    return windows[::frame_shift].copy()


def extract_mfcc(clip: AudioClip, config: FeatureConfig | None = None) -> FeatureMatrix:
    """Compute MFCC frames for one clip.

    Pipeline: pre-emphasis, framing, periodic Hann window, power spectrum,
    mel filterbank, log, DCT-II (orthonormal), optional per-utterance CMVN.
    """
    config = config or FeatureConfig()
    sr = clip.sample_rate_hz
    frame_length = int(round(config.frame_length_seconds * sr))
    frame_shift = int(round(config.frame_shift_seconds * sr))

    x = clip.samples.astype(np.float64, copy=True)
    if config.pre_emphasis > 0:
        x[1:] -= config.pre_emphasis * x[:-1]

    frames = _frame_signal(x, frame_length, frame_shift)

    n = np.arange(frame_length, dtype=np.float64)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_length)  # periodic Hann
    frames = frames * window

    spectrum = np.fft.rfft(frames, n=config.nfft, axis=1)
    power = np.square(np.abs(spectrum)) / config.nfft

    bank = mel_filterbank(config.num_mel_filters, config.nfft, sr)
    mel_energy = power @ bank.T
    mel_energy = np.maximum(mel_energy, np.finfo(np.float64).tiny)
    log_mel = np.log(mel_energy)

    cepstra = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)
    cepstra = cepstra[:, : config.num_cepstra]

    if config.apply_cmvn:
        cepstra = cmvn(cepstra)

    return FeatureMatrix(
        frames=cepstra.astype(np.float32),
        frame_shift_seconds=config.frame_shift_seconds,
        source_id=clip.source_id,
    )


def cmvn(frames: np.ndarray) -> np.ndarray:
    """Per-utterance mean subtraction and variance normalisation.

    Dimensions whose deviation is ~0 are only mean-centred, never divided,
    so constant features come out as exact zeros instead of noise.
    """
    frames = np.asarray(frames, dtype=np.float64)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    centred = frames - mean
    safe = std > 1e-10
    centred[:, safe] /= std[safe]
    return centred


def kwsf_encode(frames: np.ndarray) -> bytes:
    """Binary feature block: magic, version, <II> shape, float32 LE rows."""
    header = KWSF_MAGIC + bytes([KWSF_VERSION]) + struct.pack("<II", *frames.shape)
    return header + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def kwsf_decode(blob: bytes, origin: str = "feature block") -> np.ndarray:
    """Inverse of kwsf_encode; bit-exact for float32 frames."""
    if len(blob) < 13 or blob[:4] != KWSF_MAGIC:
        raise FormatError(f"{origin} is not KWSF data")
    if blob[4] != KWSF_VERSION:
        raise FormatError(f"{origin}: unsupported KWSF version {blob[4]}")
    num_frames, dim = struct.unpack("<II", blob[5:13])
    expected = 13 + 4 * num_frames * dim
    if len(blob) != expected:
        raise FormatError(
            f"{origin}: expected {expected} bytes for {num_frames}x{dim}, got {len(blob)}"
        )
    if num_frames == 0 or dim == 0:
        raise FormatError(f"{origin}: empty feature matrix")
    return np.frombuffer(blob[13:], dtype="<f4").reshape(num_frames, dim)


def write_features(features: FeatureMatrix, path: str | Path) -> None:
    """Serialise frames; .csv gets text, anything else the binary format."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_csv(features, path)
        return
    try:
        path.write_bytes(kwsf_encode(features.frames))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_features(path: str | Path) -> FeatureMatrix:
    """Inverse of write_features.  Binary round-trips are bit-exact."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_csv(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    frames = kwsf_decode(blob, origin=str(path))
    return FeatureMatrix(frames=frames, source_id=path.stem)


def _write_csv(features: FeatureMatrix, path: Path) -> None:
    try:
        # 9 significant digits round-trip float32 exactly.
        np.savetxt(path, features.frames, fmt="%.9g", delimiter=",")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_csv(path: Path) -> FeatureMatrix:
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: malformed CSV feature file: {exc}") from exc
    return FeatureMatrix(frames=raw.astype(np.float32), source_id=path.stem)


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    """Fixed-length voice print; unit L2 norm.

    kind is "stats" for the built-in mean/std summary of spectral features
    and "external" for vectors produced outside this package.
    """

    vector: np.ndarray
    kind: str = "stats"

    def __post_init__(self) -> None:
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1 or vector.size == 0:
            raise FormatError("embedding must be a non-empty vector")
        if self.kind not in ("stats", "external"):
            raise FormatError(f"unknown embedding kind {self.kind!r}")
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)


def speaker_stats_embedding(features: FeatureMatrix | np.ndarray) -> SpeakerEmbedding:
    """Summarise a feature matrix as L2-normalised [mean, std].

    Meant for features without CMVN; normalised features have near-constant
    statistics and would collapse every speaker onto the same vector.
    """
    frames = features.frames if isinstance(features, FeatureMatrix) else np.asarray(features)
    frames = frames.astype(np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise TooShort("stats embedding needs at least two frames")
    vector = np.concatenate([frames.mean(axis=0), frames.std(axis=0)])
    norm = np.linalg.norm(vector)
    if norm < 1e-12:
        raise DegenerateFeatures("feature statistics are all zero")
    return SpeakerEmbedding(vector=vector / norm, kind="stats")


def cosine_similarity(a: SpeakerEmbedding | np.ndarray, b: SpeakerEmbedding | np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    va = a.vector if isinstance(a, SpeakerEmbedding) else np.asarray(a, dtype=np.float64)
    vb = b.vector if isinstance(b, SpeakerEmbedding) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise FormatError(f"embedding dims differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateFeatures("cannot take cosine of a zero vector")
    return float(np.clip(np.dot(va / na, vb / nb), -1.0, 1.0))
