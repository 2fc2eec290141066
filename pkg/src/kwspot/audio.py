"""Raw audio in the pipeline's fixed format: 16 kHz, 16-bit, mono PCM WAV.

In-memory samples are float64 and deliberately unclipped so augmentation
chains compose without cumulative saturation; clipping happens once, at
write time.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidScale, IoError, RateMismatch

PIPELINE_SAMPLE_RATE = 16000

# int16 full scale.  Dividing by 32768 (not 32767) maps the representable
# range onto [-1, 1) symmetrically around zero.
INT16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono audio samples with their sample rate.

    samples are float64 in (nominally) [-1, 1]; arithmetic may leave that
    range and only write_wav saturates.
    """

    samples: np.ndarray
    sample_rate_hz: int = PIPELINE_SAMPLE_RATE
    source_id: str = ""

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise FormatError("clip needs a non-empty 1-D sample array")
        if self.sample_rate_hz <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))


def load_wav(path: str | Path) -> AudioClip:
    """Read a 16 kHz / 16-bit / mono PCM WAV file.

    Ints are mapped to floats by division by 32768.  Anything that is not
    exactly the pipeline format is rejected rather than converted.
    """
    path = Path(path)
    try:
        reader = wave.open(str(path), "rb")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path} is not a RIFF/WAVE PCM file: {exc}") from exc
    with reader:
        channels = reader.getnchannels()
        sample_width = reader.getsampwidth()
        rate = reader.getframerate()
        n_frames = reader.getnframes()
        if channels != 1:
            raise FormatError(f"{path}: channels={channels}, expected mono")
        if sample_width != 2:
            raise FormatError(f"{path}: bit depth={8 * sample_width}, expected 16-bit")
        if rate != PIPELINE_SAMPLE_RATE:
            raise FormatError(f"{path}: sample rate={rate}, expected {PIPELINE_SAMPLE_RATE}")
        if n_frames == 0:
            raise FormatError(f"{path}: no samples")
        raw = reader.readframes(n_frames)
    ints = np.frombuffer(raw, dtype="<i2")
    samples = ints.astype(np.float64) / INT16_SCALE
    return AudioClip(samples=samples, sample_rate_hz=rate, source_id=path.stem)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    """Write a clip as 16-bit mono PCM; values outside [-1, 1] saturate."""
    path = Path(path)
    scaled = np.rint(np.clip(clip.samples, -1.0, 1.0) * INT16_SCALE)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as writer:
            writer.setnchannels(1)
            writer.setsampwidth(2)
            writer.setframerate(clip.sample_rate_hz)
            writer.writeframes(ints.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def splice(a: AudioClip, b: AudioClip) -> AudioClip:
    """Concatenate two clips, a first."""
    if a.sample_rate_hz != b.sample_rate_hz:
        raise RateMismatch(
            f"cannot splice {a.sample_rate_hz} Hz with {b.sample_rate_hz} Hz"
        )
    joined = np.concatenate([a.samples, b.samples])
    return AudioClip(
        samples=joined,
        sample_rate_hz=a.sample_rate_hz,
        source_id=f"{a.source_id}+{b.source_id}" if a.source_id or b.source_id else "",
    )


def splice_all(clips: list[AudioClip]) -> AudioClip:
    """Concatenate clips left to right."""
    if not clips:
        raise FormatError("nothing to splice")
    out = clips[0]
    for clip in clips[1:]:
        out = splice(out, clip)
    return out


def apply_gain(clip: AudioClip, scale: float) -> AudioClip:
    """Multiply every sample by scale (> 0).  No clipping in memory."""
    if not np.isfinite(scale) or scale <= 0:
        raise InvalidScale(f"gain scale must be a positive finite number, got {scale}")
    return AudioClip(
        samples=clip.samples * float(scale),
        sample_rate_hz=clip.sample_rate_hz,
        source_id=clip.source_id,
    )
