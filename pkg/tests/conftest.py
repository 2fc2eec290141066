"""Shared fixtures: synthetic tone keywords, noise, and task directories.

Each synthetic "speaker" owns a keyword rendered as a short sequence of
tones in a speaker-specific frequency band, so keywords are trivially
separable and end-to-end runs have a known right answer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from kwspot import AudioClip, write_labels, write_wav

SR = 16000

# One tone-frequency set per synthetic speaker, in disjoint bands.
KEYWORDS = {
    "s1": (300.0, 450.0, 600.0, 500.0, 380.0),
    "s2": (1200.0, 1500.0, 1900.0, 1400.0, 1700.0),
    "s3": (3000.0, 3600.0, 4200.0, 3300.0, 3900.0),
}


def tone_word(
    freqs,
    seed: int,
    duration: float = 0.5,
    amplitude: float = 0.3,
    noise_level: float = 0.005,
) -> AudioClip:
    """A keyword rendition: consecutive tone segments plus mild noise."""
    rng = np.random.default_rng(seed)
    n = int(duration * SR)
    t = np.arange(n) / SR
    samples = np.zeros(n)
    segment = n // len(freqs)
    for k, freq in enumerate(freqs):
        lo = k * segment
        hi = (k + 1) * segment if k < len(freqs) - 1 else n
        samples[lo:hi] = amplitude * np.sin(2 * np.pi * freq * t[lo:hi])
    ramp = np.linspace(0.0, 1.0, 160)
    samples[:160] *= ramp
    samples[-160:] *= ramp[::-1]
    samples += noise_level * rng.normal(size=n)
    return AudioClip(samples, SR)


def noise_clip(seed: int, duration: float = 0.8, level: float = 0.05) -> AudioClip:
    rng = np.random.default_rng(seed)
    return AudioClip(level * rng.normal(size=int(duration * SR)), SR)


def build_mini_task(root: Path, enroll_per_speaker: int = 5) -> Path:
    """Three-speaker task: 5 enrollments, 1 positive, 7 negatives each.

    Negatives are the other speakers' keywords (2 each) plus 3 noise
    clips, so a working detector should score exactly 0.
    """
    for si, (speaker_id, freqs) in enumerate(KEYWORDS.items()):
        speaker_dir = root / speaker_id
        (speaker_dir / "enroll").mkdir(parents=True)
        (speaker_dir / "test").mkdir()
        for k in range(enroll_per_speaker):
            write_wav(
                tone_word(freqs, seed=100 * si + k),
                speaker_dir / "enroll" / f"e{k}.wav",
            )
        labels: dict[str, int] = {}
        write_wav(tone_word(freqs, seed=100 * si + 50), speaker_dir / "test" / "pos0.wav")
        labels["pos0"] = 1
        other = 0
        for other_id, other_freqs in KEYWORDS.items():
            if other_id == speaker_id:
                continue
            for k in range(2):
                utt = f"neg{other}_{k}"
                write_wav(
                    tone_word(other_freqs, seed=1000 + 100 * si + 10 * other + k),
                    speaker_dir / "test" / f"{utt}.wav",
                )
                labels[utt] = 0
            other += 1
        for k in range(3):
            utt = f"negn{k}"
            write_wav(noise_clip(seed=2000 + 100 * si + k), speaker_dir / "test" / f"{utt}.wav")
            labels[utt] = 0
        write_labels(speaker_dir / "labels.txt", labels)
    return root


@pytest.fixture(scope="session")
def mini_task_dir(tmp_path_factory) -> Path:
    return build_mini_task(tmp_path_factory.mktemp("task"))


@pytest.fixture(scope="session")
def noise_dir(tmp_path_factory) -> Path:
    """Noise root with noise/ and music/ subdirectories, two files each."""
    root = tmp_path_factory.mktemp("noise")
    rng = np.random.default_rng(7)
    for sub, level in (("noise", 0.1), ("music", 0.08)):
        (root / sub).mkdir()
        for k in range(2):
            samples = level * rng.normal(size=3 * SR)
            if sub == "music":
                t = np.arange(3 * SR) / SR
                samples = samples + 0.05 * np.sin(2 * np.pi * (220 + 55 * k) * t)
            write_wav(AudioClip(samples, SR), root / sub / f"{sub}{k}.wav")
    return root


@pytest.fixture(scope="session")
def rir_dir(tmp_path_factory) -> Path:
    """RIR root with smallroom/ and mediumroom/ impulse responses."""
    root = tmp_path_factory.mktemp("rir")
    rng = np.random.default_rng(11)
    for sub, length, decay in (("smallroom", 400, 60.0), ("mediumroom", 1600, 15.0)):
        (root / sub).mkdir()
        for k in range(2):
            t = np.arange(length) / SR
            tail = 0.3 * np.exp(-decay * t) * rng.normal(size=length)
            tail[0] = 1.0
            write_wav(AudioClip(tail, SR), root / sub / f"{sub}{k}.wav")
    return root
