"""Audio augmentation: additive noise at a target SNR, impulse-response
reverberation, volume perturbation, splicing, and whole-task expansion.

Every op is deterministic under a fixed seed.  Task expansion derives one
RNG per output file from (seed, file identity), so neither iteration
order nor parallelism can change the emitted bytes.
"""

from __future__ import annotations

import hashlib
import shutil
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio import AudioClip, apply_gain, load_wav, splice, write_wav
from .errors import FormatError, InvalidScale, LayoutError, RateMismatch, SilentRir, SilentSignal

VOLUME_RANGE = (0.5, 2.0)
TEST_SNR_RANGE = (5.0, 25.0)


def add_noise(
    clip: AudioClip,
    noise: AudioClip,
    snr_db: float,
    seed: int | np.random.Generator = 0,
) -> AudioClip:
    """Mix a noise segment into the clip at the requested SNR.

    SNR is defined over full-clip average power.  The noise segment starts
    at a seeded random offset; noise shorter than the clip is tiled first.
    Output length equals the clip length.
    """
    if clip.sample_rate_hz != noise.sample_rate_hz:
        raise RateMismatch(
            f"noise rate {noise.sample_rate_hz} != clip rate {clip.sample_rate_hz}"
        )
    signal_power = float(np.mean(np.square(clip.samples)))
    if signal_power <= 0.0:
        raise SilentSignal("clip is silent; SNR is undefined")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    samples = noise.samples
    if len(samples) < len(clip.samples):
        offset = int(rng.integers(0, len(samples)))
        reps = -(-(offset + len(clip.samples)) // len(samples))  # ceil division
        segment = np.tile(samples, reps)[offset : offset + len(clip.samples)]
    else:
        offset = int(rng.integers(0, len(samples) - len(clip.samples) + 1))
        segment = samples[offset : offset + len(clip.samples)]

    noise_power = float(np.mean(np.square(segment)))
    if noise_power <= 0.0:
        raise SilentSignal("noise segment is silent; cannot reach the requested SNR")
    gain = np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return AudioClip(
        samples=clip.samples + gain * segment,
        sample_rate_hz=clip.sample_rate_hz,
        source_id=clip.source_id,
    )


def add_reverb(clip: AudioClip, rir: AudioClip, mixture_weight: float) -> AudioClip:
    """Blend the clip with its reverberant (convolved) version.

    The wet signal is RMS-matched to the dry clip before mixing so the
    weight means the same thing regardless of impulse-response energy.
    Output is truncated to the clip length.
    """
    if not 0.0 <= mixture_weight <= 1.0:
        raise FormatError(f"mixture_weight must be in [0, 1], got {mixture_weight}")
    if clip.sample_rate_hz != rir.sample_rate_hz:
        raise RateMismatch(
            f"RIR rate {rir.sample_rate_hz} != clip rate {clip.sample_rate_hz}"
        )
    if float(np.max(np.abs(rir.samples))) == 0.0:
        raise SilentRir("impulse response is all zeros")
    if mixture_weight == 0.0:
        return AudioClip(
            samples=clip.samples,
            sample_rate_hz=clip.sample_rate_hz,
            source_id=clip.source_id,
        )
    wet = fftconvolve(clip.samples, rir.samples, mode="full")[: len(clip.samples)]
    wet_rms = float(np.sqrt(np.mean(np.square(wet))))
    if wet_rms > 0.0:
        wet = wet * (clip.rms() / wet_rms)
    mixed = (1.0 - mixture_weight) * clip.samples + mixture_weight * wet
    return AudioClip(
        samples=mixed, sample_rate_hz=clip.sample_rate_hz, source_id=clip.source_id
    )


def perturb_volume(clip: AudioClip, scale: float) -> AudioClip:
    """Gain change restricted to the preset range [0.5, 2]."""
    if not VOLUME_RANGE[0] <= scale <= VOLUME_RANGE[1]:
        raise InvalidScale(
            f"volume scale must be in [{VOLUME_RANGE[0]}, {VOLUME_RANGE[1]}], got {scale}"
        )
    return apply_gain(clip, scale)


@dataclass(frozen=True)
class AugmentSpec:
    """Provenance of one emitted file: which op ran with which parameters."""

    op: str
    seed: int
    snr_db: float | None = None
    mixture_weight: float | None = None
    scale: float | None = None
    partner_path: str | None = None
    noise_path: str | None = None
    rir_path: str | None = None

    def describe(self) -> str:
        parts = [self.op]
        for name in ("snr_db", "mixture_weight", "scale"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value:.6g}")
        for name in ("partner_path", "noise_path", "rir_path"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value}")
        parts.append(f"seed={self.seed}")
        return " ".join(parts)


@dataclass(frozen=True)
class PresetItem:
    """One op applied to a fraction of the corpus.

    times is a corpus multiplier: 0.5 means half the utterances (rounded)
    get one variant each, 2.0 means two variants per utterance.  source
    names a subdirectory of the noise/RIR root to draw files from
    ("noise", "music", "smallroom", "mediumroom"); when absent or not
    present on disk, the root itself is used.
    """

    op: str
    times: float
    snr_choices: tuple[float, ...] | None = None
    snr_range: tuple[float, float] | None = None
    mixture_weight: float | None = None
    scale_range: tuple[float, float] | None = None
    source: str | None = None

    def __post_init__(self) -> None:
        if self.op not in ("splice", "add_noise", "add_reverb", "perturb_volume"):
            raise FormatError(f"unknown augmentation op {self.op!r}")
        if self.times <= 0:
            raise FormatError("times must be positive")
        if self.op == "add_noise" and not (self.snr_choices or self.snr_range):
            raise FormatError("add_noise needs snr_choices or snr_range")
        if self.op == "add_reverb" and self.mixture_weight is None:
            raise FormatError("add_reverb needs mixture_weight")
        if self.op == "perturb_volume" and self.scale_range is None:
            raise FormatError("perturb_volume needs scale_range")


@dataclass(frozen=True)
class AugmentPreset:
    """A named bundle of ops; originals are kept alongside the variants."""

    name: str
    items: tuple[PresetItem, ...]
    include_originals: bool = True

    @property
    def total_multiplier(self) -> float:
        """Expected output size as a multiple of the input corpus."""
        base = 1.0 if self.include_originals else 0.0
        return base + sum(item.times for item in self.items)


def sv_training_preset() -> AugmentPreset:
    """Speaker-model training recipe: reverb from two room sizes and
    noise/music at three SNRs, half the corpus each, originals kept.
    Multiplies the corpus by 3."""
    return AugmentPreset(
        name="sv_training",
        items=(
            PresetItem("add_reverb", 0.5, mixture_weight=0.5, source="smallroom"),
            PresetItem("add_reverb", 0.5, mixture_weight=0.5, source="mediumroom"),
            PresetItem("add_noise", 0.5, snr_choices=(15.0, 10.0, 5.0), source="noise"),
            PresetItem("add_noise", 0.5, snr_choices=(20.0, 15.0, 10.0), source="music"),
        ),
    )


def expansion_preset() -> AugmentPreset:
    """Test-set diversity recipe: every utterance additionally spliced,
    noised somewhere in 5-25 dB, reverberated at half weight, and
    volume-perturbed in [0.5, 2]."""
    return AugmentPreset(
        name="test_expansion",
        items=(
            PresetItem("splice", 1.0),
            PresetItem("add_noise", 1.0, snr_range=TEST_SNR_RANGE),
            PresetItem("add_reverb", 1.0, mixture_weight=0.5),
            PresetItem("perturb_volume", 1.0, scale_range=VOLUME_RANGE),
        ),
    )


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _file_rng(seed: int, identity: str) -> np.random.Generator:
    return np.random.default_rng([seed, _stable_int(identity)])


def _source_files(base: Path | None, hint: str | None, what: str) -> list[Path]:
    if base is None:
        raise LayoutError(f"preset needs {what} files but no {what} directory was given")
    base = Path(base)
    if not base.is_dir():
        raise LayoutError(f"{what} directory {base} does not exist")
    search = base / hint if hint and (base / hint).is_dir() else base
    files = sorted(search.rglob("*.wav"))
    if not files:
        raise LayoutError(f"no WAV files under {search}")
    return files


def _pick(rng: np.random.Generator, items: list):
    return items[int(rng.integers(len(items)))]


def expand_testset(
    task_dir: str | Path,
    out_dir: str | Path,
    preset: AugmentPreset | None = None,
    noise_dir: str | Path | None = None,
    rir_dir: str | Path | None = None,
    seed: int = 0,
) -> Path:
    """Augment every speaker's test set into a new task directory.

    Labels never flip: the keyword sits at the end of positive clips, so
    splice partners are prepended to positives; negatives get partners
    appended, drawn from same-speaker negatives or any other speaker's
    utterances (never a same-speaker positive, which would plant the
    keyword at the end).  Each speaker gains a provenance.txt describing
    every emitted file.
    """
    from .harness import load_manifest, read_labels, write_labels

    preset = preset or expansion_preset()
    manifest = load_manifest(task_dir)
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    ops_used = {item.op for item in preset.items}
    if "add_noise" in ops_used:
        _source_files(noise_dir, None, "noise")
    if "add_reverb" in ops_used:
        _source_files(rir_dir, None, "RIR")

    all_utts = [
        (task.speaker_id, utt_id, task.test_dir / f"{utt_id}.wav", label)
        for task in manifest.speakers
        for utt_id, label in sorted(read_labels(task.labels_path).items())
    ]

    for task in manifest.speakers:
        speaker = task.speaker_id
        out_speaker = out_root / speaker
        out_enroll = out_speaker / "enroll"
        out_test = out_speaker / "test"
        out_enroll.mkdir(parents=True, exist_ok=True)
        out_test.mkdir(parents=True, exist_ok=True)
        for wav in sorted(task.enroll_dir.glob("*.wav")):
            shutil.copyfile(wav, out_enroll / wav.name)

        labels = read_labels(task.labels_path)
        utt_ids = sorted(labels)
        out_labels: dict[str, int] = {}
        provenance: list[str] = []

        for utt_id in utt_ids:
            shutil.copyfile(task.test_dir / f"{utt_id}.wav", out_test / f"{utt_id}.wav")
            out_labels[utt_id] = labels[utt_id]
            provenance.append(f"{utt_id} origin seed={seed}")

        serial: dict[str, int] = {}
        for item_index, item in enumerate(preset.items):
            count = round(item.times * len(utt_ids))
            order_rng = _file_rng(seed, f"{speaker}/select/{item_index}")
            order = list(utt_ids)
            order_rng.shuffle(order)
            chosen = [order[i % len(order)] for i in range(count)]
            for utt_id in chosen:
                key = f"{utt_id}/{item.op}"
                k = serial.get(key, 0)
                serial[key] = k + 1
                new_id = f"{utt_id}__{item.op}{k}"
                rng = _file_rng(seed, f"{speaker}/{new_id}")
                clip = load_wav(task.test_dir / f"{utt_id}.wav")
                try:
                    result, spec = _apply_item(
                        item, clip, speaker, utt_id, labels[utt_id],
                        all_utts, noise_dir, rir_dir, rng, seed,
                    )
                except SilentSignal as exc:
                    warnings.warn(f"{speaker}/{utt_id}: {exc}; variant skipped", stacklevel=2)
                    continue
                if result is None:
                    continue
                write_wav(result, out_test / f"{new_id}.wav")
                out_labels[new_id] = labels[utt_id]
                provenance.append(f"{new_id} {spec.describe()}")

        write_labels(out_speaker / "labels.txt", out_labels)
        (out_speaker / "provenance.txt").write_text(
            "".join(line + "\n" for line in provenance), encoding="utf-8"
        )
    return out_root


def _apply_item(
    item: PresetItem,
    clip: AudioClip,
    speaker: str,
    utt_id: str,
    label: int,
    all_utts: list[tuple[str, str, Path, int]],
    noise_dir: str | Path | None,
    rir_dir: str | Path | None,
    rng: np.random.Generator,
    seed: int,
) -> tuple[AudioClip | None, AugmentSpec | None]:
    if item.op == "perturb_volume":
        scale = float(rng.uniform(*item.scale_range))
        return perturb_volume(clip, scale), AugmentSpec("perturb_volume", seed, scale=scale)

    if item.op == "add_noise":
        files = _source_files(noise_dir, item.source, "noise")
        noise_path = _pick(rng, files)
        if item.snr_choices:
            snr = float(_pick(rng, list(item.snr_choices)))
        else:
            snr = float(rng.uniform(*item.snr_range))
        out = add_noise(clip, load_wav(noise_path), snr, seed=rng)
        return out, AugmentSpec("add_noise", seed, snr_db=snr, noise_path=noise_path.name)

    if item.op == "add_reverb":
        files = _source_files(rir_dir, item.source, "RIR")
        rir_path = _pick(rng, files)
        out = add_reverb(clip, load_wav(rir_path), item.mixture_weight)
        return out, AugmentSpec(
            "add_reverb", seed, mixture_weight=item.mixture_weight, rir_path=rir_path.name
        )

    # splice: prepend to positives (keyword stays final); append to
    # negatives from a pool that cannot introduce the keyword.
    if label == 1:
        pool = [u for u in all_utts if u[0] == speaker and u[1] != utt_id]
    else:
        pool = [
            u for u in all_utts
            if (u[0] == speaker and u[3] == 0 and u[1] != utt_id) or u[0] != speaker
        ]
    if not pool:
        warnings.warn(f"{speaker}/{utt_id}: no splice partner available", stacklevel=2)
        return None, None
    partner_speaker, partner_id, partner_path, _ = _pick(rng, pool)
    partner = load_wav(partner_path)
    out = splice(partner, clip) if label == 1 else splice(clip, partner)
    out = AudioClip(out.samples, out.sample_rate_hz, source_id=clip.source_id)
    return out, AugmentSpec(
        "splice", seed, partner_path=f"{partner_speaker}/{partner_id}"
    )
