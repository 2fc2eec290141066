"""Task execution and scoring.

A task directory holds one subdirectory per speaker with enrollment
audio, test audio, and hidden labels.  The runner drives either the
built-in detector or an external system (three executables: initialize,
enroll, predict) through the phased protocol, enforcing per-phase time
budgets, then scores predictions as S = MR + 9 * FAR per speaker and
averages across speakers.  Predictions a system failed to produce score
as 0 ("no wake"): a terminated system cannot wake, so overruns surface
as misses.
"""

from __future__ import annotations

import os
import signal
import subprocess
import tempfile
import time
import warnings
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .audio import load_wav
from .detector import DetectorConfig, predict_batch
from .enrollment import build_profile
from .errors import (
    DuplicateUtt,
    FormatError,
    IoError,
    LayoutError,
    ParseError,
    SystemCrashed,
    UnknownUttId,
    ZeroDuration,
)

ALPHA = 9.0


@dataclass(frozen=True)
class SpeakerTask:
    """One speaker's corner of the task directory."""

    speaker_id: str
    enroll_dir: Path
    test_dir: Path
    labels_path: Path


@dataclass(frozen=True)
class TaskManifest:
    root: Path
    speakers: tuple[SpeakerTask, ...]


@dataclass(frozen=True)
class Budget:
    """Phase time limits; predict is bounded as a multiple of audio time."""

    init_seconds: float = 1800.0
    enroll_seconds_per_speaker: float = 300.0
    predict_rtf_limit: float = 1.0
    space_bytes: int | None = None

    def __post_init__(self) -> None:
        for name in ("init_seconds", "enroll_seconds_per_speaker", "predict_rtf_limit"):
            if getattr(self, name) <= 0:
                raise FormatError(f"{name} must be positive")
        if self.space_bytes is not None and self.space_bytes <= 0:
            raise FormatError("space_bytes must be positive when set")


@dataclass(frozen=True)
class PredictionRecord:
    utt_id: str
    predicted: int
    missing: bool = False

    def __post_init__(self) -> None:
        if self.predicted not in (0, 1):
            raise FormatError(f"prediction must be 0 or 1, got {self.predicted}")
        if self.missing and self.predicted != 0:
            raise FormatError("a missing prediction always scores 0")


@dataclass(frozen=True)
class SpeakerScore:
    speaker_id: str
    miss_rate: float
    far: float
    score: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class ScoreReport:
    per_speaker: tuple[SpeakerScore, ...]
    average_score: float
    average_mr: float
    average_far: float
    rtf: float
    timings: dict[str, float] = field(default_factory=dict)


def load_manifest(root: str | Path) -> TaskManifest:
    """Discover speakers under root and validate the layout.

    Each speaker needs enroll/*.wav, test/, and labels.txt whose utterance
    ids match the test WAV stems exactly.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"task root {root} is not a directory")
    speakers = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        enroll_dir = entry / "enroll"
        test_dir = entry / "test"
        labels_path = entry / "labels.txt"
        if not enroll_dir.is_dir():
            raise LayoutError(f"{entry}: missing enroll/ directory")
        if not test_dir.is_dir():
            raise LayoutError(f"{entry}: missing test/ directory")
        if not labels_path.is_file():
            raise LayoutError(f"{entry}: missing labels.txt")
        if not any(enroll_dir.glob("*.wav")):
            raise LayoutError(f"{enroll_dir}: no enrollment WAV files")
        stems = {p.stem for p in test_dir.glob("*.wav")}
        labels = read_labels(labels_path)
        if stems != set(labels):
            extra = sorted(stems - set(labels))[:3]
            absent = sorted(set(labels) - stems)[:3]
            raise LayoutError(
                f"{entry}: test WAVs and labels disagree"
                f" (unlabeled: {extra}, missing audio: {absent})"
            )
        speakers.append(
            SpeakerTask(
                speaker_id=entry.name,
                enroll_dir=enroll_dir,
                test_dir=test_dir,
                labels_path=labels_path,
            )
        )
    if not speakers:
        raise LayoutError(f"no speaker directories under {root}")
    return TaskManifest(root=root, speakers=tuple(speakers))


def _parse_label_line(line: str, where: str) -> tuple[str, int]:
    parts = line.split(" ")
    if len(parts) != 2 or not parts[0] or parts[1] not in ("0", "1"):
        raise ParseError(f"{where}: expected '<utt_id> <0|1>', got {line!r}")
    return parts[0], int(parts[1])


def read_labels(path: str | Path) -> dict[str, int]:
    """Parse a labels file (lines of '<utt_id> <0|1>', LF endings)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    labels: dict[str, int] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        utt_id, label = _parse_label_line(line, f"{path}:{lineno}")
        if utt_id in labels:
            raise DuplicateUtt(f"{path}:{lineno}: duplicate utterance {utt_id!r}")
        labels[utt_id] = label
    return labels


def write_labels(path: str | Path, labels: dict[str, int]) -> None:
    lines = [f"{utt_id} {labels[utt_id]}" for utt_id in sorted(labels)]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    """Strict prediction-file parse; same grammar as labels."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        utt_id, label = _parse_label_line(line, f"{path}:{lineno}")
        if utt_id in seen:
            raise DuplicateUtt(f"{path}:{lineno}: duplicate utterance {utt_id!r}")
        seen.add(utt_id)
        records.append(PredictionRecord(utt_id=utt_id, predicted=label))
    return records


def read_predictions_partial(path: str | Path) -> list[PredictionRecord]:
    """Salvage parse for output of a terminated process.

    Well-formed lines are kept (first occurrence wins); malformed or
    truncated lines are dropped.  A missing file yields no records.
    """
    path = Path(path)
    if not path.is_file():
        return []
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    for line in path.read_text(encoding="utf-8", errors="replace").split("\n"):
        if line == "":
            continue
        try:
            utt_id, label = _parse_label_line(line, str(path))
        except ParseError:
            continue
        if utt_id not in seen:
            seen.add(utt_id)
            records.append(PredictionRecord(utt_id=utt_id, predicted=label))
    return records


def write_predictions(path: str | Path, records: Sequence[PredictionRecord]) -> None:
    try:
        Path(path).write_text(
            "".join(f"{r.utt_id} {r.predicted}\n" for r in records), encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def score_speaker(
    preds: Sequence[PredictionRecord],
    labels: dict[str, int],
    alpha: float = ALPHA,
    speaker_id: str = "",
) -> SpeakerScore:
    """Miss rate, false-alarm rate, and S = MR + alpha * FAR for one speaker.

    Labeled utterances without a prediction are synthesized as missing
    (predicted 0).  A class that is absent contributes 0 to the score,
    with a warning, so degenerate tasks still aggregate cleanly.
    """
    by_id: dict[str, PredictionRecord] = {}
    for record in preds:
        if record.utt_id not in labels:
            raise UnknownUttId(f"prediction for unlabeled utterance {record.utt_id!r}")
        if record.utt_id in by_id:
            raise DuplicateUtt(f"two predictions for utterance {record.utt_id!r}")
        by_id[record.utt_id] = record

    n_pos = sum(1 for v in labels.values() if v == 1)
    n_neg = len(labels) - n_pos
    misses = 0
    false_alarms = 0
    for utt_id, truth in labels.items():
        record = by_id.get(utt_id)
        predicted = record.predicted if record is not None else 0
        if truth == 1 and predicted == 0:
            misses += 1
        elif truth == 0 and predicted == 1:
            false_alarms += 1

    if n_pos == 0:
        warnings.warn(f"speaker {speaker_id or '?'}: no positive labels", stacklevel=2)
    if n_neg == 0:
        warnings.warn(f"speaker {speaker_id or '?'}: no negative labels", stacklevel=2)
    miss_rate = misses / n_pos if n_pos else 0.0
    far = false_alarms / n_neg if n_neg else 0.0
    return SpeakerScore(
        speaker_id=speaker_id,
        miss_rate=miss_rate,
        far=far,
        score=miss_rate + alpha * far,
        n_pos=n_pos,
        n_neg=n_neg,
    )


def compute_rtf(t_process_seconds: float, t_data_seconds: float) -> float:
    """Real-time factor: processing time over audio time."""
    if t_data_seconds <= 0:
        raise ZeroDuration("cannot compute RTF over zero audio duration")
    return t_process_seconds / t_data_seconds


def _wav_duration_seconds(path: Path) -> float:
    try:
        with wave.open(str(path), "rb") as reader:
            frames = reader.getnframes()
            rate = reader.getframerate()
    except (OSError, wave.Error, EOFError) as exc:
        raise FormatError(f"cannot read WAV header of {path}: {exc}") from exc
    if rate <= 0:
        raise FormatError(f"{path}: bad sample rate in header")
    return frames / rate


@dataclass(frozen=True)
class ExternalSystem:
    """A system under test: a directory with three executables.

    Each phase executable may be a bare name or carry a .sh suffix:
    initialize <workdir>; enroll <workdir> <speaker_id> <enroll_dir>;
    predict <workdir> <speaker_id> <test_list_file> <predictions_file>.
    Exit 0 means success; anything else (or a budget timeout, which gets
    the whole process group SIGKILLed) fails the phase.
    """

    exec_dir: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "exec_dir", Path(self.exec_dir))

    def executable(self, phase: str) -> Path:
        for name in (phase, phase + ".sh"):
            candidate = self.exec_dir / name
            if candidate.is_file() and os.access(candidate, os.X_OK):
                return candidate
        raise LayoutError(f"no executable {phase!r} under {self.exec_dir}")


def _run_phase(argv: list[str], timeout_seconds: float, log_path: Path) -> tuple[str, float, str]:
    """Run one phase process; returns (status, elapsed, detail).

    status is "ok", "timeout", or "error".  The child gets its own session
    so a timeout can kill the entire process group, including grandchildren.
    """
    start = time.monotonic()
    try:
        with open(log_path, "ab") as log:
            proc = subprocess.Popen(
                argv, stdout=log, stderr=log, start_new_session=True
            )
    except OSError as exc:
        return "error", 0.0, f"cannot launch {argv[0]}: {exc}"
    try:
        returncode = proc.wait(timeout=timeout_seconds)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        proc.wait()
        return "timeout", time.monotonic() - start, f"killed after {timeout_seconds:.3f}s"
    elapsed = time.monotonic() - start
    if returncode != 0:
        return "error", elapsed, f"exit code {returncode}"
    return "ok", elapsed, ""


def _dir_size_bytes(root: Path) -> int:
    total = 0
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            try:
                total += (Path(dirpath) / name).stat().st_size
            except OSError:
                pass
    return total


def run_task(
    manifest: TaskManifest,
    system: ExternalSystem | DetectorConfig,
    budget: Budget | None = None,
    workdir: str | Path | None = None,
) -> ScoreReport:
    """Run the full phased protocol over a task and score it.

    system is either an ExternalSystem (subprocess protocol) or a
    DetectorConfig for the built-in detector.  workdir only applies to
    external systems (scratch space handed to every phase).
    """
    budget = budget or Budget()
    if isinstance(system, ExternalSystem):
        return _run_external_task(manifest, system, budget, workdir)
    if isinstance(system, DetectorConfig):
        return _run_builtin_task(manifest, system, budget)
    raise FormatError(f"cannot run a {type(system).__name__} as a system under test")


def _aggregate(
    scores: list[SpeakerScore],
    predict_elapsed: float,
    data_seconds: float,
    timings: dict[str, float],
) -> ScoreReport:
    n = len(scores)
    rtf = compute_rtf(predict_elapsed, data_seconds) if data_seconds > 0 else 0.0
    return ScoreReport(
        per_speaker=tuple(scores),
        average_score=sum(s.score for s in scores) / n,
        average_mr=sum(s.miss_rate for s in scores) / n,
        average_far=sum(s.far for s in scores) / n,
        rtf=rtf,
        timings=timings,
    )


def _run_builtin_task(
    manifest: TaskManifest, config: DetectorConfig, budget: Budget
) -> ScoreReport:
    """Built-in detector run.

    The detector runs in-process, so enrollment overruns are detected
    after the fact rather than preempted; the predict loop checks its
    deadline before every utterance and marks the rest missing once the
    phase budget is spent.
    """
    scores: list[SpeakerScore] = []
    enroll_total = 0.0
    predict_total = 0.0
    data_total = 0.0

    for task in manifest.speakers:
        labels = read_labels(task.labels_path)
        test_paths = sorted(task.test_dir.glob("*.wav"))
        speaker_data = sum(_wav_duration_seconds(p) for p in test_paths)

        enroll_start = time.monotonic()
        enroll_failed = False
        profile = None
        try:
            clips = [load_wav(p) for p in sorted(task.enroll_dir.glob("*.wav"))]
            profile = build_profile(
                clips, config, speaker_id=task.speaker_id, created_at=0.0
            )
        except Exception as exc:
            warnings.warn(f"enrollment failed for {task.speaker_id}: {exc}", stacklevel=2)
            enroll_failed = True
        enroll_elapsed = time.monotonic() - enroll_start
        enroll_total += enroll_elapsed
        if not enroll_failed and enroll_elapsed > budget.enroll_seconds_per_speaker:
            warnings.warn(
                f"enrollment for {task.speaker_id} took {enroll_elapsed:.1f}s"
                f" (budget {budget.enroll_seconds_per_speaker:.1f}s); speaker voided",
                stacklevel=2,
            )
            enroll_failed = True

        records: list[PredictionRecord] = []
        if not enroll_failed:
            deadline = budget.predict_rtf_limit * speaker_data
            predict_start = time.monotonic()
            for path in test_paths:
                if time.monotonic() - predict_start > deadline:
                    warnings.warn(
                        f"predict budget exhausted for {task.speaker_id};"
                        " remaining utterances marked missing",
                        stacklevel=2,
                    )
                    break
                try:
                    decisions = predict_batch(profile, [load_wav(path)], config)
                    predicted = int(decisions[0].wake)
                except Exception as exc:
                    warnings.warn(f"{path}: {exc}", stacklevel=2)
                    predicted = 0
                records.append(PredictionRecord(utt_id=path.stem, predicted=predicted))
            predict_total += time.monotonic() - predict_start
            data_total += speaker_data

        scores.append(
            score_speaker(records, labels, alpha=ALPHA, speaker_id=task.speaker_id)
        )

    timings = {
        "initialize": 0.0,
        "enroll_total": enroll_total,
        "predict_total": predict_total,
    }
    return _aggregate(scores, predict_total, data_total, timings)


def _run_external_task(
    manifest: TaskManifest,
    system: ExternalSystem,
    budget: Budget,
    workdir: str | Path | None,
) -> ScoreReport:
    if workdir is None:
        workdir = Path(tempfile.mkdtemp(prefix="kws_run_"))
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    logs = workdir / "logs"
    logs.mkdir(exist_ok=True)

    status, init_elapsed, detail = _run_phase(
        [str(system.executable("initialize")), str(workdir)],
        budget.init_seconds,
        logs / "initialize.log",
    )
    if status != "ok":
        raise SystemCrashed(f"initialize failed: {detail}")

    space_exhausted = False

    def over_space() -> bool:
        nonlocal space_exhausted
        if space_exhausted:
            return True
        if budget.space_bytes is not None and _dir_size_bytes(workdir) > budget.space_bytes:
            warnings.warn(
                f"work directory exceeds the space budget ({budget.space_bytes} bytes);"
                " remaining phases voided",
                stacklevel=3,
            )
            space_exhausted = True
        return space_exhausted

    over_space()
    scores: list[SpeakerScore] = []
    enroll_total = 0.0
    predict_total = 0.0
    data_total = 0.0

    for task in manifest.speakers:
        labels = read_labels(task.labels_path)
        records: list[PredictionRecord] = []

        enroll_ok = False
        if not over_space():
            status, elapsed, detail = _run_phase(
                [
                    str(system.executable("enroll")),
                    str(workdir),
                    task.speaker_id,
                    str(task.enroll_dir),
                ],
                budget.enroll_seconds_per_speaker,
                logs / f"enroll_{task.speaker_id}.log",
            )
            enroll_total += elapsed
            if status == "ok":
                enroll_ok = True
            else:
                warnings.warn(
                    f"enroll {status} for {task.speaker_id}: {detail};"
                    " all predictions marked missing",
                    stacklevel=2,
                )

        if enroll_ok and not over_space():
            test_paths = sorted(task.test_dir.glob("*.wav"))
            speaker_data = sum(_wav_duration_seconds(p) for p in test_paths)
            list_path = workdir / f"{task.speaker_id}_test_list.txt"
            out_path = workdir / f"{task.speaker_id}_predictions.txt"
            list_path.write_text(
                "".join(str(p.resolve()) + "\n" for p in test_paths), encoding="utf-8"
            )
            if out_path.exists():
                out_path.unlink()
            status, elapsed, detail = _run_phase(
                [
                    str(system.executable("predict")),
                    str(workdir),
                    task.speaker_id,
                    str(list_path),
                    str(out_path),
                ],
                budget.predict_rtf_limit * speaker_data,
                logs / f"predict_{task.speaker_id}.log",
            )
            predict_total += elapsed
            data_total += speaker_data
            if status == "ok":
                try:
                    records = read_predictions(out_path)
                except (ParseError, IoError) as exc:
                    warnings.warn(
                        f"bad predictions from {task.speaker_id}: {exc};"
                        " all marked missing",
                        stacklevel=2,
                    )
                    records = []
            else:
                warnings.warn(
                    f"predict {status} for {task.speaker_id}: {detail};"
                    " salvaging produced predictions",
                    stacklevel=2,
                )
                records = read_predictions_partial(out_path)
            known = [r for r in records if r.utt_id in labels]
            if len(known) != len(records):
                warnings.warn(
                    f"{task.speaker_id}: dropped {len(records) - len(known)}"
                    " predictions for unknown utterances",
                    stacklevel=2,
                )
            records = known
            over_space()

        scores.append(
            score_speaker(records, labels, alpha=ALPHA, speaker_id=task.speaker_id)
        )

    timings = {
        "initialize": init_elapsed,
        "enroll_total": enroll_total,
        "predict_total": predict_total,
    }
    return _aggregate(scores, predict_total, data_total, timings)


def format_report(report: ScoreReport) -> str:
    """Human-readable score table."""
    lines = [
        f"{'speaker':<16} {'MR':>8} {'FAR':>8} {'score':>8} {'pos':>5} {'neg':>5}",
        "-" * 54,
    ]
    for s in report.per_speaker:
        lines.append(
            f"{s.speaker_id:<16} {s.miss_rate:>8.3f} {s.far:>8.3f}"
            f" {s.score:>8.3f} {s.n_pos:>5d} {s.n_neg:>5d}"
        )
    lines.append("-" * 54)
    lines.append(
        f"average score {report.average_score:.3f}"
        f"  (MR {report.average_mr:.3f}, FAR {report.average_far:.3f},"
        f" RTF {report.rtf:.3f})"
    )
    return "\n".join(lines)


def report_lines(report: ScoreReport) -> list[str]:
    """Machine-readable report: one key=value line per speaker plus one aggregate."""
    lines = [
        f"speaker={s.speaker_id} mr={s.miss_rate:.6f} far={s.far:.6f}"
        f" score={s.score:.6f} n_pos={s.n_pos} n_neg={s.n_neg}"
        for s in report.per_speaker
    ]
    lines.append(
        f"average_score={report.average_score:.6f}"
        f" average_mr={report.average_mr:.6f}"
        f" average_far={report.average_far:.6f}"
        f" rtf={report.rtf:.6f}"
        f" n_speakers={len(report.per_speaker)}"
    )
    return lines


def write_report(report: ScoreReport, path: str | Path) -> None:
    try:
        Path(path).write_text(
            "".join(line + "\n" for line in report_lines(report)), encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
