"""Scoring, task layout, phase budgets, and the external-system protocol."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwspot import (
    AudioClip,
    Budget,
    DetectorConfig,
    DuplicateUtt,
    ExternalSystem,
    FormatError,
    IoError,
    LayoutError,
    ParseError,
    PredictionRecord,
    SystemCrashed,
    UnknownUttId,
    ZeroDuration,
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
    write_wav,
)

from conftest import SR, build_mini_task, tone_word

INIT_OK = "#!/bin/sh\nexit 0\n"
ENROLL_OK = "#!/bin/sh\nexit 0\n"

# Cheating reference predictor: looks the label up next to the test file.
PREDICT_PERFECT = """#!/usr/bin/env python3
import sys
from pathlib import Path
_, work, speaker, list_path, out_path = sys.argv
lines = []
for raw in Path(list_path).read_text().split():
    p = Path(raw)
    labels = dict(
        line.split(" ") for line in (p.parent.parent / "labels.txt").read_text().splitlines()
    )
    lines.append(f"{p.stem} {labels[p.stem]}")
Path(out_path).write_text("\\n".join(lines) + "\\n")
"""

PREDICT_SLOW = """#!/usr/bin/env python3
import sys, time
from pathlib import Path
_, work, speaker, list_path, out_path = sys.argv
with open(out_path, "w") as f:
    for raw in Path(list_path).read_text().split():
        f.write(f"{Path(raw).stem} 1\\n")
        f.flush()
        time.sleep(0.5)
"""


def make_system(root, initialize=INIT_OK, enroll=ENROLL_OK, predict=PREDICT_PERFECT):
    exec_dir = root / "system"
    exec_dir.mkdir()
    for name, body in (("initialize", initialize), ("enroll", enroll), ("predict", predict)):
        path = exec_dir / name
        path.write_text(body)
        path.chmod(0o755)
    return ExternalSystem(exec_dir)


def build_flat_task(root, speakers=("a", "b"), n_test=4, duration=0.3, negatives=0):
    """Minimal layout for protocol tests: labels are mostly positive."""
    rng = np.random.default_rng(0)
    for sid in speakers:
        (root / sid / "enroll").mkdir(parents=True)
        (root / sid / "test").mkdir()
        for k in range(2):
            write_wav(tone_word((440.0,), seed=k, duration=0.3), root / sid / "enroll" / f"e{k}.wav")
        labels = {}
        for k in range(n_test):
            utt = f"t{k}"
            clip = AudioClip(0.1 * rng.normal(size=int(duration * SR)), SR)
            write_wav(clip, root / sid / "test" / f"{utt}.wav")
            labels[utt] = 0 if k < negatives else 1
        write_labels(root / sid / "labels.txt", labels)
    return root


def records(pairs):
    return [PredictionRecord(utt_id=u, predicted=p) for u, p in pairs]


def test_score_speaker_counting():
    labels = {f"p{i}": 1 for i in range(4)}
    labels.update({f"n{i}": 0 for i in range(6)})
    preds = records([("p0", 1), ("p1", 1), ("p2", 1), ("p3", 0)] + [(f"n{i}", 0) for i in range(6)])
    score = score_speaker(preds, labels)
    assert score.miss_rate == 0.25
    assert score.far == 0.0
    assert score.score == 0.25
    assert (score.n_pos, score.n_neg) == (4, 6)


def test_score_speaker_perfect_and_worst():
    labels = {"p": 1, "n": 0}
    assert score_speaker(records([("p", 1), ("n", 0)]), labels).score == 0.0
    assert score_speaker(records([("p", 0), ("n", 1)]), labels).score == 10.0


def test_score_speaker_published_operating_point():
    labels = {f"p{i}": 1 for i in range(1000)}
    labels.update({f"n{i}": 0 for i in range(1000)})
    preds = records(
        [(f"p{i}", 0 if i < 481 else 1) for i in range(1000)]
        + [(f"n{i}", 1 if i < 135 else 0) for i in range(1000)]
    )
    score = score_speaker(preds, labels)
    assert score.miss_rate == pytest.approx(0.481)
    assert score.far == pytest.approx(0.135)
    assert score.score == pytest.approx(1.696, abs=1e-9)


def test_score_speaker_synthesizes_missing_as_rejections():
    labels = {"p0": 1, "p1": 1, "n0": 0}
    score = score_speaker(records([("p0", 1)]), labels)
    assert score.miss_rate == 0.5
    assert score.far == 0.0


def test_score_speaker_rejects_unknown_and_duplicate():
    labels = {"a": 1}
    with pytest.raises(UnknownUttId):
        score_speaker(records([("ghost", 1)]), labels)
    with pytest.raises(DuplicateUtt):
        score_speaker(records([("a", 1), ("a", 1)]), labels)


def test_score_speaker_degenerate_classes_warn():
    with pytest.warns(UserWarning):
        score = score_speaker(records([("a", 1)]), {"a": 1})
    assert score.score == 0.0
    with pytest.warns(UserWarning):
        score = score_speaker(records([("a", 0)]), {"a": 0})
    assert score.score == 0.0


def test_custom_alpha_weighting():
    labels = {"p": 1, "n": 0}
    score = score_speaker(records([("p", 1), ("n", 1)]), labels, alpha=3.0)
    assert score.score == 3.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_score_bounds_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    labels = {f"u{i}": int(rng.integers(0, 2)) for i in range(n)}
    preds = records([(f"u{i}", int(rng.integers(0, 2))) for i in range(n)])
    import warnings as w

    with w.catch_warnings():
        w.simplefilter("ignore")
        score = score_speaker(preds, labels)
    assert 0.0 <= score.miss_rate <= 1.0
    assert 0.0 <= score.far <= 1.0
    assert 0.0 <= score.score <= 10.0


def test_prediction_record_validation():
    with pytest.raises(FormatError):
        PredictionRecord(utt_id="x", predicted=2)
    with pytest.raises(FormatError):
        PredictionRecord(utt_id="x", predicted=1, missing=True)


def test_compute_rtf():
    assert compute_rtf(30.0, 300.0) == pytest.approx(0.1)
    with pytest.raises(ZeroDuration):
        compute_rtf(1.0, 0.0)


def test_labels_roundtrip(tmp_path):
    labels = {"b": 0, "a": 1, "z_9": 0}
    path = tmp_path / "labels.txt"
    write_labels(path, labels)
    text = path.read_text()
    assert text == "a 1\nb 0\nz_9 0\n"
    assert read_labels(path) == labels


@settings(max_examples=25, deadline=None)
@given(
    st.dictionaries(
        st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_.-", min_size=1, max_size=12),
        st.integers(0, 1),
        min_size=1,
        max_size=30,
    )
)
def test_labels_roundtrip_random(tmp_path_factory, labels):
    path = tmp_path_factory.mktemp("rt") / "labels.txt"
    write_labels(path, labels)
    assert read_labels(path) == labels


def test_label_parse_errors(tmp_path):
    path = tmp_path / "labels.txt"
    path.write_text("ok 1\nbad 2\n")
    with pytest.raises(ParseError, match=r":2: "):
        read_labels(path)
    path.write_text("double  1\n")
    with pytest.raises(ParseError):
        read_labels(path)
    path.write_text("lonely\n")
    with pytest.raises(ParseError):
        read_labels(path)
    with pytest.raises(IoError):
        read_labels(tmp_path / "absent.txt")


def test_predictions_roundtrip(tmp_path):
    path = tmp_path / "pred.txt"
    original = records([("u1", 1), ("u2", 0), ("u3", 1)])
    write_predictions(path, original)
    assert read_predictions(path) == original


def test_predictions_reject_duplicates(tmp_path):
    path = tmp_path / "pred.txt"
    path.write_text("u1 1\nu1 0\n")
    with pytest.raises(DuplicateUtt):
        read_predictions(path)


def test_partial_predictions_are_lenient(tmp_path):
    path = tmp_path / "pred.txt"
    path.write_text("u1 1\nu2 0\nu2 1\nbroken line here\nu3")
    partial = read_predictions_partial(path)
    assert [(r.utt_id, r.predicted) for r in partial] == [("u1", 1), ("u2", 0)]
    assert read_predictions_partial(tmp_path / "absent.txt") == []


def test_load_manifest_happy_path(mini_task_dir):
    manifest = load_manifest(mini_task_dir)
    assert [t.speaker_id for t in manifest.speakers] == ["s1", "s2", "s3"]
    task = manifest.speakers[0]
    assert task.enroll_dir.is_dir()
    assert len(read_labels(task.labels_path)) == 8


def test_load_manifest_layout_errors(tmp_path):
    with pytest.raises(LayoutError):
        load_manifest(tmp_path / "nothing")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(LayoutError):
        load_manifest(empty)

    bad = tmp_path / "bad"
    build_flat_task(bad, speakers=("a",))
    (bad / "a" / "labels.txt").unlink()
    with pytest.raises(LayoutError, match="labels"):
        load_manifest(bad)

    extra = tmp_path / "extra"
    build_flat_task(extra, speakers=("a",))
    write_wav(tone_word((440.0,), seed=0, duration=0.3), extra / "a" / "test" / "orphan.wav")
    with pytest.raises(LayoutError):
        load_manifest(extra)

    ghost = tmp_path / "ghost"
    build_flat_task(ghost, speakers=("a",))
    (ghost / "a" / "test" / "t0.wav").unlink()
    with pytest.raises(LayoutError):
        load_manifest(ghost)


def test_budget_validation():
    with pytest.raises(FormatError):
        Budget(init_seconds=0.0)
    with pytest.raises(FormatError):
        Budget(predict_rtf_limit=-1.0)
    with pytest.raises(FormatError):
        Budget(space_bytes=0)


def test_run_task_rejects_unknown_system(mini_task_dir):
    manifest = load_manifest(mini_task_dir)
    with pytest.raises(FormatError):
        run_task(manifest, system="builtin")


def test_builtin_enroll_overrun_voids_speaker(tmp_path):
    manifest = load_manifest(build_flat_task(tmp_path / "task", speakers=("a",), negatives=1))
    with pytest.warns(UserWarning, match="voided"):
        report = run_task(manifest, DetectorConfig(), Budget(enroll_seconds_per_speaker=1e-9))
    assert report.per_speaker[0].miss_rate == 1.0
    assert report.per_speaker[0].far == 0.0
    assert report.rtf == 0.0


def test_builtin_predict_deadline_marks_rest_missing(tmp_path):
    manifest = load_manifest(build_flat_task(tmp_path / "task", speakers=("a",), negatives=1))
    with pytest.warns(UserWarning, match="budget exhausted"):
        report = run_task(manifest, DetectorConfig(), Budget(predict_rtf_limit=1e-9))
    assert report.per_speaker[0].miss_rate == 1.0


def test_external_system_requires_executables(tmp_path):
    exec_dir = tmp_path / "system"
    exec_dir.mkdir()
    with pytest.raises(LayoutError):
        ExternalSystem(exec_dir).executable("initialize")
    script = exec_dir / "initialize.sh"
    script.write_text(INIT_OK)
    script.chmod(0o755)
    assert ExternalSystem(exec_dir).executable("initialize") == script


def test_external_initialize_failure_is_fatal(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",))
    system = make_system(tmp_path, initialize="#!/bin/sh\nexit 3\n")
    with pytest.raises(SystemCrashed):
        run_task(load_manifest(task), system, workdir=tmp_path / "work")


def test_external_perfect_system_scores_zero(tmp_path):
    task = build_flat_task(tmp_path / "task", negatives=1)
    system = make_system(tmp_path)
    report = run_task(load_manifest(task), system, workdir=tmp_path / "work")
    assert report.average_score == 0.0
    assert report.rtf > 0.0
    assert (tmp_path / "work" / "logs" / "initialize.log").exists()


def test_external_enroll_timeout_voids_only_that_speaker(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a", "b"), negatives=1)
    enroll = '#!/bin/sh\nif [ "$2" = "a" ]; then sleep 5; fi\nexit 0\n'
    system = make_system(tmp_path, enroll=enroll)
    started = time.monotonic()
    with pytest.warns(UserWarning, match="enroll"):
        report = run_task(
            load_manifest(task),
            system,
            Budget(enroll_seconds_per_speaker=1.0),
            workdir=tmp_path / "work",
        )
    elapsed = time.monotonic() - started
    assert elapsed < 4.0  # the sleeper was killed, not waited out
    by_id = {s.speaker_id: s for s in report.per_speaker}
    assert by_id["a"].miss_rate == 1.0
    assert by_id["a"].far == 0.0
    assert by_id["b"].score == 0.0
    # every labeled utterance is accounted for exactly once
    for task_entry in load_manifest(task).speakers:
        score = by_id[task_entry.speaker_id]
        assert score.n_pos + score.n_neg == len(read_labels(task_entry.labels_path))


def test_external_predict_overrun_salvages_partial_output(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",), n_test=6, duration=0.3)
    system = make_system(tmp_path, predict=PREDICT_SLOW)
    with pytest.warns(UserWarning):
        report = run_task(
            load_manifest(task),
            system,
            Budget(predict_rtf_limit=1.0),
            workdir=tmp_path / "work",
        )
    # 1.8 s budget, one line per 0.5 s: some but not all predictions land.
    assert 0.0 < report.per_speaker[0].miss_rate < 1.0


def test_external_garbage_predictions_mark_all_missing(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",), negatives=1)
    predict = '#!/bin/sh\necho "total nonsense here" > "$4"\nexit 0\n'
    system = make_system(tmp_path, predict=predict)
    with pytest.warns(UserWarning, match="bad predictions"):
        report = run_task(load_manifest(task), system, workdir=tmp_path / "work")
    assert report.per_speaker[0].miss_rate == 1.0


def test_external_unknown_utterances_dropped(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",), n_test=2, negatives=1)
    predict = (
        "#!/bin/sh\n"
        'printf "t0 0\\nt1 1\\nstranger 1\\n" > "$4"\n'
        "exit 0\n"
    )
    system = make_system(tmp_path, predict=predict)
    with pytest.warns(UserWarning, match="unknown"):
        report = run_task(load_manifest(task), system, workdir=tmp_path / "work")
    assert report.average_score == 0.0


def test_space_budget_voids_remaining_phases(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",), negatives=1)
    init = '#!/bin/sh\nhead -c 4096 /dev/zero > "$1/blob.bin"\nexit 0\n'
    system = make_system(tmp_path, initialize=init)
    with pytest.warns(UserWarning, match="space"):
        report = run_task(
            load_manifest(task),
            system,
            Budget(space_bytes=100),
            workdir=tmp_path / "work",
        )
    assert report.per_speaker[0].miss_rate == 1.0
    assert report.timings["predict_total"] == 0.0
    assert report.rtf == 0.0


def test_rtf_ignores_enrollment_time(tmp_path):
    task = build_flat_task(tmp_path / "task", speakers=("a",), n_test=4, duration=0.5, negatives=1)
    enroll = "#!/bin/sh\nsleep 0.8\nexit 0\n"
    system = make_system(tmp_path, enroll=enroll)
    report = run_task(load_manifest(task), system, workdir=tmp_path / "work")
    assert report.timings["enroll_total"] >= 0.8
    assert report.rtf < 0.1


def test_report_formats(tmp_path, mini_task_dir):
    manifest = load_manifest(mini_task_dir)
    report = run_task(manifest, DetectorConfig(), Budget())
    table = format_report(report)
    assert "average score" in table
    assert "s2" in table

    lines = report_lines(report)
    assert len(lines) == 4
    assert lines[0].startswith("speaker=s1 ")
    tail = lines[-1]
    assert "average_score=" in tail and "rtf=" in tail and "n_speakers=3" in tail

    out = tmp_path / "report.txt"
    write_report(report, out)
    assert out.read_text().splitlines() == lines
