"""Command-line entry point.

Subcommands cover the whole pipeline: feature extraction, enrollment,
prediction, task evaluation, test-set augmentation, and scoring.  Flag
values can come from a line-oriented key=value config file (--config);
explicit flags beat the config file, which beats built-in defaults.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .audio import load_wav
from .augment import expand_testset, expansion_preset, sv_training_preset
from .detector import DetectorConfig, decide
from .dtw import DtwConfig
from .enrollment import build_profile, load_profile, save_profile
from .errors import EmptyInput, IoError, KwsError, ParseError
from .features import FeatureConfig, extract_mfcc, read_features, write_features
from .harness import (
    Budget,
    ExternalSystem,
    PredictionRecord,
    format_report,
    load_manifest,
    read_labels,
    read_predictions,
    run_task,
    score_speaker,
    write_predictions,
    write_report,
)

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _atomic(path: str | Path, write) -> None:
    """Write via a sibling temp file and rename, so failures leave no
    partial output and reruns replace atomically."""
    path = Path(path)
    tmp = path.with_name(f"{path.stem}.tmp{path.suffix}")
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _add_feature_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--frame-length", type=float, default=0.025,
                    help="analysis window in seconds (default 0.025)")
    sp.add_argument("--frame-shift", type=float, default=0.01,
                    help="hop between frames in seconds (default 0.01)")
    sp.add_argument("--num-mel-filters", type=int, default=40)
    sp.add_argument("--num-cepstra", type=int, default=40)
    sp.add_argument("--pre-emphasis", type=float, default=0.97)
    sp.add_argument("--no-cmvn", action="store_true",
                    help="skip per-utterance mean/variance normalisation")


def _feature_config(args: argparse.Namespace) -> FeatureConfig:
    return FeatureConfig(
        frame_length_seconds=args.frame_length,
        frame_shift_seconds=args.frame_shift,
        num_mel_filters=args.num_mel_filters,
        num_cepstra=args.num_cepstra,
        pre_emphasis=args.pre_emphasis,
        apply_cmvn=not args.no_cmvn,
    )


def _add_detector_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--qbe-threshold", type=float, default=0.80,
                    help="wake threshold when the profile has none (default 0.80)")
    sp.add_argument("--sv-threshold", type=float, default=0.83,
                    help="speaker-check threshold fallback (default 0.83)")
    sp.add_argument("--no-sv", action="store_true", help="disable the speaker check")
    sp.add_argument("--match-mode", choices=("sln_dtw", "segment_scan"),
                    default="sln_dtw")
    sp.add_argument("--distance", choices=("cosine", "euclidean"), default="cosine")
    sp.add_argument("--band-radius", type=int, default=None,
                    help="Sakoe-Chiba band radius (default: unbanded)")
    _add_feature_flags(sp)


def _detector_config(args: argparse.Namespace) -> DetectorConfig:
    return DetectorConfig(
        qbe_threshold_gamma1=args.qbe_threshold,
        sv_threshold_gamma2=args.sv_threshold,
        use_sv_stage=not args.no_sv,
        match_mode=args.match_mode,
        dtw=DtwConfig(distance=args.distance, band_radius=args.band_radius),
        feature=_feature_config(args),
    )


def cmd_features(args: argparse.Namespace) -> int:
    config = _feature_config(args)
    out = Path(args.out)
    if args.wav:
        pairs = [(Path(args.wav), out)]
    else:
        src = Path(args.dir)
        if not src.is_dir():
            raise IoError(f"input directory {src} does not exist")
        wavs = sorted(src.glob("*.wav"))
        if not wavs:
            raise EmptyInput(f"no WAV files under {src}")
        out.mkdir(parents=True, exist_ok=True)
        pairs = [(p, out / (p.stem + ".kwsf")) for p in wavs]

    def one(pair: tuple[Path, Path]) -> str:
        src_path, dst = pair
        features = extract_mfcc(load_wav(src_path), config)
        _atomic(dst, lambda tmp: write_features(features, tmp))
        return f"{dst} {features.num_frames}x{features.dim}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(one, pairs))
    else:
        lines = [one(pair) for pair in pairs]
    for line in lines:
        print(line)
    return 0


def cmd_enroll(args: argparse.Namespace) -> int:
    enroll_dir = Path(args.enroll_dir)
    if not enroll_dir.is_dir():
        raise IoError(f"enrollment directory {enroll_dir} does not exist")
    wavs = sorted(enroll_dir.glob("*.wav"))
    feature_files = sorted(enroll_dir.glob("*.kwsf"))
    if wavs:
        items = [load_wav(p) for p in wavs]
    elif feature_files:
        items = [read_features(p) for p in feature_files]
    else:
        raise EmptyInput(f"no WAV or KWSF files under {enroll_dir}")
    config = _detector_config(args)
    # created_at defaults to 0 so reruns produce byte-identical profiles.
    created_at = time.time() if args.wall_clock_timestamp else 0.0
    profile = build_profile(
        items,
        config,
        speaker_id=args.speaker_id,
        created_at=created_at,
        calibrate=not args.no_calibrate,
    )
    _atomic(args.profile_out, lambda tmp: save_profile(profile, tmp))

    def show(value: float | None) -> str:
        return "default" if value is None else f"{value:.4f}"

    print(
        f"enrolled {len(items)} items as {profile.speaker_id!r}:"
        f" qbe_threshold={show(profile.qbe_threshold)}"
        f" sv_threshold={show(profile.sv_threshold)}"
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    profile = load_profile(args.profile)
    config = _detector_config(args)
    if args.wav:
        paths = [Path(args.wav)]
    else:
        list_path = Path(args.list)
        try:
            text = list_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read {list_path}: {exc}") from exc
        paths = [Path(line) for line in text.split("\n") if line.strip()]
        if not paths:
            raise EmptyInput(f"{list_path} lists no files")

    records = []
    for path in paths:
        try:
            if path.suffix.lower() in (".kwsf", ".csv"):
                item = read_features(path)
            else:
                item = load_wav(path)
            decision = decide(profile, item, config)
            wake = int(decision.wake)
            if args.verbose:
                sv = (
                    "-"
                    if decision.sv_similarity is None
                    else f"{decision.sv_similarity:.4f}"
                )
                print(f"{path.stem} qbe={decision.qbe.similarity:.4f} sv={sv} wake={wake}")
        except KwsError as exc:
            print(f"warning: {path}: {exc}; predicting 0", file=sys.stderr)
            wake = 0
        records.append(PredictionRecord(utt_id=path.stem, predicted=wake))
    _atomic(args.out, lambda tmp: write_predictions(tmp, records))
    print(f"wrote {len(records)} predictions to {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.task_dir)
    budget = Budget(
        init_seconds=args.init_budget,
        enroll_seconds_per_speaker=args.enroll_budget,
        predict_rtf_limit=args.predict_rtf,
        space_bytes=args.space_budget,
    )
    if args.system == "builtin":
        system: ExternalSystem | DetectorConfig = _detector_config(args)
    else:
        system = ExternalSystem(Path(args.system))
    report = run_task(manifest, system, budget, workdir=args.workdir)
    print(format_report(report))
    if args.report:
        _atomic(args.report, lambda tmp: write_report(report, tmp))
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    presets = {"test_expansion": expansion_preset, "sv_training": sv_training_preset}
    preset = presets[args.preset]()
    out = expand_testset(
        args.task_dir,
        args.out_dir,
        preset=preset,
        noise_dir=args.noise_dir,
        rir_dir=args.rir_dir,
        seed=args.seed,
    )
    total = sum(1 for _ in Path(out).glob("*/test/*.wav"))
    print(f"expanded task written to {out} ({total} test files)")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    records = read_predictions(args.predictions)
    labels = read_labels(args.labels)
    result = score_speaker(records, labels, alpha=args.alpha)
    print(f"mr={result.miss_rate:.6f} far={result.far:.6f} score={result.score:.6f}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="kwspot",
        description="Query-by-example wake-word spotting and evaluation",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    index: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, func, help_text: str) -> argparse.ArgumentParser:
        sp = subparsers.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None,
                        help="key=value file overriding flag defaults")
        sp.set_defaults(func=func)
        index[name] = sp
        return sp

    sp = sub("features", cmd_features, "extract MFCC features from WAV files")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--wav", help="one input WAV file")
    group.add_argument("--dir", help="directory of WAV files")
    sp.add_argument("--out", required=True,
                    help="output file (--wav) or directory (--dir); .csv selects text")
    sp.add_argument("--jobs", type=int, default=1, help="parallel workers for --dir")
    _add_feature_flags(sp)

    sp = sub("enroll", cmd_enroll, "build a speaker profile from recordings")
    sp.add_argument("--enroll-dir", required=True,
                    help="directory of enrollment WAV (or KWSF) files")
    sp.add_argument("--profile-out", required=True)
    sp.add_argument("--speaker-id", default="speaker")
    sp.add_argument("--no-calibrate", action="store_true",
                    help="keep the configured wake threshold instead of calibrating")
    sp.add_argument("--wall-clock-timestamp", action="store_true",
                    help="stamp the profile with the current time (breaks rerun determinism)")
    _add_detector_flags(sp)

    sp = sub("predict", cmd_predict, "score test audio against a profile")
    sp.add_argument("--profile", required=True)
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--wav", help="one test file (.wav, .kwsf, or .csv)")
    group.add_argument("--list", help="text file listing one test path per line")
    sp.add_argument("--out", required=True, help="prediction file to write")
    sp.add_argument("--verbose", action="store_true",
                    help="print per-utterance similarities")
    _add_detector_flags(sp)

    sp = sub("evaluate", cmd_evaluate, "run and score a full task directory")
    sp.add_argument("--task-dir", required=True)
    sp.add_argument("--system", default="builtin",
                    help="'builtin' or a directory with initialize/enroll/predict executables")
    sp.add_argument("--init-budget", type=float, default=1800.0)
    sp.add_argument("--enroll-budget", type=float, default=300.0)
    sp.add_argument("--predict-rtf", type=float, default=1.0)
    sp.add_argument("--space-budget", type=int, default=None,
                    help="cap on the work directory size in bytes")
    sp.add_argument("--report", default=None, help="write key=value report lines here")
    sp.add_argument("--workdir", default=None,
                    help="scratch directory handed to an external system")
    _add_detector_flags(sp)

    sp = sub("augment", cmd_augment, "expand a task's test sets with augmented copies")
    sp.add_argument("--task-dir", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--preset", choices=("test_expansion", "sv_training"),
                    default="test_expansion")
    sp.add_argument("--noise-dir", default=None)
    sp.add_argument("--rir-dir", default=None)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub("score", cmd_score, "score a prediction file against labels")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--alpha", type=float, default=9.0,
                    help="false-alarm penalty (default 9)")

    return parser, index


def _parse_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise IoError(f"config file {path} not found")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def _coerce(action: argparse.Action, key: str, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        word = raw.lower()
        if word in _TRUE_WORDS:
            return isinstance(action, argparse._StoreTrueAction)
        if word in _FALSE_WORDS:
            return not isinstance(action, argparse._StoreTrueAction)
        raise ParseError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if action.choices is not None and raw not in action.choices:
        raise ParseError(f"config key {key!r}: must be one of {sorted(action.choices)}")
    if action.type is not None:
        try:
            return action.type(raw)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"config key {key!r}: bad value {raw!r}: {exc}") from exc
    return raw


def _apply_config(subparser: argparse.ArgumentParser, path: Path) -> None:
    actions = {
        action.dest: action
        for action in subparser._actions
        if action.dest not in ("help", "config", "func")
    }
    defaults = {}
    for key, raw in _parse_config_file(path).items():
        if key not in actions:
            raise ParseError(f"unknown config key {key!r}")
        defaults[key] = _coerce(actions[key], key, raw)
    subparser.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, index = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(index[args.subcommand], Path(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except KwsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
