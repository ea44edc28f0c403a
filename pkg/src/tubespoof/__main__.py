from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

from .acoustics import (
    DEFAULT_Q_DECAY,
    DEFAULT_TEMPERATURE_K,
    Environment,
    TubeSpec,
    TwoTubeSpec,
    find_two_tube_roots,
    fundamental_frequency,
    quality_factor,
    resonance_profile_single,
    resonances_two_tube,
)
from .adapter import AdapterClient
from .asi import MfccConfig, SpeakerOracle, enroll, load_model, save_model
from .attack import attack_target, reachable_set, render_adversarial, results_frame
from .attack_stats import (
    CONSISTENCY_RUNS,
    CONSISTENCY_SNR_DB,
    confidence_gap_stats,
    consistency_rate,
    embedding_similarity_stats,
    match_rate,
    noisy_prediction_runs,
    resonance_effectiveness,
)
from .audio import read_wav, resample, write_wav
from .experiment import (
    ExperimentDir,
    check_output,
    dump_json,
    load_corpus,
    load_utterances,
    wav_files,
)
from .filterbank import apply, bank_from_profile
from .pitch import pitch_shift_study
from .run_log import log_event
from .settings import RunConfig, load_run_config
from .validation import DEFAULT_TOLERANCE, chirp_validation

DOMAIN_ERRORS = (ValueError, KeyError, FileNotFoundError, RuntimeError)


def _add_environment(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--temperature",
        type=float,
        default=None,
        help=f"Air temperature in kelvin (default {DEFAULT_TEMPERATURE_K}).",
    )


def _add_run_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="Run config JSON.")
    parser.add_argument("--seed", type=int, default=None, help="Override the DE seed.")
    parser.add_argument("--jobs", type=int, default=None, help="Cap on worker threads.")
    parser.add_argument("--out", type=Path, default=None, help="Override the output directory.")
    _add_environment(parser)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubespoof",
        description="Simulate acoustic tubes and search for tubes that fool a speaker identifier.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    info = subparsers.add_parser("tube-info", help="Resonances of a single open tube.")
    info.add_argument("--length", type=float, required=True, help="Tube length in metres.")
    info.add_argument("--diameter", type=float, required=True, help="Inner diameter in metres.")
    info.add_argument("--sample-rate", type=int, default=16000)
    info.add_argument("--decay", type=float, default=DEFAULT_Q_DECAY, help="Q decay exponent.")
    info.add_argument("--json", action="store_true", help="Print JSON instead of a table.")
    _add_environment(info)

    two = subparsers.add_parser("two-tube", help="Resonances of two concatenated tubes.")
    for name in ("l1", "d1", "l2", "d2"):
        two.add_argument(f"--{name}", type=float, required=True, help="Metres.")
    two.add_argument("--sample-rate", type=int, default=16000)
    two.add_argument("--json", action="store_true")
    _add_environment(two)

    filt = subparsers.add_parser("filter", help="Play a WAV file through a simulated tube.")
    filt.add_argument("--in", dest="input", type=Path, required=True)
    filt.add_argument("--out", type=Path, required=True)
    filt.add_argument("--length", type=float, required=True)
    filt.add_argument("--diameter", type=float, required=True)
    filt.add_argument("--decay", type=float, default=DEFAULT_Q_DECAY)
    filt.add_argument("--magnitude-only", action="store_true")
    _add_environment(filt)

    check = subparsers.add_parser("validate", help="Chirp self-test of a simulated tube.")
    check.add_argument("--length", type=float, required=True)
    check.add_argument("--diameter", type=float, required=True)
    check.add_argument("--model-temperature", type=float, default=None)
    check.add_argument("--sample-rate", type=int, default=8000)
    check.add_argument("--duration", type=float, default=3.0)
    check.add_argument("--f-start", type=float, default=100.0)
    check.add_argument("--f-end", type=float, default=3700.0)
    check.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    check.add_argument("--out", type=Path, default=None, help="Also write the report here.")
    _add_environment(check)

    enroll_cmd = subparsers.add_parser("enroll", help="Fit the surrogate speaker model.")
    enroll_cmd.add_argument("--corpus", type=Path, required=True, help="<speaker>/<utt>.wav tree.")
    enroll_cmd.add_argument("--out", type=Path, required=True, help="Model JSON path.")
    enroll_cmd.add_argument("--sample-rate", type=int, choices=(8000, 16000), default=16000)

    ident = subparsers.add_parser("identify", help="Score one WAV file.")
    source = ident.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=Path)
    source.add_argument("--adapter", help="Adapter command line.")
    ident.add_argument("--in", dest="input", type=Path, required=True)
    ident.add_argument("--sample-rate", type=int, default=16000, help="Rate sent to an adapter.")

    attack = subparsers.add_parser("attack", help="Search a tube that impersonates one target.")
    _add_run_overrides(attack)
    attack.add_argument("--attacker", type=Path, required=True, help="Directory of attacker WAVs.")
    attack.add_argument("--target", required=True)
    attack.add_argument("--search", choices=("de", "grid"), default="de", help="Search strategy.")
    attack.add_argument("--magnitude-only", action="store_true")
    attack.add_argument("--render", action="store_true", help="Write filtered attacker audio.")

    reach = subparsers.add_parser("reachable", help="Attack every enrolled speaker.")
    _add_run_overrides(reach)
    reach.add_argument("--attacker", type=Path, required=True)
    reach.add_argument("--budget", type=int, default=None, help="Fitness evaluations per target.")
    reach.add_argument("--exclude", action="append", default=[], help="Label to skip.")
    reach.add_argument("--search", choices=("de", "grid"), default="de", help="Search strategy.")
    reach.add_argument("--magnitude-only", action="store_true")

    study = subparsers.add_parser("study", help="Offline studies.")
    study_sub = study.add_subparsers(dest="study", required=True)
    shift = study_sub.add_parser("pitch-shift", help="Regress pitch shift on tube geometry.")
    _add_run_overrides(shift)

    stats = subparsers.add_parser("stats", help="Attack statistics.")
    stats_sub = stats.add_subparsers(dest="stats", required=True)

    gap = stats_sub.add_parser("confidence-gap")
    gap.add_argument("--model", type=Path, required=True)
    gap.add_argument("--clean", type=Path, required=True, help="Directory of clean WAVs.")
    gap.add_argument("--adversarial", type=Path, required=True, help="Directory of attack WAVs.")
    gap.add_argument("--out", type=Path, default=None)

    similarity = stats_sub.add_parser("similarity")
    similarity.add_argument("--model", type=Path, required=True)
    similarity.add_argument("--attack", type=Path, required=True, help="Directory of attack WAVs.")
    similarity.add_argument("--victim", required=True)
    similarity.add_argument("--nonvictim", action="append", default=None)
    similarity.add_argument("--out", type=Path, default=None)

    consistency = stats_sub.add_parser("consistency")
    inputs = consistency.add_mutually_exclusive_group(required=True)
    inputs.add_argument("--predictions", type=Path, help="JSON list of label lists.")
    inputs.add_argument("--audio", type=Path, help="Directory of WAVs to re-identify under noise.")
    consistency.add_argument("--model", type=Path, default=None)
    consistency.add_argument("--runs", type=int, default=CONSISTENCY_RUNS)
    consistency.add_argument("--snr", type=float, default=CONSISTENCY_SNR_DB)
    consistency.add_argument("--seed", type=int, default=0)
    consistency.add_argument("--out", type=Path, default=None)

    matched = stats_sub.add_parser("match-rate")
    for flag in ("--simulated", "--second"):
        matched.add_argument(flag, type=Path, required=True, help="JSON map utt -> label|null.")
    matched.add_argument("--out", type=Path, default=None)

    return parser


def _environment(args: argparse.Namespace) -> Environment:
    if args.temperature is None:
        return Environment(DEFAULT_TEMPERATURE_K)
    return Environment(temperature_k=args.temperature)


def _emit(payload: dict[str, Any], schema: str, out: Path | None = None) -> None:
    check_output(payload, schema)
    text = dump_json(payload)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    sys.stdout.write(text)


def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}") from exc


def _run_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config).with_overrides(
        seed=args.seed,
        temperature_k=args.temperature,
        jobs=args.jobs,
        output_dir=args.out,
    )


@contextmanager
def _open_oracle(config: RunConfig, log: Any = None) -> Iterator[tuple[SpeakerOracle, int]]:
    if config.oracle is None:
        raise ValueError("Run config has no oracle; set oracle.model or oracle.adapter.")
    if config.oracle.model is not None:
        model = load_model(config.oracle.model)
        yield model, model.mfcc.sample_rate
        return
    with AdapterClient(config.oracle.adapter, log=log) as client:
        yield client, config.sample_rate


def _cmd_tube_info(args: argparse.Namespace) -> int:
    env = _environment(args)
    tube = TubeSpec(args.length, args.diameter)
    nyquist = args.sample_rate / 2
    profile = resonance_profile_single(tube, env, nyquist, decay_exponent=args.decay)
    payload = {
        "tube": tube.to_dict(),
        "environment": env.to_dict(),
        "f0_hz": fundamental_frequency(tube, env),
        "q0": quality_factor(tube, env),
        "nyquist_hz": nyquist,
        "decay_exponent": args.decay,
        "harmonics": profile.to_dict()["harmonics"],
    }
    if args.json:
        _emit(payload, "tube_info")
        return 0
    print(f"f0: {payload['f0_hz']:.2f} Hz")
    print(f"Q0: {payload['q0']:.2f}")
    print(f"{'i':>3}  {'f_i (Hz)':>10}  {'Q_i':>8}")
    for index, (frequency, quality) in enumerate(profile.harmonics, start=1):
        print(f"{index:>3}  {frequency:>10.2f}  {quality:>8.2f}")
    return 0


def _cmd_two_tube(args: argparse.Namespace) -> int:
    env = _environment(args)
    spec = TwoTubeSpec(TubeSpec(args.l1, args.d1), TubeSpec(args.l2, args.d2))
    nyquist = args.sample_rate / 2
    profile = resonances_two_tube(spec, env, nyquist)
    payload = {
        "spec": spec.to_dict(),
        "environment": env.to_dict(),
        "nyquist_hz": nyquist,
        "roots_hz": find_two_tube_roots(spec, env, nyquist),
        "harmonics": profile.to_dict()["harmonics"],
        "warning": profile.warning,
    }
    if args.json:
        _emit(payload, "two_tube_info")
        return 0
    if profile.warning:
        print(f"no roots: {profile.warning}")
        return 0
    print(f"{'i':>3}  {'f_i (Hz)':>10}  {'Q_i':>8}")
    for index, (frequency, quality) in enumerate(profile.harmonics, start=1):
        print(f"{index:>3}  {frequency:>10.2f}  {quality:>8.2f}")
    return 0


def _cmd_filter(args: argparse.Namespace) -> int:
    env = _environment(args)
    tube = TubeSpec(args.length, args.diameter)
    buf = read_wav(args.input)
    profile = resonance_profile_single(tube, env, buf.sample_rate / 2, decay_exponent=args.decay)
    bank = bank_from_profile(profile, buf.sample_rate, magnitude_only=args.magnitude_only)
    write_wav(args.out, apply(bank, buf))
    print(f"Wrote {args.out} ({buf.sample_rate} Hz, {len(bank.bands)} bands)")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    env = _environment(args)
    model_env = Environment(args.model_temperature) if args.model_temperature is not None else env
    report = chirp_validation(
        TubeSpec(args.length, args.diameter),
        env,
        model_env=model_env,
        sample_rate=args.sample_rate,
        duration_s=args.duration,
        f_start_hz=args.f_start,
        f_end_hz=args.f_end,
        tolerance=args.tolerance,
    )
    _emit(report, "validation_report", args.out)
    return 0 if report["status"] == "PASS" else 1


def _cmd_enroll(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, args.sample_rate)
    model = enroll(corpus, MfccConfig(sample_rate=args.sample_rate))
    data = model.to_dict()
    check_output(data, "speaker_model")
    save_model(args.out, model)
    for warning in model.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"Enrolled {len(model.labels)} speakers into {args.out}")
    return 0


def _cmd_identify(args: argparse.Namespace) -> int:
    buf = read_wav(args.input)
    if args.model is not None:
        model = load_model(args.model)
        label, scores = model.identify(resample(buf, model.mfcc.sample_rate))
    else:
        with AdapterClient(args.adapter) as client:
            label, scores = client.identify(resample(buf, args.sample_rate))
    _emit({"label": label, "scores": scores.to_dict()}, "identify_result")
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    config = _run_config(args)
    experiment = ExperimentDir.create(config.output_dir)
    args.run_log = experiment.log
    with _open_oracle(config, experiment.log) as (oracle, rate):
        paths = wav_files(args.attacker)[: config.utterances_per_attack]
        utterances = load_utterances(args.attacker, rate)[: config.utterances_per_attack]
        result = attack_target(
            utterances,
            args.target,
            oracle,
            config.search,
            config.de,
            config.environment,
            search=args.search,
            magnitude_only=args.magnitude_only,
            jobs=config.jobs,
            log=experiment.log,
        )
    payload = result.to_dict()
    experiment.save_json("attack_result.json", payload, schema="attack_result")
    experiment.write_table("attack_result.csv", results_frame([result]))
    if args.render and result.tube is not None:
        rendered = render_adversarial(result, utterances, magnitude_only=args.magnitude_only)
        for path, buf in zip(paths, rendered):
            experiment.write_audio(f"{args.target}_{path.stem}.wav", buf)
    model_paths = [config.oracle.model] if config.oracle and config.oracle.model else []
    experiment.record_inputs([*paths, *model_paths], config.to_dict())
    sys.stdout.write(dump_json(payload))
    return 0


def _cmd_reachable(args: argparse.Namespace) -> int:
    config = _run_config(args)
    experiment = ExperimentDir.create(config.output_dir)
    args.run_log = experiment.log
    with _open_oracle(config, experiment.log) as (oracle, rate):
        utterances = load_utterances(args.attacker, rate)[: config.utterances_per_attack]
        summary = reachable_set(
            utterances,
            oracle,
            config.search,
            config.de,
            config.environment,
            per_target_budget=args.budget,
            exclude=args.exclude,
            search=args.search,
            magnitude_only=args.magnitude_only,
            jobs=config.jobs,
            log=experiment.log,
        )
    payload = summary.to_dict()
    payload["effectiveness"] = resonance_effectiveness(summary.results.values())
    experiment.save_json("reachable_summary.json", payload, schema="reachable_summary")
    experiment.write_table("reachable.csv", summary.to_frame())
    sys.stdout.write(
        dump_json(
            {
                "attempted": payload["attempted"],
                "reachable_count": payload["reachable_count"],
                "reachable": payload["reachable"],
            }
        )
    )
    return 0


def _cmd_study(args: argparse.Namespace) -> int:
    config = _run_config(args)
    if config.corpus_dir is None:
        raise ValueError("Pitch-shift study needs corpus_dir in the run config.")
    experiment = ExperimentDir.create(config.output_dir)
    args.run_log = experiment.log
    paths = sorted(config.corpus_dir.rglob("*.wav"))
    signals = [resample(read_wav(path), config.sample_rate) for path in paths]
    ids = [path.relative_to(config.corpus_dir).with_suffix("").as_posix() for path in paths]
    study = pitch_shift_study(
        signals,
        config.study_tubes,
        config.environment,
        signal_ids=ids,
        decay_exponent=config.search.q_decay_exponent,
        jobs=config.jobs,
        log=experiment.log,
    )
    payload = study.report.to_dict()
    experiment.save_json("regression_report.json", payload, schema="regression_report")
    experiment.write_table("pitch_shift.csv", study.to_frame())
    sys.stdout.write(dump_json(payload))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.stats == "confidence-gap":
        model = load_model(args.model)
        rate = model.mfcc.sample_rate
        summary = confidence_gap_stats(
            model, load_utterances(args.clean, rate), load_utterances(args.adversarial, rate)
        )
        _emit(summary.to_dict(), "confidence_gap", args.out)
    elif args.stats == "similarity":
        model = load_model(args.model)
        others = args.nonvictim or [label for label in model.labels if label != args.victim]
        summary = embedding_similarity_stats(
            model, load_utterances(args.attack, model.mfcc.sample_rate), args.victim, others
        )
        _emit(summary.to_dict(), "similarity", args.out)
    elif args.stats == "consistency":
        if args.predictions is not None:
            runs = _read_json(args.predictions)
            if not isinstance(runs, list) or not all(isinstance(run, list) for run in runs):
                raise ValueError("Predictions file must hold a list of label lists.")
            snr = None
        else:
            if args.model is None:
                raise ValueError("--audio needs --model to re-identify the utterances.")
            model = load_model(args.model)
            utterances = load_utterances(args.audio, model.mfcc.sample_rate)
            runs = noisy_prediction_runs(
                model, utterances, runs=args.runs, snr_db=args.snr, seed=args.seed
            )
            snr = args.snr
        payload = {
            "runs": len(runs),
            "utterances": len(runs[0]) if runs else 0,
            "consistency_percent": consistency_rate(runs),
            "snr_db": snr,
            "predictions": runs,
        }
        _emit(payload, "consistency", args.out)
    else:
        simulated = _read_json(args.simulated)
        second = _read_json(args.second)
        if not isinstance(simulated, dict) or not isinstance(second, dict):
            raise ValueError("Match-rate inputs must be JSON objects mapping utterance to label.")
        successes = sorted(key for key, label in simulated.items() if label is not None)
        payload = {
            "match_rate_percent": match_rate(simulated, second),
            "simulated_successes": len(successes),
            "matched": sum(second.get(key) == simulated[key] for key in successes),
        }
        _emit(payload, "match_rate", args.out)
    return 0


HANDLERS = {
    "tube-info": _cmd_tube_info,
    "two-tube": _cmd_two_tube,
    "filter": _cmd_filter,
    "validate": _cmd_validate,
    "enroll": _cmd_enroll,
    "identify": _cmd_identify,
    "attack": _cmd_attack,
    "reachable": _cmd_reachable,
    "study": _cmd_study,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return HANDLERS[args.command](args)
    except DOMAIN_ERRORS as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        log_event(
            getattr(args, "run_log", None),
            "command_error",
            {"command": args.command, "error": str(message)},
        )
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
