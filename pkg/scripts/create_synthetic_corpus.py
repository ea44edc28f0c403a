#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path


def main() -> int:
    repo_root = Path(__file__).resolve().parents[1]
    sys.path.insert(0, str(repo_root / "src"))

    from tubespoof.asi import save_model
    from tubespoof.audio import write_wav
    from tubespoof.experiment import save_corpus
    from tubespoof.synthetic import build_planted_instance, make_corpus

    parser = argparse.ArgumentParser(description="Write a synthetic speaker corpus for local runs.")
    parser.add_argument(
        "--path",
        type=Path,
        default=repo_root / ".tubespoof_dev",
        help="Directory to populate (default: repo/.tubespoof_dev).",
    )
    parser.add_argument("--speakers", type=int, default=5)
    parser.add_argument("--utterances", type=int, default=10)
    parser.add_argument("--sample-rate", type=int, choices=(8000, 16000), default=16000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--planted",
        action="store_true",
        help="Write a planted attack instance (model, attacker WAVs, run config) instead.",
    )
    parser.add_argument("--reset", action="store_true", help="Delete the directory first.")
    args = parser.parse_args()

    if args.reset and args.path.exists():
        shutil.rmtree(args.path)

    if not args.planted:
        corpus = make_corpus(
            args.speakers, args.utterances, sample_rate=args.sample_rate, seed=args.seed
        )
        save_corpus(args.path / "corpus", corpus)
        print(args.path / "corpus")
        return 0

    instance = build_planted_instance(args.seed)
    save_corpus(args.path / "corpus", instance.corpus)
    save_model(args.path / "model.json", instance.model)
    for index, buf in enumerate(instance.attack_utterances):
        write_wav(args.path / "attacker" / f"{index:03d}.wav", buf)
    config = {
        "sample_rate": instance.model.mfcc.sample_rate,
        "corpus_dir": "corpus",
        "oracle": {"model": "model.json"},
        "utterances_per_attack": len(instance.attack_utterances),
        "output_dir": "results",
    }
    (args.path / "run.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    print(args.path / "run.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
