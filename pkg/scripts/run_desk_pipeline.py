#!/usr/bin/env python3
"""Desk-scale end-to-end run: synthesize a trilingual corpus, balance and
split it, mix the languages, fine-tune the toy backend, summarize the test
split, and print the four-metric evaluation row.

This is the laptop-sized rehearsal of the full staged pipeline; swap
--backend full (with the transformers extra installed) and real corpus
files for a paper-scale run.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from pathlib import Path

from radsum.corpus import (
    Split,
    SplitSpec,
    balance_corpus,
    load_corpus,
    mix_multilingual,
    save_corpus,
    split_corpus,
)
from radsum.pipeline import load_pipeline_config, run_pipeline
from radsum.rouge import evaluate_model
from radsum.summarize import summarize_corpus
from radsum.trainers import get_backend

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_synthetic_corpus import generate_corpora  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workspace", required=True, help="scratch directory")
    parser.add_argument("--per-language", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--max-new-tokens", type=int, default=8)
    parser.add_argument("--cap", type=float, default=0.2,
                        help="per-impression frequency cap for balancing")
    parser.add_argument("--backend", default="toy", choices=["null", "toy", "full"])
    args = parser.parse_args()

    workspace = Path(args.workspace)
    started = time.monotonic()

    print("== synthesize + parse ==")
    corpus_paths = generate_corpora(workspace / "synthetic", args.per_language,
                                    args.seed, distinct_impressions=8)

    print("== balance + split + mix ==")
    spec = SplitSpec(ratios=(0.64, 0.16, 0.20), seed=args.seed)
    prepared = []
    for language, path in corpus_paths.items():
        balanced = balance_corpus(load_corpus(path), args.cap, seed=args.seed)
        prepared.append(split_corpus(balanced, spec))
        print(f"{language.value}: balanced to {balanced.size} reports")
    mixed = mix_multilingual(prepared, None, spec, seed=args.seed)
    per_language = Counter(r.language.value for r in mixed.reports)
    print(f"mixed: {dict(per_language)} -> {mixed.size} reports")
    mixed_path = workspace / "data" / "mix.jsonl"
    save_corpus(mixed, mixed_path)

    print("== train ==")
    config_path = workspace / "desk_config.json"
    config_path.write_text(json.dumps({
        "external_checkpoints": ["ext"],
        "datasets": {"mix": "data/mix.jsonl"},
        "stages": [{
            "id": "desk", "base": "ext", "dataset": "mix", "task": "summarize",
            "hyperparams": {"optimizer": "adamw", "lr_max": 2e-5,
                            "lr_schedule": "linear_decay_to_zero",
                            "epochs": args.epochs, "batch_size": args.batch_size,
                            "max_new_tokens": args.max_new_tokens},
        }],
    }, indent=2), encoding="utf-8")
    report = run_pipeline(load_pipeline_config(config_path),
                          get_backend(args.backend), workspace, seed=args.seed)
    for record in report.stage_records():
        print(f"stage {record['id']}: epochs_completed={record['epochs_completed']} "
              f"cached={record['cached']}")

    if args.backend == "null":
        print("null backend records invocations only; skipping generation")
        return

    print("== summarize test split ==")
    predictions_path = workspace / "predictions" / "desk" / "mix.jsonl"
    written, errors = summarize_corpus(mixed_path, "desk", predictions_path,
                                       workspace, max_new_tokens=args.max_new_tokens,
                                       split=Split.TEST)
    for report_id, message in errors:
        print(f"  skipped {report_id}: {message}", file=sys.stderr)
    print(f"wrote {written} predictions -> {predictions_path}")

    print("== evaluate ==")
    eval_report = evaluate_model(predictions_path, checkpoint="desk", corpus="mix")
    print(eval_report.to_row())
    print(f"done in {time.monotonic() - started:.1f}s")


if __name__ == "__main__":
    main()
