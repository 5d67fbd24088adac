#!/usr/bin/env python3
"""Compare a fine-tuned checkpoint's summaries against a chat-LLM baseline.

Reads a predictions file ({id, generated, reference} lines) plus the corpus
it came from (for findings and language), asks the baseline provider to
summarize the same findings, and writes side-by-side comparison rows. Both
systems are then scored against the references with mean ROUGE F1.

The HTTP provider reads its API key from the environment variable named by
--api-key-env; no secret ever appears on the command line or in files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from radsum.corpus import load_corpus
from radsum.rouge import evaluate_pairs
from radsum.summarize import (
    BaselineClient,
    BaselineConfig,
    ProviderUnavailable,
    comparison_row,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pred", required=True, help="model predictions JSONL")
    parser.add_argument("--corpus", required=True, help="corpus the predictions cover")
    parser.add_argument("--out", required=True, help="comparison rows JSONL")
    parser.add_argument("--provider", default="echo", choices=["echo", "http"])
    parser.add_argument("--endpoint", default="", help="chat completions URL")
    parser.add_argument("--model", default="", help="provider model name")
    parser.add_argument("--api-key-env", default=None,
                        help="environment variable holding the API key")
    parser.add_argument("--max-requests", type=int, default=None,
                        help="hard cap on baseline calls")
    parser.add_argument("--max-total-tokens", type=int, default=None,
                        help="hard cap on prompt+completion tokens")
    args = parser.parse_args()

    reports = {r.id: r for r in load_corpus(args.corpus).reports}
    client = BaselineClient(BaselineConfig(
        provider=args.provider, endpoint=args.endpoint, model=args.model,
        api_key_env=args.api_key_env, max_requests=args.max_requests,
        max_total_tokens=args.max_total_tokens,
    ))

    model_pairs: list[tuple[str, str]] = []
    baseline_pairs: list[tuple[str, str]] = []
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    skipped = 0
    with open(args.pred, encoding="utf-8") as pred_fh, \
            out_path.open("w", encoding="utf-8") as out_fh:
        for line in pred_fh:
            if not line.strip():
                continue
            record = json.loads(line)
            report = reports.get(record["id"])
            if report is None:
                print(f"  no corpus report for {record['id']}; skipped",
                      file=sys.stderr)
                skipped += 1
                continue
            try:
                baseline_summary = client.summarize(report.findings, report.language)
            except ProviderUnavailable as exc:
                print(f"baseline stopped: {type(exc).__name__}: {exc}", file=sys.stderr)
                break
            row = comparison_row(record["id"], record["generated"], baseline_summary)
            out_fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            model_pairs.append((record["generated"], record["reference"]))
            baseline_pairs.append((baseline_summary, record["reference"]))

    if not model_pairs:
        print("nothing compared", file=sys.stderr)
        sys.exit(1)

    print(f"compared {len(model_pairs)} items ({skipped} skipped) -> {out_path}")
    print(evaluate_pairs(model_pairs, checkpoint="model").to_row())
    print(evaluate_pairs(baseline_pairs, checkpoint="baseline").to_row())
    total_tokens = sum(r.prompt_tokens + r.completion_tokens for r in client.records)
    mean_latency = sum(r.latency_s for r in client.records) / len(client.records)
    print(f"baseline usage: {len(client.records)} calls, {total_tokens} tokens, "
          f"{mean_latency * 1000:.1f} ms mean latency")


if __name__ == "__main__":
    main()
