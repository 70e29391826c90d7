"""Command-line entry point: generate, validate, score, evaluate, stats.

Exit status is 0 on success, 1 when violations or failures were found and
2 for usage errors (bad flags, unreadable or invalid config).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .codec import read_corpus, write_corpus
from .errors import DecodeError, InvalidConfig, ToolDagError
from .harness import aggregate, evaluate_corpus, format_table, load_predictions, score_corpus
from .pipeline import Generator, corpus_stats, load_config
from .query import ChatClient, EndpointConfig
from .reward import RewardConfig
from .validator import validate_record

log = logging.getLogger("tooldag")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def cmd_generate(args) -> int:
    try:
        cfg = load_config(args.config)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.workers is not None:
        cfg.workers = args.workers
    try:
        result = Generator(cfg).run()
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_corpus(result.transcripts, args.out)
    stats = result.stats()
    stats_path = Path(args.stats or f"{args.out}.stats.json")
    stats_path.write_text(_dump(stats) + "\n", encoding="utf-8")
    print(_dump(stats))
    missing = cfg.samples - len(result.transcripts)
    if missing:
        print(f"warning: {missing} sample(s) failed validation after {cfg.max_attempts} attempts", file=sys.stderr)
    return EXIT_FAIL if cfg.samples and not result.transcripts else EXIT_OK


def cmd_validate(args) -> int:
    rows = []
    try:
        fh = open(args.corpus, encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                sample_id = json.loads(line).get("sample_id")
            except (ValueError, AttributeError):
                sample_id = None
            for v in validate_record(line, lenient=args.lenient):
                rows.append({"line": lineno, "sample_id": sample_id, **v.to_dict()})
    out = open(args.report, "w", encoding="utf-8") if args.report else sys.stdout
    try:
        for row in rows:
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
    finally:
        if args.report:
            out.close()
    lines = len({r["line"] for r in rows})
    print(f"{len(rows)} violation(s) on {lines} line(s)", file=sys.stderr)
    return EXIT_FAIL if rows else EXIT_OK


def cmd_score(args) -> int:
    try:
        cfg = RewardConfig(alpha=args.alpha)
        gold = list(read_corpus(args.gold))
        preds = load_predictions(args.pred)
    except (OSError, ValueError, DecodeError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = score_corpus(preds, gold, cfg)
    out_path = args.out or f"{args.pred}.scores.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps({**r.to_dict(), "scenario": r.scenario}) + "\n")
    agg = aggregate(rows)
    print(format_table(agg))
    if args.summary:
        Path(args.summary).write_text(_dump(agg) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not 1 <= args.k <= args.runs:
        print("error: need 1 <= k <= runs", file=sys.stderr)
        return EXIT_USAGE
    try:
        corpus = list(read_corpus(args.corpus))
    except (OSError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    chat = ChatClient(EndpointConfig(
        args.endpoint, args.model, temperature=args.temperature,
        max_in_flight=args.max_in_flight, api_key_env=args.api_key_env,
        retries=args.retries, backoff=args.backoff,
    ))
    try:
        report = evaluate_corpus(corpus, chat, runs=args.runs, k=args.k, temperature=args.temperature)
    finally:
        chat.close()
    summary = report.summary()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for u in report.units:
                fh.write(json.dumps(u.to_dict()) + "\n")
    print(_dump(summary))
    if report.units and all(u.flagged for u in report.units):
        return EXIT_FAIL
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        corpus = list(read_corpus(args.corpus))
    except (OSError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(_dump(corpus_stats(corpus)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tooldag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a validated corpus from a config file")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--stats", help="stats report path (default: <out>.stats.json)")
    g.add_argument("--workers", type=int)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="run the rule checks over a corpus")
    v.add_argument("--corpus", required=True)
    v.add_argument("--lenient", action="store_true", help="allow extra payload keys")
    v.add_argument("--report", help="write the JSONL report here instead of stdout")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("score", help="score model outputs against a gold corpus")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--out", help="scoring JSONL path (default: <pred>.scores.jsonl)")
    s.add_argument("--summary", help="also write the aggregate table as JSON")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("evaluate", help="estimate pass@k against a chat-completion endpoint")
    e.add_argument("--corpus", required=True)
    e.add_argument("--endpoint", required=True, help="full URL of the chat-completions route")
    e.add_argument("--model", required=True)
    e.add_argument("--temperature", type=float, default=0.1)
    e.add_argument("--runs", type=int, default=10)
    e.add_argument("--k", type=int, default=1)
    e.add_argument("--max-in-flight", type=int, default=4)
    e.add_argument("--api-key-env", default="TOOLDAG_API_KEY")
    e.add_argument("--retries", type=int, default=3)
    e.add_argument("--backoff", type=float, default=1.0)
    e.add_argument("--out", help="per-turn results as JSONL")
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("stats", help="summary statistics of a corpus")
    st.add_argument("--corpus", required=True)
    st.set_defaults(func=cmd_stats)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ToolDagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
