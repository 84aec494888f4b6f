"""Command-line entry point.

Exit codes: 0 on a finished session (failures found are results, not
errors), 2 for bad configuration, 3 when startup fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import DEFAULT_TIMEOUT
from .report import IoFailure
from .semantics import DimensionMismatch, EmptyFile
from .session import ABLATIONS, ConfigError, SessionConfig, run_repeated, run_session
from .spec_model import SpecError
from .values import LlmClientConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STARTUP = 3

log = logging.getLogger("restmarl")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="restmarl", description="Multi-agent reinforcement-learning REST API tester.")
    target = p.add_mutually_exclusive_group()
    target.add_argument("--spec", help="OpenAPI 3 document (YAML or JSON)")
    target.add_argument("--sim", action="store_true", help="test the bundled simulated service (default when --spec is absent)")
    p.add_argument("--base-url", help="server base URL; defaults to the document's first server entry")
    p.add_argument("--budget", type=float, default=None, help="time budget in seconds (default 3600 unless --max-requests is given)")
    p.add_argument("--max-requests", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutation-rate", type=float, default=0.2)
    p.add_argument("--embeddings", help="whitespace-separated word vector file; the bundled fixture is used otherwise")
    p.add_argument("--llm-endpoint", help="chat-completions URL; key read from $RESTMARL_LLM_API_KEY")
    p.add_argument("--llm-model", default="gpt-3.5-turbo")
    p.add_argument("--llm-stub", action="store_true", help="force the offline deterministic stub")
    p.add_argument("--auth-header", help="static header sent with every request, e.g. 'Authorization: Bearer x'")
    p.add_argument("--disable", action="append", choices=ABLATIONS, default=[], help="switch off a component (repeatable)")
    p.add_argument("--repeat", type=int, default=1, help="run N sessions with seeds seed..seed+N-1")
    p.add_argument("--parallel", action="store_true", help="run repetitions in threads")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="per-request timeout in seconds")
    p.add_argument("--out", help="report directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> SessionConfig:
    budget = args.budget
    if budget is None and args.max_requests is None:
        budget = 3600.0
    llm = None
    if args.llm_endpoint and not args.llm_stub:
        llm = LlmClientConfig(endpoint=args.llm_endpoint, model=args.llm_model)
    try:
        return SessionConfig(
            spec_path=args.spec,
            base_url=args.base_url,
            time_budget=budget,
            max_requests=args.max_requests,
            seed=args.seed,
            mutation_rate=args.mutation_rate,
            llm=llm,
            embeddings=args.embeddings,
            auth_header=args.auth_header,
            out_dir=args.out,
            disable=frozenset(args.disable),
            timeout=args.timeout,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.repeat < 1:
            raise ConfigError("--repeat must be at least 1")
        config = config_from_args(args)
        if config.spec_path is not None and not Path(config.spec_path).is_file():
            print(f"error: specification file not found: {config.spec_path}", file=sys.stderr)
            return EXIT_STARTUP
        if config.embeddings is not None and not Path(config.embeddings).is_file():
            print(f"error: embeddings file not found: {config.embeddings}", file=sys.stderr)
            return EXIT_STARTUP
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.repeat > 1:
            result = run_repeated(config, args.repeat, parallel=args.parallel)
            print(json.dumps({k: v for k, v in result.items() if k != "runs"}, indent=2, sort_keys=True))
        else:
            summary = run_session(config)
            print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpecError, EmptyFile, DimensionMismatch, IoFailure, OSError) as exc:
        print(f"error: startup failed: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
