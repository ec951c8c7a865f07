"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 backend error,
4 parse/repair exhaustion or corrupt artifacts, 5 missing labels/counts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .backend import BackendError
from .domain import DomainError
from .factcheck import FactcheckError, MissingLabelsError, run_fact_agent
from .infomeasure import InfoError, MissingCountError
from .pipeline import PipelineError
from .runner import (
    ArtifactError,
    ConfigError,
    MissingCountsError,
    build_counts_provider,
    build_pipeline,
    build_wiki_client,
    cmd_calibrate,
    cmd_counts,
    cmd_evaluate,
    cmd_fact_check,
    cmd_run,
    cmd_simulate,
    load_config,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_PARSE = 4
EXIT_MISSING_DATA = 5


def _parse_theta_grid(value: str):
    if value == "attainable":
        return "attainable"
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad theta grid {value!r}: {exc}") from exc


def _parse_alphas(value: str):
    return [float(v) for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="absgate",
        description=(
            "Replace low-confidence claims in generated text with reliable "
            "generalizations, then quantify the risk-coverage trade-off."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the staged pipeline over a prompt set")
    run.add_argument("--config", required=True)
    run.add_argument("--run-dir", required=True)
    run.add_argument("--offline", action="store_true")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--theta-grid", default=None, metavar="LIST|attainable")

    evaluate = sub.add_parser("evaluate", help="risk-coverage metrics for a run")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--run-dir", required=True)
    evaluate.add_argument("--offline", action="store_true")
    evaluate.add_argument("--macro", action="store_true", help="macro-average prompts")

    calibrate = sub.add_parser("calibrate", help="risk-guided threshold selection")
    calibrate.add_argument("--config", required=True)
    calibrate.add_argument("--run-dir", required=True)
    calibrate.add_argument("--alpha", type=float, required=True)
    calibrate.add_argument("--delta", type=float, required=True)
    calibrate.add_argument("--split", type=float, default=None)
    calibrate.add_argument("--seed", type=int, default=None)
    calibrate.add_argument("--offline", action="store_true")

    simulate = sub.add_parser("simulate", help="synthetic check of the threshold guarantee")
    simulate.add_argument("--alpha", required=True, metavar="A[,A2,...]")
    simulate.add_argument("--delta", type=float, required=True)
    simulate.add_argument("--n", type=int, required=True)
    simulate.add_argument("--m", type=int, default=100)
    simulate.add_argument("--trials", type=int, default=1000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", default=None)

    fact_check = sub.add_parser("fact-check", help="label claims via store or agent")
    fact_check.add_argument("--config", required=True)
    fact_check.add_argument("--run-dir", default=None)
    fact_check.add_argument("--claim", default=None, help="check one claim and print it")
    fact_check.add_argument("--offline", action="store_true")

    counts = sub.add_parser("counts", help="counting questions and entity counts")
    counts.add_argument("--config", required=True)
    counts.add_argument("--run-dir", default=None)
    counts.add_argument("--question", default=None, help="answer one question and print it")
    counts.add_argument("--offline", action="store_true")

    return parser


def _dispatch(args) -> int:
    if args.command == "run":
        config = load_config(args.config)
        grid = _parse_theta_grid(args.theta_grid) if args.theta_grid else None
        run_dir = cmd_run(
            config, args.run_dir, offline=args.offline, theta_grid=grid, seed=args.seed
        )
        print(f"run complete: {run_dir}")
        return EXIT_OK

    if args.command == "evaluate":
        config = load_config(args.config)
        summary = cmd_evaluate(args.run_dir, config, offline=args.offline, macro=args.macro)
        print(json.dumps(summary["aurc"], sort_keys=True))
        print(f"metrics written to {args.run_dir}")
        return EXIT_OK

    if args.command == "calibrate":
        config = load_config(args.config)
        payload = cmd_calibrate(
            args.run_dir,
            config,
            alpha=args.alpha,
            delta=args.delta,
            split=args.split,
            seed=args.seed,
            offline=args.offline,
        )
        print(
            json.dumps(
                {k: payload[k] for k in ("theta_hat", "epsilon", "n", "degenerate")},
                sort_keys=True,
            )
        )
        return EXIT_OK

    if args.command == "simulate":
        report = cmd_simulate(
            _parse_alphas(args.alpha),
            delta=args.delta,
            n=args.n,
            trials=args.trials,
            seed=args.seed,
            m=args.m,
        )
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(report)
        sys.stdout.write(report)
        return EXIT_OK

    if args.command == "fact-check":
        config = load_config(args.config)
        if args.claim:
            pipeline = build_pipeline(config, args.offline)
            wiki = build_wiki_client(config, args.offline)
            verdict = run_fact_agent(
                pipeline.backend,
                wiki,
                args.claim,
                model=config.backend_cfg["model"],
                max_tool_calls=int(config.raw.get("agent_max_tool_calls", 12)),
            )
            print(
                json.dumps(
                    {
                        "label": verdict.label,
                        "rationale": verdict.rationale,
                        "evidence": [
                            {"title": e.title, "url": e.url, "quote": e.quote}
                            for e in verdict.evidence
                        ],
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
            )
            return EXIT_OK
        if not args.run_dir:
            raise ConfigError("fact-check needs --run-dir or --claim")
        store = cmd_fact_check(args.run_dir, config, offline=args.offline)
        print(f"labels cover {len(store)} claim(s)")
        return EXIT_OK

    if args.command == "counts":
        config = load_config(args.config)
        if args.question:
            provider = build_counts_provider(config)
            print(provider.count(args.question))
            return EXIT_OK
        if not args.run_dir:
            raise ConfigError("counts needs --run-dir or --question")
        table = cmd_counts(args.run_dir, config, offline=args.offline)
        print(f"counts cover {len(table)} question(s)")
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (MissingLabelsError, MissingCountsError, MissingCountError) as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except (PipelineError, ArtifactError, DomainError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FactcheckError, InfoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
