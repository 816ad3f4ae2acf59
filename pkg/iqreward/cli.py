"""Command-line driver.

Usage:
    iqreward gen-corpus --config exp.cfg
    iqreward train-iq --config exp.cfg --output results/iq
    iqreward run-rl --reward iq --estimator inprocess --seed 1
    iqreward report results/iq results/rl-ts results/rl-iq
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, load_experiment_config
from .corpus import corpus_stats, load_corpus, make_folds, save_corpus, synthesize_corpus
from .domain import bundled_domains, load_domain
from .errors import EstimatorServiceError
from .estimator import EstimatorServer
from .experiment import (
    MODEL_FILE,
    cross_validate,
    load_experiment_corpus,
    run_rl,
    sweep_context,
    train_iq_model,
    write_results,
)
from .iq_model import evaluate, load_params, save_params
from .models import IqRunResult
from .policy import ActionSpace, ScriptedPolicy, load_policy
from .registry import get_default_registry
from .report import build_report, iq_markdown, iq_row, markdown_table, rl_markdown, rl_row, write_report

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
DEFAULT_ADDRESS = "127.0.0.1:8765"


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _experiment_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value experiment config file")
    parser.add_argument("--seed", type=int, help="seed override (RL seed list, corpus or model seed)")
    parser.add_argument("--domain", help=f"bundled domain ({', '.join(bundled_domains())}) or ontology path")
    parser.add_argument("--reward", choices=["ts", "iq"])
    parser.add_argument("--estimator", choices=get_default_registry().list_ids())
    parser.add_argument("--db-size", type=int, help="regenerate the domain database with this many entities")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")


def _load_config(args: argparse.Namespace, seed_key: Optional[str]) -> ExperimentConfig:
    overrides: dict[str, Any] = {
        "domain": args.domain,
        "reward": args.reward,
        "estimator": args.estimator,
        "db_size": args.db_size,
        "output": args.output,
    }
    if seed_key is not None and args.seed is not None:
        overrides[seed_key] = [args.seed] if seed_key == "seeds" else args.seed
    for key in ("model", "address"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[f"estimator_{key}"] = value
    return load_experiment_config(args.config, overrides)


def _print_fold_sizes(folds: Sequence[Sequence[str]]) -> None:
    print(markdown_table(["Fold", "Test dialogues"], [[str(k), str(len(f))] for k, f in enumerate(folds)]))
    print()


# --- Commands ---


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    cfg = _load_config(args, "synth_seed")
    synth = cfg.synth_config()
    corpus = synthesize_corpus(synth)
    out = Path(args.out) if args.out else Path(cfg.output) / "corpus.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    stats = corpus_stats(corpus)
    rows = [
        ["Dialogue length (turns)", *(f"{v:g}" for v in stats.dialogue_length), f"{synth.max_turns}", f"{synth.mean_turns:g}"],
        ["Turn length (tokens)", *(f"{v:g}" for v in stats.turn_length), f"{synth.max_tokens}", f"{synth.mean_tokens:g}"],
        ["Tokens per dialogue", *(f"{v:g}" for v in stats.tokens_per_dialogue), "-", "-"],
    ]
    print(f"{stats.n_dialogues} dialogues written to {out}\n")
    print(markdown_table(["Statistic", "Max", "Mean", "Median", "Target max", "Target mean"], rows))
    print()
    labels = [[str(iq), str(stats.label_counts.get(iq, 0))] for iq in range(1, 6)]
    print(markdown_table(["IQ", "Turns"], labels))
    return 0


def cmd_train_iq(args: argparse.Namespace) -> int:
    cfg = _load_config(args, "iq_seed")
    corpus = load_experiment_corpus(cfg)
    _print_fold_sizes(make_folds(corpus, cfg.cv_folds, cfg.cv_seed))
    run = cross_validate(corpus, cfg)
    final = train_iq_model(corpus, cfg)
    out = Path(cfg.output)
    write_results([run], out)
    save_params(out / MODEL_FILE, final.model)
    print(iq_markdown([iq_row(run)]))
    print(f"\nmodel written to {out / MODEL_FILE}")
    return 0


def cmd_eval_iq(args: argparse.Namespace) -> int:
    cfg = _load_config(args, "iq_seed")
    model = load_params(args.model)
    corpus = load_corpus(args.corpus, cfg.corpus_mapping) if args.corpus else load_experiment_corpus(cfg)
    if any(turn.iq is not None for d in corpus for turn in d.turns):
        scores = evaluate(model, corpus)
        run = IqRunResult(
            max_context_turns=model.config.max_context_turns,
            n_dialogues=len(corpus),
            n_turns=sum(turn.iq is not None for d in corpus for turn in d.turns),
            uar=scores.uar,
            kappa=scores.kappa,
            rho=None if np.isnan(scores.rho) else scores.rho,
        )
        write_results([run], cfg.output)
        print(iq_markdown([iq_row(run)]))
        return 0
    finals = Counter(model.predict_final(d).iq for d in corpus)
    print(markdown_table(["Final IQ", "Dialogues"], [[str(iq), str(finals.get(iq, 0))] for iq in range(1, 6)]))
    return 0


def cmd_sweep_context(args: argparse.Namespace) -> int:
    cfg = _load_config(args, "iq_seed")
    corpus = load_experiment_corpus(cfg)
    runs = sweep_context(corpus, cfg)
    write_results(runs, cfg.output)
    print(iq_markdown([iq_row(r) for r in runs]))
    return 0


def _cmd_rl(args: argparse.Namespace, train_policy: bool) -> int:
    cfg = _load_config(args, "seeds")
    result = run_rl(cfg, train_policy=train_policy)
    write_results([result], cfg.output)
    print(rl_markdown([rl_row(result)]))
    return 0


def cmd_run_rl(args: argparse.Namespace) -> int:
    return _cmd_rl(args, train_policy=True)


def cmd_eval_rl(args: argparse.Namespace) -> int:
    return _cmd_rl(args, train_policy=False)


def cmd_serve_iq(args: argparse.Namespace) -> int:
    cfg = _load_config(args, None)
    if cfg.estimator_model is None:
        raise ValueError("serve-iq needs --model or estimator_model in the config")
    model = load_params(cfg.estimator_model)
    server = EstimatorServer(model, cfg.estimator_address or DEFAULT_ADDRESS)
    try:
        asyncio.run(server.serve_forever())
    except KeyboardInterrupt:
        logger.info("interrupted")
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    from .chat import run_chat

    cfg = _load_config(args, "seeds")
    domain = load_domain(cfg.domain, cfg.db_size)
    policy = load_policy(args.policy) if args.policy else ScriptedPolicy(ActionSpace(domain))
    result = run_chat(policy, domain, rng=np.random.default_rng(cfg.seeds[0]), max_turns=cfg.max_turns)
    out = Path(args.transcript) if args.transcript else Path(cfg.output) / "chat.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus([result.transcript], out)
    print(f"transcript of {len(result.transcript.turns)} turns written to {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = build_report(args.dirs)
    if args.output:
        for path in write_report(report, args.output):
            logger.info("wrote %s", path)
    print(report.markdown, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqreward",
        description="Interaction Quality estimation and IQ-rewarded dialogue policy learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize an IQ-annotated corpus")
    _experiment_args(p)
    p.add_argument("--out", help="corpus file (default: <output>/corpus.jsonl)")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-iq", help="cross-validate the IQ model and train a final model")
    _experiment_args(p)
    p.set_defaults(func=cmd_train_iq)

    p = sub.add_parser("eval-iq", help="score a trained IQ model on a corpus")
    _experiment_args(p)
    p.add_argument("--model", required=True, help="IQ model file")
    p.add_argument("--corpus", help="JSONL corpus (default: the configured corpus)")
    p.set_defaults(func=cmd_eval_iq)

    p = sub.add_parser("sweep-context", help="cross-validate once per context length")
    _experiment_args(p)
    p.set_defaults(func=cmd_sweep_context)

    p = sub.add_parser("run-rl", help="train and evaluate GP-SARSA policies")
    _experiment_args(p)
    p.add_argument("--model", help="IQ model file for the inprocess estimator")
    p.add_argument("--address", help="service address for the service estimator")
    p.set_defaults(func=cmd_run_rl)

    p = sub.add_parser("eval-rl", help="evaluate saved policies from the output directory")
    _experiment_args(p)
    p.add_argument("--model", help="IQ model file for the inprocess estimator")
    p.add_argument("--address", help="service address for the service estimator")
    p.set_defaults(func=cmd_eval_rl)

    p = sub.add_parser("serve-iq", help="serve IQ estimates over a socket")
    _experiment_args(p)
    p.add_argument("--model", help="IQ model file")
    p.add_argument("--address", help=f"host:port or unix:/path (default {DEFAULT_ADDRESS})")
    p.set_defaults(func=cmd_serve_iq)

    p = sub.add_parser("chat", help="talk to a policy as the user")
    _experiment_args(p)
    p.add_argument("--policy", help="policy file (default: the scripted policy)")
    p.add_argument("--transcript", help="transcript file (default: <output>/chat.jsonl)")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("report", help="aggregate result directories into tables")
    p.add_argument("dirs", nargs="+", help="result directories")
    p.add_argument("--output", help="write report.md and CSV files here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, EstimatorServiceError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
