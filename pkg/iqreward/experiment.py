"""Experiment driver: IQ cross-validation, context sweeps and GP-SARSA runs.

Each run writes ``results.json`` (a ResultsFile) into its output directory;
``report`` aggregates any number of such directories.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import ExperimentConfig
from .corpus import build_vocab, load_corpus, make_folds, save_corpus, synthesize_corpus
from .domain import load_domain
from .env import run_episode
from .estimator import BaseEstimator, build_estimator
from .iq_model import TrainResult, load_pretrained_embeddings, train
from .metrics import score_predictions
from .models import AnnotatedDialogue, IqFoldResult, IqRunResult, RlRunResult, RlSeedResult
from .policy import ActionSpace, GpSarsaPolicy, load_policy, save_policy
from .tracker import BeliefState, summarize_with_db

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.json"
MODEL_FILE = "iq_model.bin"
TRAIN_PHASE, EVAL_PHASE = 0, 1

RunResult = Annotated[Union[IqRunResult, RlRunResult], Field(discriminator="kind")]


class ResultsFile(BaseModel):
    runs: list[RunResult] = Field(default_factory=list)


def write_results(runs: Sequence[RunResult], output_dir: Union[str, Path]) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESULTS_FILE
    path.write_text(ResultsFile(runs=list(runs)).model_dump_json(indent=2) + "\n")
    return path


def policy_file(output_dir: Union[str, Path], seed: int) -> Path:
    return Path(output_dir) / f"policy_seed{seed}.json"


def transcripts_file(output_dir: Union[str, Path], seed: int) -> Path:
    return Path(output_dir) / f"transcripts_seed{seed}.jsonl"


# --- IQ estimation ---


def load_experiment_corpus(cfg: ExperimentConfig) -> list[AnnotatedDialogue]:
    """The configured corpus file, or a synthetic corpus when none is set."""
    if cfg.corpus_path is None:
        return synthesize_corpus(cfg.synth_config())
    return load_corpus(cfg.corpus_path, cfg.corpus_mapping)


def train_iq_model(
    corpus: Sequence[AnnotatedDialogue],
    cfg: ExperimentConfig,
    dev: Optional[Sequence[AnnotatedDialogue]] = None,
    *,
    max_context_turns: Optional[int] = None,
) -> TrainResult:
    vocab = build_vocab(corpus, min_count=cfg.iq_min_count)
    config = cfg.iq_model_config(len(vocab))
    if max_context_turns is not None:
        config = config.model_copy(update={"max_context_turns": max_context_turns})
    embeddings = None
    if cfg.iq_embeddings_path is not None:
        embeddings, coverage = load_pretrained_embeddings(
            cfg.iq_embeddings_path, vocab, config.embedding_dim, seed=config.seed, init_scale=config.init_scale
        )
        logger.info("pretrained embeddings cover %.1f%% of %d tokens", 100 * coverage, len(vocab))
    return train(corpus, config, dev, vocab=vocab, embeddings=embeddings)


def cross_validate(
    corpus: Sequence[AnnotatedDialogue],
    cfg: ExperimentConfig,
    *,
    max_context_turns: Optional[int] = None,
) -> IqRunResult:
    """Dialogue-wise k-fold CV; scores are pooled over all test folds."""
    folds = make_folds(corpus, cfg.cv_folds, cfg.cv_seed)
    by_id = {d.dialogue_id: d for d in corpus}
    context = max_context_turns if max_context_turns is not None else cfg.iq_max_context_turns
    gold: list[int] = []
    pred: list[int] = []
    fold_results = []
    for k, test_ids in enumerate(folds):
        held_out = set(test_ids)
        test = [by_id[i] for i in test_ids]
        train_set = [d for d in corpus if d.dialogue_id not in held_out]
        result = train_iq_model(train_set, cfg, max_context_turns=context)
        for dialogue, predicted in zip(test, result.model.predict_batch(test)):
            for turn, p in zip(dialogue.turns, predicted):
                if turn.iq is not None:
                    gold.append(turn.iq)
                    pred.append(p)
        fold_results.append(IqFoldResult(fold=k, n_train=len(train_set), n_test=len(test), best_epoch=result.best_epoch))
        logger.info("fold %d/%d done: %d train / %d test dialogues", k + 1, len(folds), len(train_set), len(test))
    scores = score_predictions(gold, pred)
    return IqRunResult(
        max_context_turns=context,
        n_dialogues=len(corpus),
        n_turns=len(gold),
        uar=scores.uar,
        kappa=scores.kappa,
        rho=None if np.isnan(scores.rho) else scores.rho,
        folds=fold_results,
    )


def sweep_context(corpus: Sequence[AnnotatedDialogue], cfg: ExperimentConfig) -> list[IqRunResult]:
    """One cross-validation per ``iq_context_sweep`` value."""
    runs = []
    for m in cfg.iq_context_sweep:
        run = cross_validate(corpus, cfg, max_context_turns=m)
        logger.info("context %d: UAR %.3f kappa %.3f", m, run.uar, run.kappa)
        runs.append(run)
    return runs


# --- Reinforcement learning ---


def _estimator_for(cfg: ExperimentConfig) -> Optional[BaseEstimator]:
    if cfg.reward != "iq":
        return None
    return build_estimator(
        cfg.estimator,
        model_path=cfg.estimator_model,
        address=cfg.estimator_address,
        timeout=cfg.estimator_timeout,
    )


def run_rl(
    cfg: ExperimentConfig,
    *,
    train_policy: bool = True,
    estimator: Optional[BaseEstimator] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> RlRunResult:
    """Train (or load) one GP-SARSA policy per seed and evaluate it greedily.

    Episode ``i`` of seed ``s`` draws from ``default_rng([s, phase, i])`` so
    every episode is reproducible on its own.
    """
    out = Path(output_dir if output_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    domain = load_domain(cfg.domain, cfg.db_size)
    actions = ActionSpace(domain)
    reward_cfg = cfg.reward_config()
    summary_dim = summarize_with_db(BeliefState.initial(domain)).size
    own_estimator = estimator is None
    estimator = estimator if estimator is not None else _estimator_for(cfg)
    seeds = []
    try:
        for seed in cfg.seeds:
            if train_policy:
                policy = GpSarsaPolicy(len(actions), summary_dim, cfg.gp_config())
                for i in range(cfg.n_train_dialogues):
                    result = run_episode(
                        policy, domain, reward_cfg, estimator, "train",
                        np.random.default_rng([seed, TRAIN_PHASE, i]),
                        episode_id=f"train-s{seed}-{i:05d}", action_space=actions,
                    )
                    logger.debug("%s: return %g", result.episode_id, result.episode_return)
                save_policy(policy, policy_file(out, seed))
            else:
                policy = load_policy(policy_file(out, seed))
            evaluated = [
                run_episode(
                    policy, domain, reward_cfg, estimator, "eval",
                    np.random.default_rng([seed, EVAL_PHASE, i]),
                    episode_id=f"eval-s{seed}-{i:05d}", action_space=actions,
                )
                for i in range(cfg.n_eval_dialogues)
            ]
            save_corpus([r.transcript for r in evaluated], transcripts_file(out, seed))
            row = RlSeedResult(
                seed=seed,
                success_rate=float(np.mean([r.success for r in evaluated])),
                avg_turns=float(np.mean([r.turns for r in evaluated])),
                avg_return=float(np.mean([r.episode_return for r in evaluated])),
                avg_final_iq=float(np.mean([r.final_iq for r in evaluated])),
                dictionary_size=policy.dictionary_size,
            )
            logger.info(
                "seed %d: success %.1f%% turns %.2f return %.2f dictionary %d",
                seed, 100 * row.success_rate, row.avg_turns, row.avg_return, row.dictionary_size,
            )
            seeds.append(row)
    finally:
        if own_estimator and estimator is not None:
            estimator.close()
    return RlRunResult(
        domain=domain.name,
        reward=cfg.reward,
        estimator=cfg.estimator if cfg.reward == "iq" else "-",
        n_train_dialogues=cfg.n_train_dialogues,
        n_eval_dialogues=cfg.n_eval_dialogues,
        seeds=seeds,
    )
