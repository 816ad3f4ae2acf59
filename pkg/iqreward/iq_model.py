"""Hierarchical BiGRU + attention Interaction Quality estimator.

Turn level: token embeddings -> bidirectional GRU -> additive attention
pooling (scores v . tanh(W h_k + b), scaled by ``attention_scale``).
Dialogue level: unidirectional GRU over pooled turn vectors -> softmax over
IQ 1..5 at every system turn. When a dialogue is longer than
``max_context_turns`` (m), the prediction for turn t >= m comes from a fresh
recurrence over turns t-m+1..t.

Parameter names: ``embedding``; ``tok_fwd.*`` / ``tok_bwd.*`` (token GRUs);
``att.W``, ``att.b``, ``att.v``; ``dlg.*`` (dialogue GRU); ``out.W``, ``out.b``.

Two forward paths share the same parameters. ``predict_sequence`` runs one
turn and one context window at a time, so its output for turn t is
bit-identical whatever follows t. Training and bulk evaluation use padded,
masked batches.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from pydantic import ValidationError

from . import nncore as nn
from .config import IqModelConfig
from .corpus import SEP_TOKEN, UNK_TOKEN, Vocab, build_vocab
from .errors import ConfigMismatchError, CorruptFileError, ShapeError
from .metrics import IqScores, score_predictions, uar
from .models import AnnotatedDialogue, IqPrediction

logger = logging.getLogger(__name__)

MODEL_KIND = "iqreward-bigru"
LOW_COVERAGE = 0.5


class TurnEncoding(NamedTuple):
    alpha: np.ndarray
    pooled: nn.Tensor


class EpochStats(NamedTuple):
    epoch: int
    loss: float
    train_uar: float
    dev_uar: Optional[float]


@dataclass
class IqModel:
    """Trained parameters with the config and vocabulary they belong to."""

    params: nn.ParameterSet
    config: IqModelConfig
    vocab: Vocab

    def encode(self, dialogue: AnnotatedDialogue) -> list[np.ndarray]:
        return [self.vocab.encode_turn(turn) for turn in dialogue.turns]

    def predict_dialogue(self, dialogue: AnnotatedDialogue) -> list[IqPrediction]:
        return predict_sequence(self.encode(dialogue), self.params, self.config)

    def predict_final(self, dialogue: AnnotatedDialogue) -> IqPrediction:
        """Prediction at the last system turn."""
        return predict_sequence(self.encode(dialogue), self.params, self.config, final_only=True)[-1]

    def predict_batch(self, dialogues: Sequence[AnnotatedDialogue], batch_size: int = 16) -> list[list[int]]:
        """Predicted IQ of every turn, via the padded batch path."""
        out: list[list[int]] = []
        with nn.no_grad():
            for start in range(0, len(dialogues), batch_size):
                chunk = dialogues[start : start + batch_size]
                logits, emits = _forward_batch(
                    [self.encode(d) for d in chunk], self.params, self.config, training=False, rng=None
                )
                preds = [[0] * len(d.turns) for d in chunk]
                for row, (i, t) in enumerate(emits):
                    preds[i][t] = int(np.argmax(logits.data[row])) + 1
                out.extend(preds)
        return out


class TrainResult(NamedTuple):
    model: IqModel
    history: list[EpochStats]
    best_epoch: int

    @property
    def params(self) -> nn.ParameterSet:
        return self.model.params


def init_params(config: IqModelConfig) -> nn.ParameterSet:
    params = nn.ParameterSet(rng_seed=config.seed)
    scale = config.init_scale
    params.add("embedding", (config.vocab_size, config.embedding_dim), init_scale=scale)
    nn.init_gru(params, "tok_fwd.", config.embedding_dim, config.turn_hidden, scale)
    nn.init_gru(params, "tok_bwd.", config.embedding_dim, config.turn_hidden, scale)
    params.add("att.W", (config.attention_dim, 2 * config.turn_hidden), init_scale=scale)
    params.add("att.b", (config.attention_dim,), init="zeros")
    params.add("att.v", (config.attention_dim,), init_scale=scale)
    nn.init_gru(params, "dlg.", 2 * config.turn_hidden, config.dialogue_hidden, scale)
    params.add("out.W", (config.num_classes, config.dialogue_hidden), init_scale=scale)
    params.add("out.b", (config.num_classes,), init="zeros")
    return params


# --- Turn level ---


def embed_turn(tokens: Sequence[int], embedding: nn.Tensor) -> nn.Tensor:
    """Rows of the embedding matrix for each token id, shape (K, d)."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("a turn needs at least one token")
    return nn.embedding(embedding, ids)


def _attention(states: nn.Tensor, params: nn.ParameterSet, config: IqModelConfig, mask: Optional[np.ndarray]):
    projected = nn.tanh(nn.linear(states, params["att.W"], params["att.b"], name="att.W"))
    scores = nn.scale(nn.dot_last(projected, params["att.v"], name="att.v"), config.attention_scale)
    alpha = nn.masked_softmax(scores, mask)
    return alpha, nn.attend(alpha, states)


def encode_turn(embedded: nn.Tensor, params: nn.ParameterSet, config: IqModelConfig) -> TurnEncoding:
    """BiGRU over one turn's embeddings, then attention pooling."""
    if embedded.data.ndim != 2 or embedded.shape[0] == 0:
        raise ShapeError(f"encode_turn needs a (K, d) matrix with K >= 1, got {embedded.shape}")
    rows = [nn.take_rows(embedded, np.int64(k)) for k in range(embedded.shape[0])]
    states = nn.stack(nn.bigru_sequence(rows, params, "tok_fwd.", "tok_bwd."), axis=0)
    alpha, pooled = _attention(states, params, config, None)
    return TurnEncoding(alpha=alpha.data, pooled=pooled)


# --- Dialogue level, one job at a time ---


def _classify(hidden: nn.Tensor, params: nn.ParameterSet) -> IqPrediction:
    logits = nn.linear(hidden, params["out.W"], params["out.b"], name="out.W")
    probs = nn.softmax(logits.data)
    return IqPrediction(probs=probs.tolist(), iq=int(np.argmax(probs)) + 1)


def predict_sequence(
    turns: Sequence[Sequence[int]],
    params: nn.ParameterSet,
    config: IqModelConfig,
    *,
    final_only: bool = False,
) -> list[IqPrediction]:
    """Per-turn IQ predictions for one dialogue given as token-id lists.

    With ``final_only`` only the last turn is scored (a one-element list).
    """
    if len(turns) == 0:
        raise ValueError("cannot score an empty dialogue")
    m = config.max_context_turns
    last = len(turns) - 1
    wanted = [last] if final_only else list(range(len(turns)))
    first_needed = max(0, wanted[0] - m + 1)
    with nn.no_grad():
        embedding = params["embedding"]
        pooled: dict[int, nn.Tensor] = {
            t: encode_turn(embed_turn(turns[t], embedding), params, config).pooled
            for t in range(first_needed, last + 1)
        }
        hidden = params["dlg.U_z"].shape[0]
        predictions: list[IqPrediction] = []
        prefix: list[nn.Tensor] = []
        if wanted[0] < m:
            h = nn.Tensor(np.zeros(hidden))
            for t in range(min(len(turns), m)):
                h = nn.gru_cell_forward(pooled[t], h, params, "dlg.")
                prefix.append(h)
        for t in wanted:
            if t < m:
                predictions.append(_classify(prefix[t], params))
                continue
            h = nn.Tensor(np.zeros(hidden))
            for s in range(t - m + 1, t + 1):
                h = nn.gru_cell_forward(pooled[s], h, params, "dlg.")
            predictions.append(_classify(h, params))
    return predictions


# --- Batched path (training, bulk evaluation) ---


def _plan_jobs(lengths: Sequence[int], m: int):
    """Recurrence jobs (dialogue, first turn, length) and the (job, step)
    positions that emit a prediction for (dialogue, turn)."""
    jobs: list[tuple[int, int, int]] = []
    emits: list[tuple[int, int, int, int]] = []
    for i, n in enumerate(lengths):
        j = len(jobs)
        jobs.append((i, 0, min(n, m)))
        emits.extend((j, t, i, t) for t in range(min(n, m)))
        for t in range(m, n):
            emits.append((len(jobs), m - 1, i, t))
            jobs.append((i, t - m + 1, m))
    return jobs, emits


def _forward_batch(
    dialogues: Sequence[Sequence[np.ndarray]],
    params: nn.ParameterSet,
    config: IqModelConfig,
    *,
    training: bool,
    rng: Optional[np.random.Generator],
) -> tuple[nn.Tensor, list[tuple[int, int]]]:
    """Logits (M, C) for every turn of every dialogue, with (dialogue, turn) keys."""
    flat = [ids for turns in dialogues for ids in turns]
    if not flat:
        raise ValueError("cannot score an empty batch")
    if any(len(ids) == 0 for ids in flat):
        raise ValueError("a turn needs at least one token")
    n_turns, width = len(flat), max(len(ids) for ids in flat)
    ids = np.zeros((n_turns, width), dtype=np.int64)
    mask = np.zeros((n_turns, width))
    for r, seq in enumerate(flat):
        ids[r, : len(seq)] = seq
        mask[r, : len(seq)] = 1.0

    embedding = params["embedding"]
    steps = [nn.embedding(embedding, ids[:, k]) for k in range(width)]
    states = nn.stack(nn.bigru_sequence(steps, params, "tok_fwd.", "tok_bwd.", mask), axis=1)
    _, pooled = _attention(states, params, config, mask)
    pooled = nn.dropout(pooled, config.dropout_rate, rng, training) if rng is not None else pooled

    lengths = [len(turns) for turns in dialogues]
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    jobs, emits = _plan_jobs(lengths, config.max_context_turns)
    steps_max = max(length for _, _, length in jobs)
    job_mask = np.zeros((len(jobs), steps_max))
    rows = np.zeros((len(jobs), steps_max), dtype=np.int64)
    for j, (i, start, length) in enumerate(jobs):
        job_mask[j, :length] = 1.0
        rows[j, :length] = offsets[i] + start + np.arange(length)
    h = nn.Tensor(np.zeros((len(jobs), params["dlg.U_z"].shape[0])))
    hidden_states = []
    for step in range(steps_max):
        h_new = nn.gru_cell_forward(nn.take_rows(pooled, rows[:, step]), h, params, "dlg.")
        h = nn.blend(h_new, h, job_mask[:, step : step + 1])
        hidden_states.append(h)
    trace = nn.stack(hidden_states, axis=1)
    picked = nn.take_pairs(trace, np.array([e[0] for e in emits]), np.array([e[1] for e in emits]))
    if rng is not None:
        picked = nn.dropout(picked, config.dropout_rate, rng, training)
    logits = nn.linear(picked, params["out.W"], params["out.b"], name="out.W")
    return logits, [(e[2], e[3]) for e in emits]


def dialogue_loss(
    dialogues: Sequence[Sequence[np.ndarray]],
    labels: Sequence[Sequence[Optional[int]]],
    params: nn.ParameterSet,
    config: IqModelConfig,
    *,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[nn.Tensor, int]:
    """Summed cross-entropy over labeled turns and the number of such turns."""
    logits, keys = _forward_batch(dialogues, params, config, training=training, rng=rng)
    keep = [row for row, (i, t) in enumerate(keys) if labels[i][t] is not None]
    targets = np.array([labels[keys[row][0]][keys[row][1]] - 1 for row in keep], dtype=np.int64)
    if len(keep) < len(keys):
        logits = nn.take_rows(logits, np.array(keep, dtype=np.int64))
    return nn.softmax_cross_entropy(logits, targets), len(keep)


# --- Training and evaluation ---


def _check_labels(corpus: Sequence[AnnotatedDialogue]) -> None:
    for dialogue in corpus:
        for turn in dialogue.turns:
            if turn.iq is None or not 1 <= turn.iq <= 5:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id!r} turn {turn.turn_index}: IQ label {turn.iq!r} not in 1..5"
                )


def _gold_and_pred(model: IqModel, corpus: Sequence[AnnotatedDialogue]) -> tuple[list[int], list[int]]:
    gold, pred = [], []
    for dialogue, predicted in zip(corpus, model.predict_batch(corpus)):
        for turn, p in zip(dialogue.turns, predicted):
            if turn.iq is not None:
                gold.append(turn.iq)
                pred.append(p)
    return gold, pred


def train(
    corpus: Sequence[AnnotatedDialogue],
    config: IqModelConfig,
    dev: Optional[Sequence[AnnotatedDialogue]] = None,
    *,
    vocab: Optional[Vocab] = None,
    min_count: int = 1,
    embeddings: Optional[np.ndarray] = None,
) -> TrainResult:
    """Adam on summed per-turn cross-entropy; deterministic given config.seed.

    With a dev split the parameters of the best dev-UAR epoch are returned,
    otherwise those of the final epoch.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    _check_labels(corpus)
    vocab = vocab or build_vocab(corpus, min_count=min_count)
    config = config.model_copy(update={"vocab_size": len(vocab)})
    params = init_params(config)
    if embeddings is not None:
        params.assign("embedding", embeddings)
    model = IqModel(params, config, vocab)

    encoded = [model.encode(d) for d in corpus]
    labels = [d.labels for d in corpus]
    state = nn.AdamState(lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    history: list[EpochStats] = []
    best: Optional[tuple[float, int, nn.ParameterSet]] = None

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(corpus))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_dialogues):
            batch = order[start : start + config.batch_dialogues]
            params.zero_grad()
            loss, n = dialogue_loss(
                [encoded[i] for i in batch], [labels[i] for i in batch], params, config,
                training=True, rng=dropout_rng,
            )
            loss.backward()
            nn.clip_grad_norm(params, config.clip_norm)
            nn.adam_step(params, None, state)
            total += loss.item()
            count += n
            logger.debug("epoch %d batch %d: loss %.4f over %d turns", epoch, start // config.batch_dialogues, loss.item(), n)
        params.zero_grad()
        train_uar = uar(*_gold_and_pred(model, corpus))
        dev_uar = uar(*_gold_and_pred(model, dev)) if dev else None
        stats = EpochStats(epoch, total / max(count, 1), train_uar, dev_uar)
        history.append(stats)
        logger.info(
            "epoch %d: loss %.4f train UAR %.3f dev UAR %s",
            epoch, stats.loss, train_uar, "-" if dev_uar is None else f"{dev_uar:.3f}",
        )
        if dev_uar is not None and (best is None or dev_uar > best[0]):
            best = (dev_uar, epoch, params.copy())

    if best is not None:
        return TrainResult(IqModel(best[2], config, vocab), history, best[1])
    return TrainResult(model, history, config.epochs)


def evaluate(model: IqModel, corpus: Sequence[AnnotatedDialogue]) -> IqScores:
    """UAR, linear κ and Spearman ρ over the pooled labeled turns."""
    if not corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    gold, pred = _gold_and_pred(model, corpus)
    return score_predictions(gold, pred)


# --- Persistence ---


def save_params(path: str | Path, model: IqModel) -> None:
    header = {"kind": MODEL_KIND, "config": model.config.model_dump(), "vocab": model.vocab.tokens}
    nn.save_parameters(path, model.params, header)


def load_params(path: str | Path, expected: Optional[IqModelConfig] = None) -> IqModel:
    """Load a model file; ``expected`` must match the stored config exactly."""
    params, header = nn.load_parameters(path)
    if header.get("kind") != MODEL_KIND:
        raise ConfigMismatchError(f"{path}: not an IQ model file (kind {header.get('kind')!r})")
    missing = [key for key in ("config", "vocab") if key not in header]
    if missing:
        raise CorruptFileError(f"{path}: header lacks {', '.join(missing)}")
    try:
        config = IqModelConfig.model_validate(header["config"])
    except ValidationError as exc:
        raise CorruptFileError(f"{path}: invalid stored config ({exc.error_count()} errors)") from exc
    if expected is not None and expected != config:
        diff = sorted(k for k, v in expected.model_dump().items() if header["config"].get(k) != v)
        raise ConfigMismatchError(f"{path}: stored config differs in {', '.join(diff)}")
    reference = init_params(config)
    if list(reference) != list(params):
        raise ConfigMismatchError(f"{path}: parameter names do not match the config")
    for name, tensor in reference.items():
        if params[name].shape != tensor.shape:
            raise ConfigMismatchError(
                f"{path}: parameter {name!r} has shape {params[name].shape}, config implies {tensor.shape}"
            )
    try:
        vocab = Vocab(header["vocab"])
    except (TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: invalid stored vocabulary ({exc})") from exc
    if len(vocab) != config.vocab_size:
        raise ConfigMismatchError(f"{path}: vocabulary of {len(vocab)} tokens, config says {config.vocab_size}")
    return IqModel(params, config, vocab)


def load_pretrained_embeddings(
    path: str | Path,
    vocab: Vocab,
    dim: int,
    seed: int = 0,
    init: Optional[np.ndarray] = None,
    init_scale: float = 0.08,
) -> tuple[np.ndarray, float]:
    """Copy vectors for in-vocabulary tokens from a whitespace-separated text
    file (token followed by ``dim`` reals per line; a fastText "count dim"
    header line is skipped). Other rows keep the seeded random init.

    Returns the matrix and the fraction of regular vocabulary tokens covered.
    """
    if init is not None:
        matrix = np.array(init, dtype=np.float64, copy=True)
        if matrix.shape != (len(vocab), dim):
            raise ShapeError(f"init matrix has shape {matrix.shape}, expected {(len(vocab), dim)}")
    else:
        matrix = np.random.default_rng(seed).uniform(-init_scale, init_scale, size=(len(vocab), dim))
    regular = [tok for tok in vocab.tokens if tok not in (UNK_TOKEN, SEP_TOKEN)]
    covered: set[str] = set()
    with Path(path).open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) - 1 != dim:
                raise ShapeError(f"{path}:{lineno}: expected {dim} values after the token, got {len(parts) - 1}")
            token = parts[0]
            if token in vocab and token not in (UNK_TOKEN, SEP_TOKEN):
                matrix[vocab.id(token)] = np.array(parts[1:], dtype=np.float64)
                covered.add(token)
    coverage = len(covered) / len(regular) if regular else 0.0
    if regular and coverage < LOW_COVERAGE:
        logger.warning("pretrained embeddings cover only %.1f%% of the vocabulary", 100 * coverage)
    return matrix, coverage
