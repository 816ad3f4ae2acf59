"""Annotated dialogue corpora: loading, saving, vocabularies, folds, synthesis.

Corpus file (one dialogue per line, JSON):

    {"dialogue_id": "d1", "turns": [{"turn_index": 0, "system_text": "...",
                                     "user_text": "...", "iq": 5}, ...]}

``iq`` may be null for unlabeled turns. Turns are sorted by ``turn_index``
and renumbered from 0 on load.

Delimited tables are read through a column mapping (JSON file or dict):

    {"delimiter": ",", "columns": {"dialogue_id": "call_id", "turn_index": "exchange",
                                   "system_text": "prompt", "user_text": "utterance",
                                   "iq": "iq_score"}}

The ``iq`` column is optional; empty cells are unlabeled turns.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import SynthConfig
from .models import AnnotatedDialogue, AnnotatedTurn, CorpusStats

logger = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"
SEP_TOKEN = "<sep>"
IQ_MAX = 5
IQ_MIN = 1
RECOVERY_RUN = 3

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; whitespace and punctuation split."""
    return _TOKEN_RE.findall(text.lower())


def turn_tokens(turn: AnnotatedTurn) -> list[str]:
    """System tokens, a separator, then user tokens."""
    return tokenize(turn.system_text) + [SEP_TOKEN] + tokenize(turn.user_text)


# --- IQ rule ---


def iq_labels(trouble: Sequence[bool]) -> list[int]:
    """Rule-based IQ of each system turn from the trouble flags before it.

    Start at 5; every flagged turn costs one point, every run of three clean
    turns earns one back; clamped to [1, 5].
    """
    labels = []
    state, clean = IQ_MAX, 0
    for flagged in trouble:
        labels.append(state)
        state, clean = _advance(state, clean, flagged)
    return labels


def final_iq(trouble: Sequence[bool]) -> int:
    """The rule's IQ after every flag of a finished dialogue."""
    state, clean = IQ_MAX, 0
    for flagged in trouble:
        state, clean = _advance(state, clean, flagged)
    return state


def _advance(state: int, clean: int, flagged: bool) -> tuple[int, int]:
    if flagged:
        return max(IQ_MIN, state - 1), 0
    clean += 1
    if clean == RECOVERY_RUN:
        return min(IQ_MAX, state + 1), 0
    return state, clean


# --- Vocabulary ---


class Vocab:
    """Token <-> id map; id 0 is the unknown token."""

    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != UNK_TOKEN:
            raise ValueError(f"vocabulary must start with {UNK_TOKEN!r}")
        self.tokens: list[str] = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("vocabulary lists a token twice")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, 0)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self._ids.get(t, 0) for t in tokens], dtype=np.int64)

    def encode_turn(self, turn: AnnotatedTurn) -> np.ndarray:
        return self.encode(turn_tokens(turn))


def build_vocab(dialogues: Iterable[AnnotatedDialogue], min_count: int = 1) -> Vocab:
    """Ids by descending frequency, ties broken lexicographically."""
    counts: Counter[str] = Counter()
    for dialogue in dialogues:
        for turn in dialogue.turns:
            counts.update(turn_tokens(turn))
    kept = sorted((tok for tok, n in counts.items() if n >= min_count), key=lambda tok: (-counts[tok], tok))
    return Vocab([UNK_TOKEN] + kept)


# --- Folds ---


def make_folds(dialogues: Sequence[AnnotatedDialogue], k: int = 10, seed: int = 0) -> list[list[str]]:
    """Partition dialogue ids into k folds whose sizes differ by at most one."""
    ids = sorted(d.dialogue_id for d in dialogues)
    if len(set(ids)) != len(ids):
        raise ValueError("dialogue ids must be unique to build folds")
    if k < 1:
        raise ValueError(f"fold count must be positive, got {k}")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} dialogues cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[j] for j in perm[i::k]] for i in range(k)]


# --- Loading and saving ---


class ColumnMapping(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delimiter: str = Field(default=",", min_length=1, max_length=1)
    columns: dict[str, str]

    def column(self, field: str) -> Optional[str]:
        return self.columns.get(field)


_REQUIRED_COLUMNS = ("dialogue_id", "turn_index", "system_text", "user_text")


def _parse_label(raw: Any, where: str) -> Optional[int]:
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    if isinstance(raw, bool):
        raise ValueError(f"{where}: label {raw!r} is not an integer")
    if isinstance(raw, int):
        value = raw
    else:
        try:
            value = int(str(raw).strip())
        except ValueError:
            raise ValueError(f"{where}: label {raw!r} is not an integer") from None
    if not IQ_MIN <= value <= IQ_MAX:
        raise ValueError(f"{where}: label {value} outside {IQ_MIN}..{IQ_MAX}")
    return value


def _assemble(dialogue_id: str, turns: list[dict[str, Any]], where: str) -> AnnotatedDialogue:
    turns = sorted(turns, key=lambda t: t["turn_index"])
    indices = [t["turn_index"] for t in turns]
    if len(set(indices)) != len(indices):
        raise ValueError(f"{where}: dialogue {dialogue_id!r} repeats a turn index")
    try:
        return AnnotatedDialogue(
            dialogue_id=dialogue_id,
            turns=[
                AnnotatedTurn(
                    turn_index=i,
                    system_text=t.get("system_text") or "",
                    user_text=t.get("user_text") or "",
                    iq=t.get("iq"),
                )
                for i, t in enumerate(turns)
            ],
        )
    except ValidationError as exc:
        raise ValueError(f"{where}: dialogue {dialogue_id!r}: {exc.errors()[0]['msg']}") from exc


def _load_jsonl(path: Path) -> list[AnnotatedDialogue]:
    dialogues = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: {exc.msg}") from exc
            if "dialogue_id" not in record or "turns" not in record:
                raise ValueError(f"{where}: record needs 'dialogue_id' and 'turns'")
            turns = []
            for turn in record["turns"]:
                if "turn_index" not in turn:
                    raise ValueError(f"{where}: turn without 'turn_index'")
                turns.append({**turn, "iq": _parse_label(turn.get("iq"), where)})
            dialogues.append(_assemble(str(record["dialogue_id"]), turns, where))
    return dialogues


def _load_table(path: Path, mapping: ColumnMapping) -> list[AnnotatedDialogue]:
    for field in _REQUIRED_COLUMNS:
        if mapping.column(field) is None:
            raise ValueError(f"column mapping does not name a column for {field!r}")
    grouped: dict[str, list[dict[str, Any]]] = {}
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle, delimiter=mapping.delimiter)
        header = reader.fieldnames or []
        for field, column in mapping.columns.items():
            if column not in header:
                raise ValueError(f"{path}: mapped column {column!r} (for {field}) is missing")
        iq_column = mapping.column("iq")
        for rownum, row in enumerate(reader, start=2):
            where = f"{path}: row {rownum}"
            raw_index = row[mapping.columns["turn_index"]]
            try:
                index = int(str(raw_index).strip())
            except ValueError:
                raise ValueError(f"{where}: turn index {raw_index!r} is not an integer") from None
            grouped.setdefault(row[mapping.columns["dialogue_id"]], []).append(
                {
                    "turn_index": index,
                    "system_text": row[mapping.columns["system_text"]],
                    "user_text": row[mapping.columns["user_text"]],
                    "iq": _parse_label(row[iq_column], where) if iq_column else None,
                }
            )
    return [_assemble(did, turns, str(path)) for did, turns in grouped.items()]


def load_corpus(
    path: Union[str, Path],
    column_mapping: Union[None, str, Path, Mapping[str, Any]] = None,
) -> list[AnnotatedDialogue]:
    """Read a JSONL corpus, or a delimited table when a mapping is given."""
    path = Path(path)
    if column_mapping is None:
        dialogues = _load_jsonl(path)
    else:
        if isinstance(column_mapping, Mapping):
            raw = dict(column_mapping)
        else:
            raw = json.loads(Path(column_mapping).read_text(encoding="utf-8"))
        dialogues = _load_table(path, ColumnMapping.model_validate(raw))
    logger.info("loaded %d dialogues from %s", len(dialogues), path)
    return dialogues


def save_corpus(dialogues: Iterable[AnnotatedDialogue], path: Union[str, Path]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for dialogue in dialogues:
            handle.write(dialogue.model_dump_json())
            handle.write("\n")


# --- Statistics ---


def _max_mean_median(values: Sequence[int]) -> tuple[int, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0, 0.0, 0.0
    return int(arr.max()), float(arr.mean()), float(np.median(arr))


def corpus_stats(dialogues: Sequence[AnnotatedDialogue]) -> CorpusStats:
    """Dialogue length (turns), turn length and tokens per dialogue."""
    lengths, turn_lengths, per_dialogue = [], [], []
    labels: Counter[int] = Counter()
    for dialogue in dialogues:
        lengths.append(len(dialogue.turns))
        total = 0
        for turn in dialogue.turns:
            n = len(tokenize(turn.system_text)) + len(tokenize(turn.user_text))
            turn_lengths.append(n)
            total += n
            if turn.iq is not None:
                labels[turn.iq] += 1
        per_dialogue.append(total)
    return CorpusStats(
        n_dialogues=len(dialogues),
        dialogue_length=_max_mean_median(lengths),
        turn_length=_max_mean_median(turn_lengths),
        tokens_per_dialogue=_max_mean_median(per_dialogue),
        label_counts=dict(sorted(labels.items())),
    )


# --- Synthesis ---


def synthesize_corpus(cfg: SynthConfig, domain: Optional[Any] = None) -> list[AnnotatedDialogue]:
    """Simulated, rule-labeled corpus with misunderstandings at ``cfg.error_rate``.

    Each dialogue chains sub-dialogues of a scripted system with the
    simulated user until its sampled length is reached. With probability
    ``error_rate`` a user reply is replaced by noise, and the next system
    turn is a reprompt. Labels come from :func:`iq_labels` over those events.
    """
    from .domain import load_domain
    from .env import HELLO, DialogueSession
    from .models import ActType, DialogueAct
    from .nlg import TemplateNlg
    from .policy import ActionSpace, ScriptedPolicy
    from .simulator import sample_goal

    spec = domain if domain is not None else load_domain(cfg.domain)
    actions = ActionSpace(spec)
    policy = ScriptedPolicy(actions)
    nlg = TemplateNlg(spec)
    reprompt = DialogueAct(act_type=ActType.REPEAT)
    corpus = []
    for i in range(cfg.n_dialogues):
        rng = np.random.default_rng([cfg.seed, i])
        length = int(np.clip(round(rng.gamma(2.0, cfg.mean_turns / 2.0)), 1, cfg.max_turns))
        records = []
        session: Optional[DialogueSession] = None
        pending_reprompt = False
        while len(records) < length:
            if session is None or session.success:
                session = DialogueSession(spec, sample_goal(spec, rng), rng, nlg)
                policy.begin_episode()
                act = HELLO
            elif pending_reprompt:
                act = reprompt
            else:
                choice = policy.select_action(session.summary(), actions.mask(session.belief), rng)
                act = actions.ground(choice, session.belief)
            token_target = int(np.clip(round(rng.gamma(4.0, cfg.mean_tokens / 4.0)), 1, cfg.max_tokens))
            pending_reprompt = bool(rng.random() < cfg.error_rate)
            session.step(act, garble=pending_reprompt)
            record = session.records[-1]
            # turn length counts both sides, so the system prompt is padded last
            user_tokens = len(tokenize(record.user_text))
            record.system_text = nlg.pad(
                record.system_text, token_target - user_tokens, cfg.max_tokens - user_tokens, rng
            )
            records.append(record)
        labels = iq_labels([r.trouble for r in records])
        corpus.append(
            AnnotatedDialogue(
                dialogue_id=f"synth-{cfg.seed}-{i:05d}",
                turns=[
                    AnnotatedTurn(turn_index=t, system_text=r.system_text, user_text=r.user_text, iq=labels[t])
                    for t, r in enumerate(records)
                ],
            )
        )
    logger.info("synthesized %d dialogues (error rate %.2f, seed %d)", len(corpus), cfg.error_rate, cfg.seed)
    return corpus
