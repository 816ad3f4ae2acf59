"""Tests for corpus files, the IQ rule, vocabularies, folds and synthesis."""

import json
import tempfile
from pathlib import Path

import pytest

from iqreward.config import SynthConfig
from iqreward.corpus import (
    SEP_TOKEN,
    UNK_TOKEN,
    Vocab,
    build_vocab,
    corpus_stats,
    final_iq,
    iq_labels,
    load_corpus,
    make_folds,
    save_corpus,
    synthesize_corpus,
    tokenize,
    turn_tokens,
)
from iqreward.models import AnnotatedDialogue, AnnotatedTurn

MAPPING = {
    "delimiter": ";",
    "columns": {
        "dialogue_id": "call",
        "turn_index": "exchange",
        "system_text": "prompt",
        "user_text": "asr",
        "iq": "iq_score",
    },
}


def _make_dialogue(dialogue_id, texts, labels=None):
    labels = labels or [None] * len(texts)
    return AnnotatedDialogue(
        dialogue_id=dialogue_id,
        turns=[
            AnnotatedTurn(turn_index=i, system_text=s, user_text=u, iq=iq)
            for i, ((s, u), iq) in enumerate(zip(texts, labels))
        ],
    )


def _write_table(tmp, rows, header="call;exchange;prompt;asr;iq_score"):
    path = Path(tmp) / "calls.csv"
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


# --- Tokens ---


def test_tokenize():
    assert tokenize("Hello, World! The 61C leaves at 5 pm.") == ["hello", "world", "the", "61c", "leaves", "at", "5", "pm"]
    assert tokenize("  ") == []


def test_turn_tokens_insert_separator():
    turn = AnnotatedTurn(turn_index=0, system_text="Where to?", user_text="Oakland")
    assert turn_tokens(turn) == ["where", "to", SEP_TOKEN, "oakland"]


# --- IQ rule ---


def test_clean_dialogue_stays_at_five():
    assert iq_labels([False] * 8) == [5] * 8
    assert final_iq([False] * 8) == 5


def test_constant_trouble_walks_down():
    assert iq_labels([True] * 7) == [5, 4, 3, 2, 1, 1, 1]
    assert final_iq([True] * 7) == 1


def test_recovery_after_three_clean_turns():
    assert iq_labels([True, False, False, False, False]) == [5, 4, 4, 4, 5]
    assert final_iq([True, True, False, False, False]) == 4


# --- Vocabulary ---


def test_empty_corpus_vocab():
    assert build_vocab([]).tokens == [UNK_TOKEN]


def test_vocab_ties_are_lexicographic():
    vocab = build_vocab([_make_dialogue("d", [("b a", "")])])
    assert vocab.tokens == [UNK_TOKEN, SEP_TOKEN, "a", "b"]


def test_vocab_orders_by_frequency_and_min_count():
    corpus = [_make_dialogue("d", [("bus bus next", "bus"), ("next stop", "")])]
    vocab = build_vocab(corpus)
    assert vocab.tokens[:4] == [UNK_TOKEN, "bus", SEP_TOKEN, "next"]
    assert build_vocab(corpus, min_count=3).tokens == [UNK_TOKEN, "bus"]


def test_vocab_encoding_and_validation():
    vocab = Vocab([UNK_TOKEN, "bus", SEP_TOKEN])
    assert vocab.encode(["bus", "tram", SEP_TOKEN]).tolist() == [1, 0, 2]
    assert "bus" in vocab and "tram" not in vocab
    with pytest.raises(ValueError):
        Vocab(["bus", UNK_TOKEN])
    with pytest.raises(ValueError):
        Vocab([UNK_TOKEN, "bus", "bus"])


# --- Folds ---


def _ids(n):
    return [_make_dialogue(f"d{i:03d}", [("hi", "hi")]) for i in range(n)]


def test_singleton_folds():
    folds = make_folds(_ids(10), k=10)
    assert all(len(f) == 1 for f in folds)
    assert sorted(f[0] for f in folds) == [f"d{i:03d}" for i in range(10)]


def test_folds_are_balanced_and_disjoint():
    folds = make_folds(_ids(400), k=10, seed=3)
    assert [len(f) for f in folds] == [40] * 10
    flat = [d for f in folds for d in f]
    assert len(set(flat)) == 400
    assert make_folds(_ids(400), k=10, seed=3) == folds
    assert sorted(len(f) for f in make_folds(_ids(23), k=5)) == [4, 4, 5, 5, 5]


def test_too_few_dialogues_for_folds():
    with pytest.raises(ValueError, match="cannot fill"):
        make_folds(_ids(3), k=4)


# --- Files ---


def test_jsonl_round_trip():
    corpus = [_make_dialogue("call-1", [("Where to?", "Oakland"), ("Leaving when?", "noon")], [5, 4])]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "corpus.jsonl"
        save_corpus(corpus, path)
        loaded = load_corpus(path)
    assert loaded == corpus
    assert loaded[0].labels == [5, 4]


def test_jsonl_out_of_order_turns_are_sorted():
    record = {
        "dialogue_id": "x",
        "turns": [
            {"turn_index": 7, "system_text": "second", "user_text": "b", "iq": 4},
            {"turn_index": 3, "system_text": "first", "user_text": "a", "iq": None},
        ],
    }
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "corpus.jsonl"
        path.write_text(json.dumps(record) + "\n")
        (dialogue,) = load_corpus(path)
    assert [t.system_text for t in dialogue.turns] == ["first", "second"]
    assert [t.turn_index for t in dialogue.turns] == [0, 1]
    assert dialogue.labels == [None, 4]


def test_jsonl_errors_name_line():
    good = json.dumps({"dialogue_id": "a", "turns": [{"turn_index": 0, "iq": 5}]})
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "corpus.jsonl"
        path.write_text(good + "\n{oops\n")
        with pytest.raises(ValueError, match=r"corpus\.jsonl:2"):
            load_corpus(path)
        path.write_text(json.dumps({"dialogue_id": "a", "turns": [{"turn_index": 0, "iq": 6}]}) + "\n")
        with pytest.raises(ValueError, match=r"corpus\.jsonl:1: label 6"):
            load_corpus(path)
        path.write_text(json.dumps({"dialogue_id": "a", "turns": [{"turn_index": 0, "iq": "high"}]}) + "\n")
        with pytest.raises(ValueError, match="not an integer"):
            load_corpus(path)


def test_table_with_mapping():
    rows = ["c1;1;Leaving when?;noon;4", "c1;0;Where to?;Oakland;5", "c2;0;Hello;;"]
    with tempfile.TemporaryDirectory() as tmp:
        corpus = load_corpus(_write_table(tmp, rows), MAPPING)
    assert [d.dialogue_id for d in corpus] == ["c1", "c2"]
    assert corpus[0].labels == [5, 4]
    assert corpus[0].turns[1].user_text == "noon"
    assert corpus[1].labels == [None]


def test_table_mapping_from_file():
    with tempfile.TemporaryDirectory() as tmp:
        mapping = Path(tmp) / "mapping.json"
        mapping.write_text(json.dumps(MAPPING))
        corpus = load_corpus(_write_table(tmp, ["c1;0;Hi;Hello;3"]), mapping)
    assert corpus[0].labels == [3]


def test_table_label_out_of_range_names_row():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_table(tmp, ["c1;0;Hi;Hello;5", "c1;1;Hi;Hello;6"])
        with pytest.raises(ValueError, match="row 3"):
            load_corpus(path, MAPPING)


def test_table_non_integer_label_names_row():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_table(tmp, ["c1;0;Hi;Hello;good"])
        with pytest.raises(ValueError, match="row 2: label 'good' is not an integer"):
            load_corpus(path, MAPPING)


def test_table_missing_column_named():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_table(tmp, ["c1;0;Hi;Hello"], header="call;exchange;prompt;asr")
        with pytest.raises(ValueError, match="'iq_score'"):
            load_corpus(path, MAPPING)


def test_table_duplicate_turn_index():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_table(tmp, ["c1;0;Hi;Hello;5", "c1;0;Hi;Again;5"])
        with pytest.raises(ValueError, match="repeats a turn index"):
            load_corpus(path, MAPPING)


# --- Statistics ---


def test_corpus_stats():
    corpus = [
        _make_dialogue("a", [("one two", "three"), ("four", "")], [5, 4]),
        _make_dialogue("b", [("one two three four", "five six")], [4]),
    ]
    stats = corpus_stats(corpus)
    assert stats.n_dialogues == 2
    assert stats.dialogue_length == (2, 1.5, 1.5)
    assert stats.turn_length == (6, pytest.approx(10 / 3), 3.0)
    assert stats.tokens_per_dialogue == (6, 5.0, 5.0)
    assert stats.label_counts == {4: 2, 5: 1}


# --- Synthesis ---


def _small_synth(**overrides):
    values = dict(n_dialogues=6, mean_turns=10, max_turns=30, mean_tokens=20, max_tokens=60, seed=2)
    values.update(overrides)
    return SynthConfig(**values)


def test_error_free_synthesis_is_all_fives():
    corpus = synthesize_corpus(_small_synth(error_rate=0.0))
    assert {t.iq for d in corpus for t in d.turns} == {5}


def test_synthesis_is_deterministic():
    assert synthesize_corpus(_small_synth()) == synthesize_corpus(_small_synth())
    assert synthesize_corpus(_small_synth()) != synthesize_corpus(_small_synth(seed=3))


def test_synthetic_labels_follow_the_rule():
    corpus = synthesize_corpus(_small_synth(error_rate=0.4, n_dialogues=10))
    labels = [t.iq for d in corpus for t in d.turns]
    assert len(set(labels)) > 1
    for d in corpus:
        for turn in d.turns:
            assert 1 <= turn.iq <= 5
        assert d.turns[0].iq == 5


def test_synthetic_shape_near_targets():
    synth = SynthConfig(n_dialogues=200, mean_turns=20, max_turns=60, mean_tokens=26, max_tokens=76, seed=5)
    stats = corpus_stats(synthesize_corpus(synth))
    assert stats.dialogue_length[0] <= 60
    assert abs(stats.dialogue_length[1] - 20) <= 0.2 * 20
    assert stats.turn_length[0] <= 76
    assert abs(stats.turn_length[1] - 26) <= 0.2 * 26


def test_synthetic_corpus_round_trips():
    corpus = synthesize_corpus(_small_synth(n_dialogues=3))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "synth.jsonl"
        save_corpus(corpus, path)
        assert load_corpus(path) == corpus
