"""Tests for the keyword matcher and the text chat loop."""

import tempfile
from pathlib import Path

import pytest

from iqreward.chat import KeywordMatcher, run_chat
from iqreward.corpus import load_corpus, save_corpus
from iqreward.domain import load_domain
from iqreward.models import ActType, DialogueAct
from iqreward.policy import ActionSpace, ScriptedPolicy


@pytest.fixture(scope="module")
def cam():
    return load_domain("camrestaurants3")


@pytest.fixture(scope="module")
def letsgo():
    return load_domain("letsgo4")


def _scripted_input(lines):
    """input() stand-in that raises EOFError once the lines run out."""
    queue = list(lines)
    prompts = []

    def read(prompt):
        prompts.append(prompt)
        if not queue:
            raise EOFError
        return queue.pop(0)

    read.prompts = prompts
    return read


# --- Matching ---


def test_longest_match_wins(cam):
    matcher = KeywordMatcher(cam)
    assert matcher.values("north american food please") == {"food": "north american"}
    assert matcher.values("modern european in the north") == {"food": "modern european", "area": "north"}


def test_shared_values_follow_the_question(letsgo):
    matcher = KeywordMatcher(letsgo)
    assert matcher.values("from oakland to downtown") == {"origin": "oakland", "destination": "downtown"}
    assert matcher.values("from oakland to downtown", prefer_slot="destination") == {
        "destination": "oakland",
        "origin": "downtown",
    }


def test_parse_request_answer(letsgo):
    matcher = KeywordMatcher(letsgo)
    asked = DialogueAct(act_type=ActType.REQUEST, slot="destination")
    act = matcher.parse("Squirrel Hill, please.", asked)
    assert act.act_type is ActType.INFORM
    assert act.values == {"destination": "squirrel hill"}


def test_parse_confirmation_answers(cam):
    matcher = KeywordMatcher(cam)
    confirm = DialogueAct(act_type=ActType.CONFIRM, slot="area", value="north")
    assert matcher.parse("yes that's right", confirm).act_type is ActType.AFFIRM
    denied = matcher.parse("no, the south", confirm)
    assert denied.act_type is ActType.DENY
    assert denied.values == {"area": "south"}
    # yes/no outside a confirmation carries nothing
    assert matcher.parse("yes", DialogueAct(act_type=ActType.HELLO)).act_type is ActType.GARBLED


def test_parse_bye_and_noise(cam):
    matcher = KeywordMatcher(cam)
    assert matcher.parse("ok goodbye then thai").act_type is ActType.BYE
    assert matcher.parse("hmm what").act_type is ActType.GARBLED


# --- Chat loop ---


def test_chat_ends_on_end_of_input(cam):
    read = _scripted_input(["cheap thai food", "north"])
    shown = []
    result = run_chat(ScriptedPolicy(ActionSpace(cam)), cam, input_fn=read, output_fn=shown.append)
    turns = result.transcript.turns
    assert len(turns) == 3
    assert [t.user_text for t in turns] == ["cheap thai food", "north", "bye"]
    assert result.ended_by_user
    assert len(result.trouble) == 3
    assert all(line.startswith("SYSTEM: ") for line in shown)
    assert read.prompts == ["USER: "] * 3


def test_chat_stops_at_max_turns(cam):
    shown = []
    result = run_chat(
        ScriptedPolicy(ActionSpace(cam)), cam,
        input_fn=lambda prompt: "hmm", output_fn=shown.append, max_turns=3,
    )
    assert len(result.transcript.turns) == 3
    assert not result.ended_by_user
    assert result.trouble == [True, True, True]
    assert "run out of time" in shown[-1]


def test_chat_transcript_loads_back(cam):
    result = run_chat(
        ScriptedPolicy(ActionSpace(cam)), cam,
        input_fn=_scripted_input(["centre", "indian", "bye"]), output_fn=lambda line: None,
        dialogue_id="chat-7",
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "chat.jsonl"
        save_corpus([result.transcript], path)
        (loaded,) = load_corpus(path)
    assert loaded.dialogue_id == "chat-7"
    assert loaded == result.transcript
    assert loaded.labels == [None, None, None]
