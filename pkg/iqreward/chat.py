"""Text chat with a trained policy: a human plays the user.

Typed utterances are mapped to dialogue acts by keyword matching: exact
slot-value strings become informs, yes/no words answer confirmations, "bye"
ends the dialogue, and anything else is treated as garbled input.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import tokenize
from .domain import DomainSpec
from .env import HELLO, check_components, is_trouble
from .models import ActType, AnnotatedDialogue, AnnotatedTurn, DialogueAct
from .nlg import TemplateNlg
from .policy import ActionSpace, BasePolicy
from .tracker import BeliefState, summarize_with_db, track_turn

logger = logging.getLogger(__name__)

YES_WORDS = frozenset({"yes", "yeah", "yep", "right", "correct", "sure"})
NO_WORDS = frozenset({"no", "nope", "wrong", "not"})
BYE_WORDS = frozenset({"bye", "goodbye"})


class KeywordMatcher:
    """Maps free text to a user act for one domain."""

    def __init__(self, domain: DomainSpec):
        self.domain = domain
        self._phrases: list[tuple[tuple[str, ...], str, str]] = []
        for slot in domain.slots:
            for value in slot.values:
                tokens = tuple(tokenize(value))
                if tokens:
                    self._phrases.append((tokens, slot.name, value))

    def _mentions(self, tokens: list[str]) -> list[tuple[int, int, tuple[str, ...]]]:
        """(start, end, phrase) of every exact phrase occurrence."""
        found = []
        phrases = {p for p, _, _ in self._phrases}
        for phrase in phrases:
            n = len(phrase)
            for start in range(len(tokens) - n + 1):
                if tuple(tokens[start : start + n]) == phrase:
                    found.append((start, start + n, phrase))
        return found

    def values(self, text: str, prefer_slot: Optional[str] = None) -> dict[str, str]:
        """Slot values named in ``text``; longest non-overlapping matches win.

        A value shared by several slots goes to ``prefer_slot`` when it has
        that value, otherwise to the first such slot in domain order.
        """
        tokens = tokenize(text)
        taken = np.zeros(len(tokens), dtype=bool)
        chosen: list[tuple[str, ...]] = []
        for start, end, phrase in sorted(self._mentions(tokens), key=lambda m: (-(m[1] - m[0]), m[0])):
            if not taken[start:end].any():
                taken[start:end] = True
                chosen.append(phrase)
        values: dict[str, str] = {}
        for phrase in chosen:
            owners = [(slot, value) for p, slot, value in self._phrases if p == phrase and slot not in values]
            if not owners:
                continue
            preferred = [o for o in owners if o[0] == prefer_slot]
            slot, value = (preferred or owners)[0]
            values[slot] = value
        return values

    def parse(self, text: str, system_act: Optional[DialogueAct] = None) -> DialogueAct:
        words = set(tokenize(text))
        if words & BYE_WORDS:
            return DialogueAct(act_type=ActType.BYE)
        asked = system_act.slot if system_act is not None else None
        values = self.values(text, prefer_slot=asked)
        confirming = system_act is not None and system_act.act_type is ActType.CONFIRM
        if confirming and words & NO_WORDS:
            return DialogueAct(act_type=ActType.DENY, values=values)
        if confirming and words & YES_WORDS:
            return DialogueAct(act_type=ActType.AFFIRM)
        if values:
            return DialogueAct(act_type=ActType.INFORM, values=values)
        return DialogueAct(act_type=ActType.GARBLED)


@dataclass
class ChatResult:
    transcript: AnnotatedDialogue
    trouble: list[bool] = field(default_factory=list)
    ended_by_user: bool = False


def run_chat(
    policy: BasePolicy,
    domain: DomainSpec,
    *,
    input_fn: Callable[[str], str] = input,
    output_fn: Callable[[str], None] = print,
    rng: Optional[np.random.Generator] = None,
    max_turns: int = 25,
    dialogue_id: str = "chat",
) -> ChatResult:
    """Run one dialogue against a human; end of input counts as goodbye."""
    actions = ActionSpace(domain)
    check_components(policy, domain, actions)
    rng = rng if rng is not None else np.random.default_rng(0)
    nlg = TemplateNlg(domain)
    matcher = KeywordMatcher(domain)
    belief = BeliefState.initial(domain)
    turns: list[AnnotatedTurn] = []
    trouble: list[bool] = []
    ended = False
    system_act = HELLO
    policy.begin_episode()
    while True:
        system_text = nlg.generate(system_act, "system", rng)
        output_fn(f"SYSTEM: {system_text}")
        try:
            typed = input_fn("USER: ")
        except EOFError:
            typed = "bye"
        user_act = matcher.parse(typed, system_act)
        logger.debug("heard %s from %r", user_act.label(), typed)
        belief = track_turn(belief, system_act, user_act)
        trouble.append(is_trouble(system_act, user_act))
        turns.append(AnnotatedTurn(turn_index=len(turns), system_text=system_text, user_text=typed))
        if user_act.act_type is ActType.BYE:
            ended = True
            break
        if len(turns) >= max_turns:
            output_fn("SYSTEM: We have run out of time. Goodbye.")
            break
        choice = policy.select_action(summarize_with_db(belief), actions.mask(belief), rng, "greedy")
        system_act = actions.ground(choice, belief)
    return ChatResult(AnnotatedDialogue(dialogue_id=dialogue_id, turns=turns), trouble, ended)
