"""Template surface generation for system and simulated-user acts.

Each template key has at least three paraphrases; the choice is drawn from
the caller's generator so transcripts are reproducible under a seed.
Placeholders: {slot} (lexical slot name), {value}, {values} (slot-value
list), {entity} and {payload} (system informs).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Literal, Optional

import numpy as np

from .corpus import tokenize
from .domain import DomainSpec
from .models import ActType, DialogueAct

Side = Literal["system", "user"]

SYSTEM_TEMPLATES: dict[str, tuple[str, ...]] = {
    "hello": (
        "Welcome. How may I help you?",
        "Hello, this is the information line. What can I do for you?",
        "Hi there. Tell me what you are looking for.",
    ),
    "request": (
        "What is your {slot}?",
        "Please tell me the {slot}.",
        "Which {slot} do you need?",
        "Could you give me the {slot}?",
    ),
    "confirm": (
        "You want {value} as the {slot}, is that right?",
        "So the {slot} is {value}?",
        "Just to check, {value} for the {slot}?",
    ),
    "inform": (
        "I found a match: {entity}. {payload}",
        "Here is what I have: {entity}. {payload}",
        "There is one with {entity}. {payload}",
    ),
    "inform_none": (
        "There is nothing matching those constraints.",
        "I have no entry that fits your request.",
        "No result fits what you asked for.",
    ),
    "repeat": (
        "Sorry, I did not catch that.",
        "Sorry, could you say that again?",
        "I am sorry, I did not understand. Please repeat.",
    ),
    "bye": (
        "Thank you for calling. Goodbye.",
        "Goodbye and have a nice day.",
        "Thanks, goodbye.",
    ),
}

USER_TEMPLATES: dict[str, tuple[str, ...]] = {
    "hello": (
        "Hello.",
        "Hi.",
        "Hello there.",
    ),
    "inform": (
        "{values}.",
        "I need {values}.",
        "It is {values}.",
        "Make that {values}.",
    ),
    "affirm": (
        "Yes.",
        "Yes, that is right.",
        "Correct.",
    ),
    "deny": (
        "No, that is wrong.",
        "No, that is not what I want.",
        "No.",
    ),
    "deny_inform": (
        "No, I said {values}.",
        "No, it should be {values}.",
        "Wrong, I need {values}.",
    ),
    "bye": (
        "Thank you, goodbye.",
        "Great, bye.",
        "That is all, goodbye.",
    ),
    "garbled": (
        "uh um the the",
        "hmm noise what um",
        "um uh i i the",
        "noise noise uh",
    ),
}

# Long help prompts of the kind a telephone system reads out; they pad system
# turns to realistic lengths and carry no quality signal.
SYSTEM_FILLERS: tuple[str, ...] = (
    "You can say start over at any time.",
    "For help, just say help.",
    "To go back one step, say go back.",
    "This call may be recorded for quality purposes.",
    "Please speak after the tone.",
    "You can also ask for the next or the previous result.",
    "Our information is updated every week.",
    "At any point you can say main menu.",
    "Please keep your answers short.",
)

MIN_TEMPLATES_PER_KEY = 3


def template_key(act: DialogueAct, side: Side) -> str:
    if side == "system" and act.act_type is ActType.INFORM and not act.values:
        return "inform_none"
    if side == "user" and act.act_type is ActType.DENY and act.values:
        return "deny_inform"
    return act.act_type.value


class TemplateNlg:
    """Renders DialogueActs for one domain."""

    def __init__(
        self,
        domain: DomainSpec,
        system_templates: Optional[Mapping[str, Sequence[str]]] = None,
        user_templates: Optional[Mapping[str, Sequence[str]]] = None,
    ):
        self.domain = domain
        self.templates: dict[str, Mapping[str, Sequence[str]]] = {
            "system": system_templates if system_templates is not None else SYSTEM_TEMPLATES,
            "user": user_templates if user_templates is not None else USER_TEMPLATES,
        }

    def _lex(self, slot: str) -> str:
        return self.domain.slot(slot).lex

    def _values_text(self, values: Mapping[str, str]) -> str:
        return " and ".join(f"{value} for the {self._lex(slot)}" for slot, value in values.items())

    def generate(self, act: DialogueAct, side: Side, rng: np.random.Generator) -> str:
        key = template_key(act, side)
        options = self.templates[side].get(key)
        if not options:
            raise KeyError(f"no {side} template for act {key!r}")
        template = options[int(rng.integers(len(options)))]
        fields = {
            "slot": self._lex(act.slot) if act.slot else "",
            "value": act.value or "",
            "values": self._values_text(act.values),
            "entity": ", ".join(f"{self._lex(s)} {v}" for s, v in act.values.items()),
            "payload": act.payload or "",
        }
        return " ".join(template.format(**fields).split())

    def pad(self, text: str, target_tokens: int, max_tokens: int, rng: np.random.Generator) -> str:
        """Append filler prompts toward ``target_tokens`` without passing ``max_tokens``.

        A filler is only added when it leaves the count closer to the target.
        """
        count = len(tokenize(text))
        order = rng.permutation(len(SYSTEM_FILLERS))
        parts = [text]
        for i in order:
            gap = target_tokens - count
            if gap <= 0:
                break
            extra = len(tokenize(SYSTEM_FILLERS[i]))
            if count + extra > max_tokens or extra - gap > gap:
                continue
            parts.append(SYSTEM_FILLERS[i])
            count += extra
        return " ".join(parts)


def nlg(act: DialogueAct, side: Side, rng: np.random.Generator, domain: DomainSpec) -> str:
    return TemplateNlg(domain).generate(act, side, rng)
