"""Tests for template surface generation."""

import numpy as np
import pytest

from iqreward.corpus import tokenize
from iqreward.domain import load_domain
from iqreward.models import ActType, DialogueAct
from iqreward.nlg import (
    MIN_TEMPLATES_PER_KEY,
    SYSTEM_TEMPLATES,
    USER_TEMPLATES,
    TemplateNlg,
    nlg,
    template_key,
)
from iqreward.policy import ActionSpace
from iqreward.tracker import BeliefState, track_turn


def _make_nlg(name="letsgo4"):
    return TemplateNlg(load_domain(name))


def test_request_names_the_slot():
    text = _make_nlg().generate(DialogueAct(act_type=ActType.REQUEST, slot="time"), "system", np.random.default_rng(0))
    assert "travel time" in text


def test_same_seed_same_text():
    act = DialogueAct(act_type=ActType.CONFIRM, slot="origin", value="downtown")
    domain = load_domain("letsgo4")
    first = nlg(act, "system", np.random.default_rng(3), domain)
    assert first == nlg(act, "system", np.random.default_rng(3), domain)
    assert "downtown" in first


def test_every_key_has_enough_paraphrases():
    for templates in (SYSTEM_TEMPLATES, USER_TEMPLATES):
        for key, options in templates.items():
            assert len(set(options)) >= MIN_TEMPLATES_PER_KEY, key


def test_every_grounded_system_action_renders():
    domain = load_domain("camrestaurants3")
    actions = ActionSpace(domain)
    generator = TemplateNlg(domain)
    belief = track_turn(
        BeliefState.initial(domain), None, DialogueAct(act_type=ActType.INFORM, values=domain.entity(3))
    )
    rng = np.random.default_rng(1)
    for index in range(len(actions)):
        act = actions.ground(index, belief)
        assert len(SYSTEM_TEMPLATES[template_key(act, "system")]) >= MIN_TEMPLATES_PER_KEY
        assert generator.generate(act, "system", rng).strip()


def test_user_acts_render():
    generator = _make_nlg()
    rng = np.random.default_rng(2)
    deny = DialogueAct(act_type=ActType.DENY, values={"route": "61c"})
    assert template_key(deny, "user") == "deny_inform"
    assert "61c for the bus route" in generator.generate(deny, "user", rng)
    garbled = generator.generate(DialogueAct(act_type=ActType.GARBLED), "user", rng)
    assert garbled in USER_TEMPLATES["garbled"]


def test_empty_inform_uses_no_match_templates():
    act = DialogueAct(act_type=ActType.INFORM)
    assert template_key(act, "system") == "inform_none"
    text = _make_nlg().generate(act, "system", np.random.default_rng(0))
    assert text in SYSTEM_TEMPLATES["inform_none"]


def test_missing_template_names_act():
    generator = TemplateNlg(load_domain("letsgo4"), system_templates={"hello": ("Hi.",)})
    with pytest.raises(KeyError, match="repeat"):
        generator.generate(DialogueAct(act_type=ActType.REPEAT), "system", np.random.default_rng(0))


def test_pad_stays_within_limits():
    generator = _make_nlg()
    rng = np.random.default_rng(4)
    text = generator.pad("What is your bus route?", target_tokens=20, max_tokens=30, rng=rng)
    count = len(tokenize(text))
    assert text.startswith("What is your bus route?")
    assert 5 <= count <= 30
    assert generator.pad("Hello.", target_tokens=1, max_tokens=5, rng=rng) == "Hello."
