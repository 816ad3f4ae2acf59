"""Goal-driven, noise-free simulated user."""

from __future__ import annotations

from collections.abc import Collection
from typing import Optional, Union

import numpy as np

from .domain import DomainSpec
from .models import ActType, DialogueAct, UserGoal

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_goal(domain: DomainSpec, seed: SeedLike) -> UserGoal:
    """Uniform over database entities, so every goal has a match."""
    if domain.db_size == 0:
        raise ValueError(f"domain {domain.name!r} has an empty database; cannot sample a goal")
    row = int(_rng(seed).integers(domain.db_size))
    return UserGoal(constraints=domain.entity(row))


def user_respond(
    goal: UserGoal,
    system_act: DialogueAct,
    previous: Optional[DialogueAct] = None,
    informed: Collection[str] = (),
) -> DialogueAct:
    """Deterministic reply to one system act.

    ``previous`` is the user's last act (re-issued on a repeat request) and
    ``informed`` the slots already given, used to answer a greeting.
    """
    wanted = goal.constraints
    kind = system_act.act_type
    if kind is ActType.REPEAT and previous is not None:
        return previous
    if kind in (ActType.HELLO, ActType.REPEAT):
        slot = next((s for s in wanted if s not in informed), next(iter(wanted)))
        return DialogueAct(act_type=ActType.INFORM, values={slot: wanted[slot]})
    if kind is ActType.REQUEST:
        slot = system_act.slot
        if slot not in wanted:
            raise KeyError(f"system requested unknown slot {slot!r}")
        return DialogueAct(act_type=ActType.INFORM, values={slot: wanted[slot]})
    if kind is ActType.CONFIRM:
        correct = wanted.get(system_act.slot)  # type: ignore[arg-type]
        if system_act.value == correct:
            return DialogueAct(act_type=ActType.AFFIRM)
        return DialogueAct(act_type=ActType.DENY, values={system_act.slot: correct})  # type: ignore[dict-item]
    if kind is ActType.INFORM:
        offered = system_act.values
        if offered and all(offered.get(s) == v for s, v in wanted.items()):
            return DialogueAct(act_type=ActType.BYE)
        return DialogueAct(act_type=ActType.DENY)
    if kind is ActType.BYE:
        # The task is not done yet.
        return DialogueAct(act_type=ActType.DENY)
    raise ValueError(f"the user cannot answer a system {kind.value!r} act")


class UserSimulator:
    """Stateful wrapper around :func:`user_respond` for one goal."""

    def __init__(self, goal: UserGoal):
        self.goal = goal
        self.last_act: Optional[DialogueAct] = None
        self.informed: set[str] = set()

    def respond(self, system_act: DialogueAct) -> DialogueAct:
        act = user_respond(self.goal, system_act, self.last_act, self.informed)
        self.informed.update(act.values)
        self.last_act = act
        return act
