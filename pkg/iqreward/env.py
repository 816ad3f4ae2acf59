"""Episode loop: policy, template NLG, simulated user, focus tracker, rewards.

Every episode opens with a fixed system greeting (counted as a turn) and ends
when the user says goodbye after a correct inform, or at ``max_turns``.
Each system turn costs ``turn_penalty``; the terminal bonus is
``success_bonus * success`` (task-success reward) or
``(iq - 1) * iq_scale`` with iq from the estimator (IQ reward), so the
per-step rewards always sum to the episode return.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Optional, Sequence, Union

import numpy as np

from .config import RewardConfig
from .corpus import final_iq as rule_final_iq
from .domain import DomainSpec
from .models import ActType, AnnotatedDialogue, AnnotatedTurn, DialogueAct, EpisodeResult, UserGoal
from .nlg import TemplateNlg
from .policy import ActionSpace, BasePolicy, GpSarsaPolicy, Point
from .simulator import UserSimulator, sample_goal
from .tracker import BeliefState, summarize_with_db, track_turn

if TYPE_CHECKING:
    from .estimator import BaseEstimator

logger = logging.getLogger(__name__)

EpisodeMode = Literal["train", "eval"]
SeedLike = Union[int, Sequence[int], np.random.Generator]

HELLO = DialogueAct(act_type=ActType.HELLO)


def _check_iq(iq: int) -> None:
    if not 1 <= iq <= 5:
        raise ValueError(f"iq must lie in [1, 5], got {iq}")


def _check_turns(turns: int) -> None:
    if turns < 1:
        raise ValueError(f"an episode has at least one turn, got T={turns}")


def reward_ts(turns: int, success: bool, config: Optional[RewardConfig] = None) -> float:
    cfg = config or RewardConfig()
    _check_turns(turns)
    return cfg.turn_penalty * turns + (cfg.success_bonus if success else 0.0)


def reward_iq(turns: int, iq: int, config: Optional[RewardConfig] = None) -> float:
    cfg = config or RewardConfig()
    _check_turns(turns)
    _check_iq(iq)
    return cfg.turn_penalty * turns + (iq - 1) * cfg.iq_scale


def is_trouble(system_act: DialogueAct, heard: DialogueAct) -> bool:
    """Misunderstanding or reprompt: garbled or denied user turn, system
    repeat, or a system goodbye before the task is done."""
    return heard.act_type in (ActType.GARBLED, ActType.DENY) or system_act.act_type in (ActType.REPEAT, ActType.BYE)


@dataclass
class TurnRecord:
    system_act: DialogueAct
    user_act: DialogueAct
    system_text: str
    user_text: str
    trouble: bool


class DialogueSession:
    """One dialogue between a system and the simulated user, turn by turn."""

    def __init__(
        self,
        domain: DomainSpec,
        goal: UserGoal,
        rng: np.random.Generator,
        nlg: Optional[TemplateNlg] = None,
    ):
        self.domain = domain
        self.goal = goal
        self.rng = rng
        self.nlg = nlg or TemplateNlg(domain)
        self.user = UserSimulator(goal)
        self.belief = BeliefState.initial(domain)
        self.records: list[TurnRecord] = []
        self.success = False

    @property
    def num_turns(self) -> int:
        return len(self.records)

    @property
    def trouble(self) -> list[bool]:
        return [r.trouble for r in self.records]

    def step(self, system_act: DialogueAct, *, garble: bool = False, system_text: Optional[str] = None) -> DialogueAct:
        """Render the system act, let the user answer, track the belief.

        With ``garble`` the user's real answer is lost in noise: the surface
        text comes from the noise templates and the tracker hears nothing.
        """
        text = system_text if system_text is not None else self.nlg.generate(system_act, "system", self.rng)
        answer = self.user.respond(system_act)
        heard = DialogueAct(act_type=ActType.GARBLED) if garble else answer
        user_text = self.nlg.generate(heard, "user", self.rng)
        self.belief = track_turn(self.belief, system_act, heard)
        if heard.act_type is ActType.BYE:
            self.success = True
        self.records.append(TurnRecord(system_act, heard, text, user_text, is_trouble(system_act, heard)))
        return heard

    def summary(self) -> np.ndarray:
        return summarize_with_db(self.belief)

    def transcript(self, dialogue_id: str, labels: Optional[Sequence[Optional[int]]] = None) -> AnnotatedDialogue:
        return AnnotatedDialogue(
            dialogue_id=dialogue_id,
            turns=[
                AnnotatedTurn(
                    turn_index=i,
                    system_text=r.system_text,
                    user_text=r.user_text,
                    iq=labels[i] if labels is not None else None,
                )
                for i, r in enumerate(self.records)
            ],
        )


def check_components(policy: BasePolicy, domain: DomainSpec, actions: ActionSpace) -> None:
    if actions.domain is not domain:
        raise ValueError("action space was built for a different domain")
    if isinstance(policy, GpSarsaPolicy):
        width = summarize_with_db(BeliefState.initial(domain)).size
        if policy.num_actions != len(actions) or policy.summary_dim != width:
            raise ValueError(
                f"policy expects {policy.num_actions} actions / summary width {policy.summary_dim}, "
                f"domain {domain.name!r} has {len(actions)} / {width}"
            )


def run_episode(
    policy: BasePolicy,
    domain: DomainSpec,
    reward_cfg: RewardConfig,
    estimator: Optional["BaseEstimator"] = None,
    mode: EpisodeMode = "eval",
    seed: SeedLike = 0,
    *,
    episode_id: Optional[str] = None,
    action_space: Optional[ActionSpace] = None,
) -> EpisodeResult:
    """Simulate one dialogue.

    In ``train`` mode actions are drawn by posterior sampling and every step
    is fed to the policy; ``eval`` acts greedily and leaves the policy alone.
    """
    actions = action_space or ActionSpace(domain)
    check_components(policy, domain, actions)
    if reward_cfg.kind == "iq" and estimator is None:
        raise ValueError("the IQ reward needs an estimator")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    episode_id = episode_id or "episode"
    learn = mode == "train" and policy.learns
    select_mode = "sample" if mode == "train" else "greedy"

    session = DialogueSession(domain, sample_goal(domain, rng), rng)
    session.step(HELLO)
    rewards = [reward_cfg.turn_penalty]
    policy.begin_episode()
    previous: Optional[Point] = None
    while not session.success and session.num_turns < reward_cfg.max_turns:
        summary = session.summary()
        action = policy.select_action(summary, actions.mask(session.belief), rng, select_mode)
        current = (summary, action)
        if learn and previous is not None:
            policy.observe_step(previous, reward_cfg.turn_penalty, current)
        session.step(actions.ground(action, session.belief))
        rewards.append(reward_cfg.turn_penalty)
        previous = current

    turns = session.num_turns
    transcript = session.transcript(episode_id)
    trouble = session.trouble
    if reward_cfg.kind == "ts":
        iq = rule_final_iq(trouble)
        bonus = reward_cfg.success_bonus if session.success else 0.0
        episode_return = reward_ts(turns, session.success, reward_cfg)
    else:
        assert estimator is not None
        iq = estimator.estimate(transcript, trouble=trouble, episode_id=episode_id)
        bonus = (iq - 1) * reward_cfg.iq_scale
        episode_return = reward_iq(turns, iq, reward_cfg)
    rewards[-1] += bonus
    if learn and previous is not None:
        policy.observe_step(previous, reward_cfg.turn_penalty + bonus, None)
    logger.debug("%s: T=%d success=%s iq=%d return=%g", episode_id, turns, session.success, iq, episode_return)
    return EpisodeResult(
        episode_id=episode_id,
        turns=turns,
        success=session.success,
        final_iq=iq,
        reward_kind=reward_cfg.kind,
        episode_return=episode_return,
        transcript=transcript,
        trouble=trouble,
        rewards=rewards,
    )
