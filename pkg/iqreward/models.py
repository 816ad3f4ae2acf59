from __future__ import annotations

from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


class AnnotatedTurn(BaseModel):
    """One system utterance and the user reply that follows it.

    ``iq`` is the Interaction Quality label of the system turn (1 = poor,
    5 = good); unlabeled turns are allowed for inference-only data.
    """

    turn_index: int = Field(ge=0)
    system_text: str = ""
    user_text: str = ""
    iq: Optional[int] = Field(default=None, ge=1, le=5)


class AnnotatedDialogue(BaseModel):
    """A transcript: turns in order, indices contiguous from 0."""

    dialogue_id: str
    turns: list[AnnotatedTurn]

    @model_validator(mode="after")
    def _check_turns(self) -> "AnnotatedDialogue":
        if not self.turns:
            raise ValueError(f"dialogue {self.dialogue_id!r} has no turns")
        for expected, turn in enumerate(self.turns):
            if turn.turn_index != expected:
                raise ValueError(
                    f"dialogue {self.dialogue_id!r}: turn_index {turn.turn_index} at position {expected}"
                )
        return self

    @property
    def labels(self) -> list[Optional[int]]:
        return [t.iq for t in self.turns]


class ActType(str, Enum):
    HELLO = "hello"
    REQUEST = "request"
    INFORM = "inform"
    CONFIRM = "confirm"
    AFFIRM = "affirm"
    DENY = "deny"
    REPEAT = "repeat"
    BYE = "bye"
    GARBLED = "garbled"


ACT_TYPES: tuple[ActType, ...] = tuple(ActType)


class DialogueAct(BaseModel):
    """A typed dialogue act.

    ``slot``/``value`` carry request and confirm targets; ``values`` is the
    slot-value payload of informs and denials. A system inform may carry a
    ``payload`` string (e.g. a bus schedule) for the matched entity.
    """

    act_type: ActType
    slot: Optional[str] = None
    value: Optional[str] = None
    values: dict[str, str] = Field(default_factory=dict)
    payload: Optional[str] = None

    @model_validator(mode="after")
    def _check_payload(self) -> "DialogueAct":
        if self.act_type is ActType.REQUEST and self.slot is None:
            raise ValueError("request needs a slot")
        if self.act_type is ActType.CONFIRM and (self.slot is None or self.value is None):
            raise ValueError("confirm needs a slot and a value")
        return self

    def label(self) -> str:
        if self.act_type in (ActType.REQUEST, ActType.CONFIRM):
            return f"{self.act_type.value}({self.slot})"
        return self.act_type.value


class UserGoal(BaseModel):
    """One value per constraint slot of the active domain."""

    constraints: dict[str, str]


class EpisodeResult(BaseModel):
    """Outcome of one simulated dialogue.

    ``turns`` is the number of system turns T; ``episode_return`` equals
    ``-T + 20 * success`` for the task-success reward and
    ``-T + (final_iq - 1) * 5`` for the IQ reward.
    """

    episode_id: str
    turns: int = Field(ge=1)
    success: bool
    final_iq: int = Field(ge=1, le=5)
    reward_kind: Literal["ts", "iq"]
    episode_return: float
    transcript: AnnotatedDialogue
    trouble: list[bool] = Field(default_factory=list)
    rewards: list[float] = Field(default_factory=list)


class IqPrediction(BaseModel):
    """Class distribution over IQ 1..5 and its argmax (ties go low)."""

    probs: list[float]
    iq: int = Field(ge=1, le=5)


class CorpusStats(BaseModel):
    """Shape statistics in the layout of the corpus table: max/mean/median."""

    n_dialogues: int
    dialogue_length: tuple[int, float, float]
    turn_length: tuple[int, float, float]
    tokens_per_dialogue: tuple[int, float, float]
    label_counts: dict[int, int] = Field(default_factory=dict)


# --- Estimation wire protocol ---


class TurnText(BaseModel):
    system_text: str = ""
    user_text: str = ""


class EstimateRequest(BaseModel):
    id: str
    turns: list[TurnText] = Field(min_length=1)


class EstimateResponse(BaseModel):
    id: Optional[str]
    iq: Optional[int] = Field(default=None, ge=1, le=5)
    probs: Optional[list[float]] = None
    error: Optional[str] = None


# --- Result records written by the experiment driver ---


class IqFoldResult(BaseModel):
    fold: int
    n_train: int
    n_test: int
    best_epoch: int


class IqRunResult(BaseModel):
    """Pooled cross-validation scores of one IQ model configuration."""

    kind: Literal["iq"] = "iq"
    model: str = "BiGRU"
    max_context_turns: int
    n_dialogues: int
    n_turns: int
    uar: float
    kappa: float
    rho: Optional[float]
    folds: list[IqFoldResult] = Field(default_factory=list)


class RlSeedResult(BaseModel):
    seed: int
    success_rate: float
    avg_turns: float
    avg_return: float
    avg_final_iq: float
    dictionary_size: int


class RlRunResult(BaseModel):
    """Per-seed evaluation of one (domain, reward, estimator) setting."""

    kind: Literal["rl"] = "rl"
    domain: str
    reward: Literal["ts", "iq"]
    estimator: str
    n_train_dialogues: int
    n_eval_dialogues: int
    seeds: list[RlSeedResult]
