"""Summary actions and dialogue policies (scripted and GP-SARSA).

The GP-SARSA learner models Q over (summary belief, action) with the kernel
k((b1, a1), (b2, a2)) = <b1, b2> * [a1 == a2] and keeps a sparse dictionary
of representative points. It runs in the Monte-Carlo form for terminating
episodes: each visited point is projected onto the dictionary
(a_t = K~^-1 k~(x_t)) and regressed on its discounted return-to-go with
noise sigma^2. Statistics accumulate as

    P += a_t a_t^T / sigma^2,   b += a_t G_t / sigma^2

and the posterior is refreshed at every episode end:

    alpha~ = (I + P K~)^-1 b,   C~ = (I + P K~)^-1 P
    mean(x) = k~(x)^T alpha~,   var(x) = k(x, x) - k~(x)^T C~ k~(x) + sigma^2
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from scipy.linalg import solve

from .config import GpConfig
from .domain import DomainSpec
from .errors import CorruptFileError, ShapeError, VersionMismatchError
from .models import ActType, DialogueAct
from .tracker import BeliefState

logger = logging.getLogger(__name__)

Mode = Literal["greedy", "sample"]
Point = tuple[np.ndarray, int]

POLICY_FORMAT = "iqreward-gpsarsa"
POLICY_FORMAT_VERSION = 1

# Residuals below this fraction of k(x, x) count as linearly dependent.
_RELATIVE_RESIDUAL_FLOOR = 1e-10


@dataclass(frozen=True)
class SummaryAction:
    kind: Literal["request", "confirm", "inform", "repeat", "bye"]
    slot: Optional[str] = None

    @property
    def name(self) -> str:
        return f"{self.kind}({self.slot})" if self.slot else self.kind


class ActionSpace:
    """request(s) for every slot, confirm(s) for every slot, inform, repeat, bye."""

    def __init__(self, domain: DomainSpec):
        self.domain = domain
        actions = [SummaryAction("request", s) for s in domain.slot_names]
        actions += [SummaryAction("confirm", s) for s in domain.slot_names]
        actions += [SummaryAction("inform"), SummaryAction("repeat"), SummaryAction("bye")]
        self.actions: tuple[SummaryAction, ...] = tuple(actions)
        self._index = {a.name: i for i, a in enumerate(self.actions)}

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, index: int) -> SummaryAction:
        return self.actions[index]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown summary action {name!r}") from None

    def names(self) -> list[str]:
        return [a.name for a in self.actions]

    def mask(self, belief: BeliefState) -> np.ndarray:
        """Executable actions: confirm needs some mass on a real value,
        inform needs at least one filled slot."""
        filled = belief.filled()
        out = np.ones(len(self.actions), dtype=bool)
        for i, action in enumerate(self.actions):
            if action.kind == "confirm":
                out[i] = belief.top_value(action.slot)[1] > 0.0  # type: ignore[arg-type]
            elif action.kind == "inform":
                out[i] = bool(filled)
        return out

    def ground(self, index: int, belief: BeliefState) -> DialogueAct:
        """Turn a summary action into a full act against the belief and DB."""
        action = self.actions[index]
        if action.kind == "request":
            return DialogueAct(act_type=ActType.REQUEST, slot=action.slot)
        if action.kind == "confirm":
            value, _ = belief.top_value(action.slot)  # type: ignore[arg-type]
            if value is None:
                raise ValueError(f"cannot confirm {action.slot!r}: no value has any belief mass")
            return DialogueAct(act_type=ActType.CONFIRM, slot=action.slot, value=value)
        if action.kind == "inform":
            rows = self.domain.match_rows(belief.filled())
            if rows.size == 0:
                return DialogueAct(act_type=ActType.INFORM)
            row = int(rows[0])
            return DialogueAct(
                act_type=ActType.INFORM,
                values=self.domain.entity(row),
                payload=self.domain.payload(row) or None,
            )
        if action.kind == "repeat":
            return DialogueAct(act_type=ActType.REPEAT)
        return DialogueAct(act_type=ActType.BYE)


def kernel(x1: Point, x2: Point) -> float:
    """Linear belief kernel times Kronecker action kernel."""
    b1, a1 = x1
    b2, a2 = x2
    if b1.shape != b2.shape:
        raise ShapeError(f"summary vectors differ in length: {b1.shape} vs {b2.shape}")
    if a1 != a2:
        return 0.0
    return float(np.dot(b1, b2))


def _first_executable(mask: np.ndarray) -> np.ndarray:
    executable = np.flatnonzero(mask)
    if executable.size == 0:
        raise ValueError("no executable action: every action is masked")
    return executable


class BasePolicy(ABC):
    """Maps a summary belief to a summary action index.

    Learners override ``observe_step``; the episode driver feeds it one
    step at a time and signals the terminal step with ``x_next=None``.
    """

    name: str = "base"
    learns: bool = False

    def begin_episode(self) -> None:
        """Called before the first decision of every episode."""

    @abstractmethod
    def select_action(
        self,
        summary: np.ndarray,
        mask: np.ndarray,
        rng: np.random.Generator,
        mode: Mode = "greedy",
    ) -> int:
        ...

    def observe_step(self, x_t: Point, reward: float, x_next: Optional[Point]) -> None:
        """Learning hook; non-learning policies ignore it."""


class ScriptedPolicy(BasePolicy):
    """Requests every slot once in ontology order, then informs."""

    name = "scripted"

    def __init__(self, action_space: ActionSpace):
        self.action_space = action_space
        self._step = 0

    def begin_episode(self) -> None:
        self._step = 0

    def select_action(self, summary, mask, rng, mode="greedy") -> int:
        executable = _first_executable(mask)
        slots = self.action_space.domain.slot_names
        if self._step < len(slots):
            choice = self.action_space.index(f"request({slots[self._step]})")
        else:
            choice = self.action_space.index("inform")
        self._step += 1
        return choice if mask[choice] else int(executable[0])


class GpSarsaPolicy(BasePolicy):
    name = "gpsarsa"
    learns = True

    def __init__(self, num_actions: int, summary_dim: int, config: Optional[GpConfig] = None):
        self.config = config or GpConfig()
        self.num_actions = int(num_actions)
        self.summary_dim = int(summary_dim)
        self.points = np.zeros((0, self.summary_dim))
        self.actions = np.zeros(0, dtype=np.int64)
        self.gram = np.zeros((0, 0))
        self.k_inv = np.zeros((0, 0))
        self.precision = np.zeros((0, 0))
        self.target = np.zeros(0)
        self.alpha = np.zeros(0)
        self.c_matrix = np.zeros((0, 0))
        self.variance_clamps = 0
        self._episode: list[tuple[np.ndarray, float]] = []
        self._expected: Optional[Point] = None

    @property
    def dictionary_size(self) -> int:
        return int(self.actions.size)

    def _cross(self, summary: np.ndarray, action: int) -> np.ndarray:
        if summary.shape != (self.summary_dim,):
            raise ShapeError(f"summary has shape {summary.shape}, policy expects ({self.summary_dim},)")
        return (self.points @ summary) * (self.actions == action)

    def _latent(self, summary: np.ndarray, action: int) -> tuple[float, float]:
        kxx = float(summary @ summary)
        if self.dictionary_size == 0:
            return 0.0, kxx
        k = self._cross(summary, action)
        mean = float(k @ self.alpha)
        var = kxx - float(k @ self.c_matrix @ k)
        if var < 0.0:
            self.variance_clamps += 1
            if self.variance_clamps & (self.variance_clamps - 1) == 0:
                logger.warning("clamped negative GP variance %.3g (%d clamps so far)", var, self.variance_clamps)
            var = 0.0
        return mean, var

    def q_posterior(self, summary: np.ndarray, action: int) -> tuple[float, float]:
        """Posterior mean and predictive variance of Q(summary, action)."""
        mean, var = self._latent(summary, action)
        return mean, var + self.config.noise_std**2

    def select_action(self, summary, mask, rng, mode="greedy") -> int:
        executable = _first_executable(mask)
        scores = np.empty(executable.size)
        for j, action in enumerate(executable):
            mean, var = self._latent(summary, int(action))
            scores[j] = mean if mode == "greedy" else rng.normal(mean, np.sqrt(var))
        return int(executable[int(np.argmax(scores))])

    def _admit(self, summary: np.ndarray, action: int, k: np.ndarray, residual: float, coeff: np.ndarray) -> None:
        n = self.dictionary_size
        kxx = residual + float(k @ coeff)
        gram = np.zeros((n + 1, n + 1))
        gram[:n, :n] = self.gram
        gram[:n, n] = gram[n, :n] = k
        gram[n, n] = kxx
        k_inv = np.zeros((n + 1, n + 1))
        k_inv[:n, :n] = self.k_inv + np.outer(coeff, coeff) / residual
        k_inv[:n, n] = k_inv[n, :n] = -coeff / residual
        k_inv[n, n] = 1.0 / residual
        self.gram, self.k_inv = gram, k_inv
        self.points = np.vstack([self.points, summary[None, :]])
        self.actions = np.append(self.actions, action)
        self.precision = np.pad(self.precision, ((0, 1), (0, 1)))
        self.target = np.pad(self.target, (0, 1))
        self.alpha = np.pad(self.alpha, (0, 1))
        self.c_matrix = np.pad(self.c_matrix, ((0, 1), (0, 1)))
        logger.debug("admitted point %d (action %d, residual %.3g)", n, action, residual)

    def observe_step(self, x_t: Point, reward: float, x_next: Optional[Point]) -> None:
        summary = np.asarray(x_t[0], dtype=np.float64)
        action = int(x_t[1])
        if self._expected is not None:
            expected_summary, expected_action = self._expected
            if expected_action != action or not np.array_equal(expected_summary, summary):
                raise ValueError("observe_step called out of order: x_t differs from the previous step's x_next")
        k = self._cross(summary, action)
        kxx = float(summary @ summary)
        coeff = self.k_inv @ k
        residual = kxx - float(k @ coeff)
        cap = self.config.dictionary_cap
        if (
            residual > self.config.sparsity
            and residual > _RELATIVE_RESIDUAL_FLOOR * kxx
            and (cap is None or self.dictionary_size < cap)
        ):
            self._admit(summary, action, k, residual, coeff)
            coeff = np.zeros(self.dictionary_size)
            coeff[-1] = 1.0
        self._episode.append((coeff, float(reward)))
        if x_next is None:
            self._finish_episode()
            self._expected = None
        else:
            self._expected = (np.array(x_next[0], dtype=np.float64), int(x_next[1]))

    def _finish_episode(self) -> None:
        """Refit alpha and C from the finished episode; the posterior is exact only at episode boundaries."""
        steps, self._episode = self._episode, []
        n = self.dictionary_size
        if n == 0:
            return
        noise = self.config.noise_std**2
        ret = 0.0
        for coeff, reward in reversed(steps):
            ret = reward + self.config.discount * ret
            a = np.zeros(n)
            a[: coeff.size] = coeff
            self.precision += np.outer(a, a) / noise
            self.target += a * ret / noise
        system = np.eye(n) + self.precision @ self.gram
        self.alpha = solve(system, self.target)
        c = solve(system, self.precision)
        self.c_matrix = 0.5 * (c + c.T)

    # --- Persistence ---

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": POLICY_FORMAT,
            "version": POLICY_FORMAT_VERSION,
            "config": self.config.model_dump(),
            "num_actions": self.num_actions,
            "summary_dim": self.summary_dim,
            "points": self.points.tolist(),
            "actions": self.actions.tolist(),
            "gram": self.gram.tolist(),
            "k_inv": self.k_inv.tolist(),
            "precision": self.precision.tolist(),
            "target": self.target.tolist(),
            "alpha": self.alpha.tolist(),
            "c_matrix": self.c_matrix.tolist(),
            "variance_clamps": self.variance_clamps,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], source: str = "<dict>") -> "GpSarsaPolicy":
        if data.get("format") != POLICY_FORMAT:
            raise CorruptFileError(f"{source}: not a GP-SARSA policy file")
        if data.get("version") != POLICY_FORMAT_VERSION:
            raise VersionMismatchError(
                f"{source}: policy format version {data.get('version')}, this build reads {POLICY_FORMAT_VERSION}"
            )
        try:
            policy = cls(data["num_actions"], data["summary_dim"], GpConfig.model_validate(data["config"]))
            n = len(data["actions"])
            policy.actions = np.asarray(data["actions"], dtype=np.int64).reshape(n)
            policy.points = np.asarray(data["points"], dtype=np.float64).reshape(n, policy.summary_dim)
            for key in ("gram", "k_inv", "precision", "c_matrix"):
                setattr(policy, key, np.asarray(data[key], dtype=np.float64).reshape(n, n))
            policy.target = np.asarray(data["target"], dtype=np.float64).reshape(n)
            policy.alpha = np.asarray(data["alpha"], dtype=np.float64).reshape(n)
            policy.variance_clamps = int(data["variance_clamps"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptFileError(f"{source}: malformed policy ({exc})") from exc
        return policy


def save_policy(policy: GpSarsaPolicy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy.to_dict()))


def load_policy(path: str | Path) -> GpSarsaPolicy:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable policy file ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise CorruptFileError(f"{path}: policy file must hold a JSON object")
    return GpSarsaPolicy.from_dict(data, source=str(path))
