"""Focus belief tracking and belief summarisation.

Each constraint slot carries a distribution over its values plus a trailing
"none" entry. The focus rule blends new evidence p with the prior belief b:

    q = 1 - sum(p);   b'(v) = p(v) + q * b(v)

so mass moves toward whatever the user said last, and a zero-evidence turn
leaves the belief untouched.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .domain import DomainSpec
from .models import ACT_TYPES, ActType, DialogueAct

# DB-match buckets: 0, 1, 2-5, 6-50, >50
DB_BUCKET_EDGES = (0, 1, 5, 50)
NUM_DB_BUCKETS = len(DB_BUCKET_EDGES) + 1
FEATURES_PER_SLOT = 4
FILLED_THRESHOLD = 0.5
EVIDENCE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class BeliefState:
    domain: DomainSpec
    slots: dict[str, np.ndarray]
    last_user_act: Optional[ActType] = None
    turn: int = 0

    @classmethod
    def initial(cls, domain: DomainSpec) -> "BeliefState":
        slots = {}
        for spec in domain.slots:
            dist = np.zeros(len(spec.values) + 1)
            dist[-1] = 1.0
            slots[spec.name] = dist
        return cls(domain=domain, slots=slots)

    def distribution(self, slot: str) -> dict[str, float]:
        spec = self.domain.slot(slot)
        dist = self.slots[slot]
        out = {value: float(p) for value, p in zip(spec.values, dist[:-1])}
        out["none"] = float(dist[-1])
        return out

    def top_value(self, slot: str) -> tuple[Optional[str], float]:
        """Most likely real value (ties: first in ontology order) and its mass."""
        real = self.slots[slot][:-1]
        best = int(np.argmax(real))
        if real[best] <= 0.0:
            return None, 0.0
        return self.domain.slot(slot).values[best], float(real[best])

    def filled(self) -> dict[str, str]:
        """Slots whose top real value holds more than half the mass."""
        out = {}
        for name in self.domain.slot_names:
            value, p = self.top_value(name)
            if value is not None and p > FILLED_THRESHOLD:
                out[name] = value
        return out


def focus_update(belief: BeliefState, slot: str, evidence: Mapping[str, float]) -> BeliefState:
    """Apply the focus rule to one slot; returns a new BeliefState."""
    spec = belief.domain.slot(slot)
    p = np.zeros(len(spec.values) + 1)
    for value, prob in evidence.items():
        if prob < 0:
            raise ValueError(f"negative evidence {prob} for {slot}={value!r}")
        p[belief.domain.value_code(slot, value)] += prob
    total = float(p.sum())
    if total > 1.0 + EVIDENCE_TOLERANCE:
        raise ValueError(f"evidence for slot {slot!r} sums to {total:.12g} > 1")
    q = 1.0 - total
    slots = dict(belief.slots)
    slots[slot] = p + q * belief.slots[slot]
    return replace(belief, slots=slots)


def track_turn(belief: BeliefState, system_act: Optional[DialogueAct], user_act: DialogueAct) -> BeliefState:
    """Fold one user act into the belief at confidence 1.0.

    Informs and corrective denials carry slot values directly; an affirm
    confirms the value the system asked about. Garbled input only moves the
    turn counter and the last-act feature.
    """
    updated = belief
    if user_act.act_type in (ActType.INFORM, ActType.DENY):
        for slot, value in user_act.values.items():
            updated = focus_update(updated, slot, {value: 1.0})
    elif user_act.act_type is ActType.AFFIRM and system_act is not None and system_act.act_type is ActType.CONFIRM:
        updated = focus_update(updated, system_act.slot, {system_act.value: 1.0})  # type: ignore[arg-type]
    return replace(updated, last_user_act=user_act.act_type, turn=belief.turn + 1)


def db_bucket(count: int) -> int:
    for i, edge in enumerate(DB_BUCKET_EDGES):
        if count <= edge:
            return i
    return len(DB_BUCKET_EDGES)


def summary_length(num_slots: int) -> int:
    return FEATURES_PER_SLOT * num_slots + NUM_DB_BUCKETS + len(ACT_TYPES)


def summarize(belief: BeliefState, db_match_count: int) -> np.ndarray:
    """Fixed-length summary vector, every entry in [0, 1].

    Per slot: [p_max, p_second, normalised entropy, filled]; all three
    statistics are over real values only ("none" excluded), entropy divided
    by ln(|values| + 1). Then a one-hot DB-match bucket and a one-hot of the
    last user act type (all zero before the user has spoken).
    """
    features: list[float] = []
    for name in belief.domain.slot_names:
        dist = belief.slots[name]
        real = dist[:-1]
        ranked = np.sort(real)[::-1]
        p_max = float(ranked[0])
        p_second = float(ranked[1]) if ranked.size > 1 else 0.0
        positive = real[real > 0]
        entropy = float(-(positive * np.log(positive)).sum()) / math.log(len(dist))
        features.extend([p_max, p_second, min(max(entropy, 0.0), 1.0), float(p_max > FILLED_THRESHOLD)])
    bucket = np.zeros(NUM_DB_BUCKETS)
    bucket[db_bucket(db_match_count)] = 1.0
    last = np.zeros(len(ACT_TYPES))
    if belief.last_user_act is not None:
        last[ACT_TYPES.index(belief.last_user_act)] = 1.0
    return np.concatenate([np.asarray(features), bucket, last])


def summarize_with_db(belief: BeliefState) -> np.ndarray:
    return summarize(belief, belief.domain.count_matches(belief.filled()))
