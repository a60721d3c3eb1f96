"""Memory-selection rules and bank updates.

Two policies decide, per frame, whether each track's freshly encoded feature
enters its memory bank:

* coupled: one score for the whole same-timestamp group, the mean query score
  times the frame presence, so every bank of the group is updated together or
  not at all;
* decoupled: each track thresholds its own query score times the presence.

Both use the strict test ``score > tau``.
"""
import logging
import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Annotated, List, Optional, Sequence, Tuple

from annotated_types import Interval

from .core import FeatureVec, MemoryBank, MemoryEntry, SelectionDecision, Track, ValueModel
from .errors import EmptyGroup, LengthMismatch

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5


class PolicyKind(str, Enum):
    COUPLED = "coupled"
    DECOUPLED = "decoupled"


class PolicyConfig(ValueModel):
    tau: Annotated[float, Interval(gt=0.0, lt=1.0)] = DEFAULT_TAU
    kind: PolicyKind = PolicyKind.DECOUPLED


def group_score(q_list: Sequence[float], p: float) -> float:
    """Group-average frame score: mean query score times presence."""
    if len(q_list) == 0:
        raise EmptyGroup()
    return math.fsum(q_list) / len(q_list) * p


def per_target_score(q: float, p: float) -> float:
    return q * p


class SelectionPolicy(ABC):
    """
    Abstract base for memory-selection rules.
    Subclasses only define how the per-track scores of a group are formed.
    """

    kind: PolicyKind

    def __init__(self, config: PolicyConfig):
        self.config = config

    @abstractmethod
    def scores(self, q_list: Sequence[float], p: float) -> List[float]:
        """
        Computes one selection score per group member.

        Raises:
            EmptyGroup: If ``q_list`` is empty.
        """

    def decide(
        self, q_list: Sequence[float], p: float, track_ids: Optional[Sequence[int]] = None
    ) -> List[SelectionDecision]:
        if track_ids is None:
            track_ids = range(len(q_list))
        elif len(track_ids) != len(q_list):
            raise LengthMismatch(track_ids=len(track_ids), q_list=len(q_list))
        tau = self.config.tau
        return [
            SelectionDecision(track_id=track_id, score_s=score, tau=tau, saved=score > tau)
            for track_id, score in zip(track_ids, self.scores(q_list, p))
        ]


class CoupledPolicy(SelectionPolicy):
    kind = PolicyKind.COUPLED

    def scores(self, q_list: Sequence[float], p: float) -> List[float]:
        score = group_score(q_list, p)
        return [score] * len(q_list)


class DecoupledPolicy(SelectionPolicy):
    kind = PolicyKind.DECOUPLED

    def scores(self, q_list: Sequence[float], p: float) -> List[float]:
        if len(q_list) == 0:
            raise EmptyGroup()
        return [per_target_score(q, p) for q in q_list]


_POLICIES = {
    PolicyKind.COUPLED: CoupledPolicy,
    PolicyKind.DECOUPLED: DecoupledPolicy,
}


def get_policy(config: PolicyConfig) -> SelectionPolicy:
    return _POLICIES[PolicyKind(config.kind)](config)


def decide(
    config: PolicyConfig,
    q_list: Sequence[float],
    p: float,
    track_ids: Optional[Sequence[int]] = None,
) -> List[SelectionDecision]:
    return get_policy(config).decide(q_list, p, track_ids)


def push_entry(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    """Append ``entry``; a full bank first drops its oldest non-conditioning entry."""
    entries = bank.entries
    if len(entries) >= bank.capacity:
        entries = entries[:1] + entries[2:]
    return MemoryBank(capacity=bank.capacity, entries=entries + (entry,))


def apply_updates(
    tracks: Sequence[Track],
    features: Sequence[Tuple[FeatureVec, FeatureVec]],
    decisions: Sequence[SelectionDecision],
    t: int,
) -> List[Track]:
    """Write each saved (feature, pointer) pair into its track's bank."""
    if not len(tracks) == len(features) == len(decisions):
        raise LengthMismatch(tracks=len(tracks), features=len(features), decisions=len(decisions))
    updated = []
    for track, (feature, pointer), decision in zip(tracks, features, decisions):
        if decision.track_id != track.track_id:
            raise LengthMismatch(track_id=track.track_id, decision_track_id=decision.track_id)
        if not decision.saved:
            updated.append(track)
            continue
        entry = MemoryEntry(t=t, feature=feature, pointer=pointer, conditioning=False)
        updated.append(track.model_copy(update={"bank": push_entry(track.bank, entry)}))
        logger.debug({"event": "memory_saved", "track_id": track.track_id, "t": t, "score": decision.score_s})
    return updated
