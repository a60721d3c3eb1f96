"""Domain value types shared by every memtrack module.

All types are frozen pydantic models: they validate on construction, compare
field by field and serialize to plain JSON. Behavior beyond validation lives
in the policy and tracker modules; the only geometry here is disc overlap.
"""
import logging
import math
from typing import Annotated, Iterable, Optional, Sequence, Tuple

import numpy as np
from annotated_types import Ge, Gt, Interval
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DimensionMismatch, DuplicateSlot, NonUnitEmbedding, ScoreOutOfRange

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_DIM = 16
DEFAULT_POINTER_DIM = 4
DEFAULT_CAPACITY = 7
UNIT_TOLERANCE = 1e-9

Score = Annotated[float, Interval(ge=0.0, le=1.0)]
FrameIndex = Annotated[int, Ge(0)]
Slot = Annotated[int, Ge(0)]

# Feature axes are interleaved: appearance on even indices, background on odd.
APPEARANCE = "appearance"
BACKGROUND = "background"
ALL_AXES = "all"


class ValueModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FeatureVec(ValueModel):
    """Unit-normalized real vector (memory features, pointers, embeddings)."""

    components: Tuple[float, ...]

    @field_validator("components")
    @classmethod
    def _unit_norm(cls, components: Tuple[float, ...]) -> Tuple[float, ...]:
        if not components:
            raise ValueError("feature vector must have at least one component")
        norm = math.sqrt(math.fsum(c * c for c in components))
        if not abs(norm - 1.0) <= UNIT_TOLERANCE:
            raise ValueError(f"feature vector norm {norm!r} is not 1 within {UNIT_TOLERANCE}")
        return components

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "FeatureVec":
        arr = np.asarray(list(values), dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(components=tuple(float(x) for x in arr / norm))

    @property
    def dim(self) -> int:
        return len(self.components)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=np.float64)

    def cosine(self, other: "FeatureVec") -> float:
        value = float(np.dot(self.as_array(), other.as_array()))
        return min(1.0, max(-1.0, value))


def axis_mask(dim: int, axes: str = ALL_AXES) -> np.ndarray:
    """Boolean selector of the appearance, background or all feature axes."""
    index = np.arange(dim)
    if axes == APPEARANCE:
        return index % 2 == 0
    if axes == BACKGROUND:
        return index % 2 == 1
    if axes == ALL_AXES:
        return np.ones(dim, dtype=bool)
    raise ValueError(f"unknown axis set {axes!r}")


def random_unit(rng: np.random.Generator, dim: int, axes: str = ALL_AXES) -> FeatureVec:
    """Draw a uniformly distributed unit vector restricted to ``axes``.

    A full ``dim``-sized draw is always consumed so the generator advances
    identically whatever the axis set.
    """
    draw = rng.standard_normal(dim)
    draw[~axis_mask(dim, axes)] = 0.0
    return FeatureVec.from_array(draw)


class MaskGeom(ValueModel):
    """Disc-shaped mask; ``visible_fraction == 0`` is a blank mask."""

    center_x: float
    center_y: float
    radius: Annotated[float, Gt(0.0)]
    visible_fraction: Score = 1.0

    @property
    def blank(self) -> bool:
        return self.visible_fraction == 0.0

    @property
    def area(self) -> float:
        return math.pi * self.radius * self.radius


class Observation(ValueModel):
    slot: Slot
    mask: MaskGeom
    embedding: FeatureVec
    q: Score


def _check_unique_slots(observations: Sequence[Observation]) -> None:
    seen = set()
    for obs in observations:
        if obs.slot in seen:
            raise DuplicateSlot(obs.slot)
        seen.add(obs.slot)


class FrameInput(ValueModel):
    t: FrameIndex
    presence: Score
    observations: Tuple[Observation, ...] = ()

    @model_validator(mode="after")
    def _unique_slots(self) -> "FrameInput":
        _check_unique_slots(self.observations)
        return self

    def observation_for(self, slot: int) -> Optional[Observation]:
        for obs in self.observations:
            if obs.slot == slot:
                return obs
        return None


class MemoryEntry(ValueModel):
    t: FrameIndex
    feature: FeatureVec
    pointer: FeatureVec
    conditioning: bool = False


class MemoryBank(ValueModel):
    """Bounded, insertion-ordered store with one pinned conditioning entry."""

    capacity: Annotated[int, Ge(2)] = DEFAULT_CAPACITY
    entries: Tuple[MemoryEntry, ...] = ()

    @model_validator(mode="after")
    def _bank_invariants(self) -> "MemoryBank":
        entries = self.entries
        if len(entries) > self.capacity:
            raise ValueError(f"bank holds {len(entries)} entries, capacity is {self.capacity}")
        if not entries:
            return self
        conditioning = [entry for entry in entries if entry.conditioning]
        if len(conditioning) != 1 or not entries[0].conditioning:
            raise ValueError("bank needs exactly one conditioning entry, stored first")
        times = [entry.t for entry in entries]
        if any(later <= earlier for earlier, later in zip(times, times[1:])):
            raise ValueError(f"bank entry times must increase strictly, got {times}")
        if len({entry.feature.dim for entry in entries}) != 1:
            raise ValueError("bank features must share one dimension")
        return self

    @property
    def conditioning_entry(self) -> Optional[MemoryEntry]:
        return self.entries[0] if self.entries else None

    @property
    def recent_entries(self) -> Tuple[MemoryEntry, ...]:
        return self.entries[1:]


class SelectionDecision(ValueModel):
    track_id: Annotated[int, Ge(0)]
    score_s: Annotated[float, Ge(0.0)]
    tau: Annotated[float, Interval(gt=0.0, lt=1.0)]
    saved: bool

    @model_validator(mode="after")
    def _strict_threshold(self) -> "SelectionDecision":
        if self.saved != (self.score_s > self.tau):
            raise ValueError(
                f"saved={self.saved} contradicts score {self.score_s!r} against threshold {self.tau!r}"
            )
        return self


class Track(ValueModel):
    track_id: Annotated[int, Ge(0)]
    slot: Slot
    bank: MemoryBank
    active: bool
    last_seen: FrameIndex
    last_mask: MaskGeom
    created_at: FrameIndex


class Group(ValueModel):
    created_at: FrameIndex
    members: Tuple[int, ...] = Field(min_length=1)


def validate_frame(frame: FrameInput, feature_dim: Optional[int] = None) -> FrameInput:
    """Re-check every frame invariant, raising the specific error on failure.

    Frames built through the constructor already satisfy these; frames built
    with ``model_construct`` or decoded leniently are checked here.
    """
    if not 0.0 <= frame.presence <= 1.0:
        raise ScoreOutOfRange("presence", frame.presence)
    _check_unique_slots(frame.observations)
    for obs in frame.observations:
        if not 0.0 <= obs.q <= 1.0:
            raise ScoreOutOfRange("q", obs.q, obs.slot)
        components = obs.embedding.components
        if feature_dim is not None and len(components) != feature_dim:
            raise DimensionMismatch(obs.slot, feature_dim, len(components))
        norm = math.sqrt(math.fsum(c * c for c in components))
        if not abs(norm - 1.0) <= UNIT_TOLERANCE:
            raise NonUnitEmbedding(obs.slot, norm)
    return frame


def disc_intersection(a: MaskGeom, b: MaskGeom) -> float:
    """Area shared by the full discs of ``a`` and ``b``, ignoring visibility.

    Arguments are put in a canonical order first so the result is exactly
    symmetric.
    """
    if (a.center_x, a.center_y, a.radius) > (b.center_x, b.center_y, b.radius):
        a, b = b, a
    r1, r2 = a.radius, b.radius
    d = math.hypot(b.center_x - a.center_x, b.center_y - a.center_y)
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    c1 = min(1.0, max(-1.0, (d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)))
    c2 = min(1.0, max(-1.0, (d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)))
    kite = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
    return r1 * r1 * math.acos(c1) + r2 * r2 * math.acos(c2) - 0.5 * math.sqrt(max(0.0, kite))
