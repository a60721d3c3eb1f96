"""Per-frame tracking loop.

Each frame is processed in a fixed order: validation, association of
observations to live tracks, re-identification of leftovers against inactive
tracks, initialization of a new group for whatever is still unmatched,
feature encoding for every member of the pre-existing groups, one selection
decision per group, and finally the bank updates.
"""
import logging
import math
from enum import Enum
from typing import Annotated, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from annotated_types import Ge, Gt, Interval
from pydantic import model_validator

from .core import (
    BACKGROUND,
    DEFAULT_CAPACITY,
    DEFAULT_FEATURE_DIM,
    DEFAULT_POINTER_DIM,
    FeatureVec,
    FrameIndex,
    FrameInput,
    Group,
    MaskGeom,
    MemoryBank,
    MemoryEntry,
    Observation,
    Score,
    SelectionDecision,
    Slot,
    Track,
    ValueModel,
    random_unit,
    validate_frame,
)
from .errors import EmptyBank, EmptyGroup, FixedTargetSet, NonMonotonicFrameIndex
from .policy import PolicyConfig, apply_updates, get_policy

logger = logging.getLogger(__name__)

Threshold = Annotated[float, Interval(gt=0.0, lt=1.0)]


class TrackingMode(str, Enum):
    PVS = "pvs"  # fixed target set, slot-bound association
    PCS = "pcs"  # targets may appear mid-run, appearance-based association


class TrackerConfig(ValueModel):
    policy: PolicyConfig = PolicyConfig()
    capacity: Annotated[int, Ge(2)] = DEFAULT_CAPACITY
    feature_dim: Annotated[int, Ge(2)] = DEFAULT_FEATURE_DIM
    pointer_dim: Annotated[int, Ge(1)] = DEFAULT_POINTER_DIM
    reid_threshold: Threshold = 0.6
    assoc_threshold: Threshold = 0.5
    motion_gate: Annotated[float, Gt(0.0)] = 2.0
    mode: TrackingMode = TrackingMode.PCS
    encoder_noise_seed: Annotated[int, Ge(0)] = 0

    @model_validator(mode="after")
    def _pointer_fits(self) -> "TrackerConfig":
        if self.pointer_dim > self.feature_dim:
            raise ValueError(f"pointer_dim {self.pointer_dim} exceeds feature_dim {self.feature_dim}")
        return self


class TrackOutput(ValueModel):
    track_id: Annotated[int, Ge(0)]
    slot: Slot
    mask: MaskGeom
    q: Score
    decision: Optional[SelectionDecision] = None


class FrameResult(ValueModel):
    t: FrameIndex
    presence: Score
    outputs: Tuple[TrackOutput, ...] = ()
    new_track_ids: Tuple[int, ...] = ()

    def output_for(self, track_id: int) -> Optional[TrackOutput]:
        for output in self.outputs:
            if output.track_id == track_id:
                return output
        return None


class RunRecord(ValueModel):
    config: TrackerConfig
    scenario_seed: Annotated[int, Ge(0)] = 0
    frames: Tuple[FrameResult, ...] = ()
    tracks: Tuple[Track, ...] = ()
    groups: Tuple[Group, ...] = ()


class Association(ValueModel):
    matches: Dict[int, int] = {}  # slot -> track_id
    unmatched: Tuple[Observation, ...] = ()
    unobserved: Tuple[int, ...] = ()


def noise_generator(encoder_noise_seed: int, slot: int, generation: int = 0) -> np.random.Generator:
    """Encoder noise stream of one track, independent of every other track."""
    return np.random.default_rng(np.random.SeedSequence([encoder_noise_seed, slot, generation]))


def encode_feature(
    obs: Observation, rng: np.random.Generator, pointer_dim: int = DEFAULT_POINTER_DIM
) -> Tuple[FeatureVec, FeatureVec]:
    """Blend the observed embedding with background noise by visible fraction.

    One noise vector is drawn on every call, including fully visible ones.
    """
    v = obs.mask.visible_fraction
    noise = random_unit(rng, obs.embedding.dim, BACKGROUND)
    if v == 1.0:
        feature = obs.embedding
    else:
        feature = FeatureVec.from_array(v * obs.embedding.as_array() + (1.0 - v) * noise.as_array())
    head = feature.as_array()[:pointer_dim]
    if not np.any(head):
        head = np.zeros(pointer_dim)
        head[0] = 1.0
    return feature, FeatureVec.from_array(head)


def readout(bank: MemoryBank, embedding: FeatureVec) -> float:
    """Best cosine between ``embedding`` and the bank's recent window.

    The conditioning entry only answers while no recent entry exists.
    """
    if not bank.entries:
        raise EmptyBank()
    window = bank.recent_entries or (bank.conditioning_entry,)
    return max(entry.feature.cosine(embedding) for entry in window)


def motion_gate_passes(mask: MaskGeom, last_mask: MaskGeom, gate: float) -> bool:
    distance = math.hypot(mask.center_x - last_mask.center_x, mask.center_y - last_mask.center_y)
    return distance <= gate * (mask.radius + last_mask.radius)


def associate(frame: FrameInput, tracks: Sequence[Track], config: TrackerConfig) -> Association:
    """Match the frame's visible observations to active tracks."""
    active = sorted((track for track in tracks if track.active), key=lambda track: track.track_id)
    observations = sorted((obs for obs in frame.observations if not obs.mask.blank), key=lambda obs: obs.slot)
    matches: Dict[int, int] = {}

    if config.mode == TrackingMode.PVS:
        by_slot = {track.slot: track for track in active}
        for obs in observations:
            track = by_slot.get(obs.slot)
            if track is not None and motion_gate_passes(obs.mask, track.last_mask, config.motion_gate):
                matches[obs.slot] = track.track_id
    else:
        candidates = []
        for obs in observations:
            for track in active:
                if not motion_gate_passes(obs.mask, track.last_mask, config.motion_gate):
                    continue
                similarity = readout(track.bank, obs.embedding)
                if similarity >= config.assoc_threshold:
                    candidates.append((-similarity, obs.slot, track.track_id))
        taken: Set[int] = set()
        for _, slot, track_id in sorted(candidates):
            if slot in matches or track_id in taken:
                continue
            matches[slot] = track_id
            taken.add(track_id)

    matched_ids = set(matches.values())
    association = Association(
        matches=matches,
        unmatched=tuple(obs for obs in observations if obs.slot not in matches),
        unobserved=tuple(track.track_id for track in active if track.track_id not in matched_ids),
    )
    logger.debug({"event": "associate", "t": frame.t, "matches": matches, "unobserved": list(association.unobserved)})
    return association


def reidentify(obs: Observation, inactive_tracks: Iterable[Track], reid_threshold: float) -> Optional[int]:
    """Return the inactive track whose bank best recalls ``obs``, or None for a new track."""
    best_id, best_score = None, -math.inf
    for track in sorted(inactive_tracks, key=lambda track: track.track_id):
        score = readout(track.bank, obs.embedding)
        if score >= reid_threshold and score > best_score:
            best_id, best_score = track.track_id, score
    return best_id


class Tracker:
    """
    Stateful multi-target tracker.
    Feed frames in increasing ``t`` through ``step`` and collect the record with ``record``.
    """

    def __init__(self, config: TrackerConfig):
        self.config = config
        self.policy = get_policy(config.policy)
        self.tracks: Dict[int, Track] = {}
        self.groups: List[Group] = []
        self.results: List[FrameResult] = []
        self._rngs: Dict[int, np.random.Generator] = {}
        self._generations: Dict[int, int] = {}
        self._last_t: Optional[int] = None

    def init_group(self, observations: Sequence[Observation], t: int) -> Group:
        """Start one track per observation, all in a single new group."""
        if not observations:
            raise EmptyGroup()
        if self.config.mode == TrackingMode.PVS and self.results:
            raise FixedTargetSet(t)
        members = []
        for obs in sorted(observations, key=lambda obs: obs.slot):
            track_id = len(self.tracks)
            generation = self._generations.get(obs.slot, 0)
            self._generations[obs.slot] = generation + 1
            rng = noise_generator(self.config.encoder_noise_seed, obs.slot, generation)
            feature, pointer = encode_feature(obs, rng, self.config.pointer_dim)
            entry = MemoryEntry(t=t, feature=feature, pointer=pointer, conditioning=True)
            self._rngs[track_id] = rng
            self.tracks[track_id] = Track(
                track_id=track_id,
                slot=obs.slot,
                bank=MemoryBank(capacity=self.config.capacity, entries=(entry,)),
                active=True,
                last_seen=t,
                last_mask=obs.mask,
                created_at=t,
            )
            members.append(track_id)
        group = Group(created_at=t, members=tuple(members))
        self.groups.append(group)
        logger.debug({"event": "group_created", "t": t, "members": members})
        return group

    def _blank_observation(self, track: Track, frame: FrameInput, consumed: Set[int]) -> Observation:
        own = frame.observation_for(track.slot)
        q = own.q if own is not None and own.slot not in consumed else 0.0
        return Observation(
            slot=track.slot,
            mask=track.last_mask.model_copy(update={"visible_fraction": 0.0}),
            embedding=track.bank.conditioning_entry.feature,
            q=q,
        )

    def step(self, frame: FrameInput) -> FrameResult:
        validate_frame(frame, self.config.feature_dim)
        if self._last_t is not None and frame.t <= self._last_t:
            raise NonMonotonicFrameIndex(self._last_t, frame.t)
        pvs = self.config.mode == TrackingMode.PVS
        groups = list(self.groups)

        association = associate(frame, list(self.tracks.values()), self.config)
        matched: Dict[int, Observation] = {
            track_id: frame.observation_for(slot) for slot, track_id in association.matches.items()
        }
        consumed = set(association.matches)

        inactive = [track for track in self.tracks.values() if not track.active]
        leftovers = []
        for obs in association.unmatched:
            candidates = [
                track for track in inactive
                if track.track_id not in matched and (not pvs or track.slot == obs.slot)
            ]
            track_id = reidentify(obs, candidates, self.config.reid_threshold)
            if track_id is None:
                leftovers.append(obs)
                continue
            matched[track_id] = obs
            consumed.add(obs.slot)
            logger.debug({"event": "reidentified", "t": frame.t, "slot": obs.slot, "track_id": track_id})

        new_group = None
        if leftovers and pvs and self.results:
            logger.warning({
                "event": "observation_dropped",
                "t": frame.t,
                "slots": [obs.slot for obs in leftovers],
                "reason": "fixed target set",
            })
        elif leftovers:
            new_group = self.init_group(leftovers, frame.t)
            consumed.update(obs.slot for obs in leftovers)

        outputs: Dict[int, TrackOutput] = {}
        for group in groups:
            members = [self.tracks[track_id] for track_id in group.members]
            observations = [
                matched[track.track_id] if track.track_id in matched
                else self._blank_observation(track, frame, consumed)
                for track in members
            ]
            encoded = [
                encode_feature(obs, self._rngs[track.track_id], self.config.pointer_dim)
                for track, obs in zip(members, observations)
            ]
            decisions = self.policy.decide([obs.q for obs in observations], frame.presence, group.members)
            for track, obs, decision in zip(
                apply_updates(members, encoded, decisions, frame.t), observations, decisions
            ):
                observed = track.track_id in matched
                self.tracks[track.track_id] = track.model_copy(update={
                    "active": observed,
                    "last_seen": frame.t if observed else track.last_seen,
                    "last_mask": obs.mask if observed else track.last_mask,
                })
                outputs[track.track_id] = TrackOutput(
                    track_id=track.track_id, slot=track.slot, mask=obs.mask, q=obs.q, decision=decision
                )

        new_ids = new_group.members if new_group is not None else ()
        for track_id in new_ids:
            track = self.tracks[track_id]
            obs = frame.observation_for(track.slot)
            outputs[track_id] = TrackOutput(track_id=track_id, slot=track.slot, mask=obs.mask, q=obs.q)

        result = FrameResult(
            t=frame.t,
            presence=frame.presence,
            outputs=tuple(outputs[track_id] for track_id in sorted(outputs)),
            new_track_ids=tuple(new_ids),
        )
        self.results.append(result)
        self._last_t = frame.t
        return result

    def record(self, scenario_seed: int = 0) -> RunRecord:
        return RunRecord(
            config=self.config,
            scenario_seed=scenario_seed,
            frames=tuple(self.results),
            tracks=tuple(self.tracks[track_id] for track_id in sorted(self.tracks)),
            groups=tuple(self.groups),
        )


def run(frames: Iterable[FrameInput], config: TrackerConfig, scenario_seed: int = 0) -> RunRecord:
    tracker = Tracker(config)
    for frame in frames:
        tracker.step(frame)
    record = tracker.record(scenario_seed)
    logger.info({
        "event": "run_complete",
        "policy": config.policy.kind.value,
        "mode": config.mode.value,
        "frames": len(record.frames),
        "tracks": len(record.tracks),
        "groups": len(record.groups),
    })
    return record


def restrict_to_slot(frames: Iterable[FrameInput], slot: int) -> List[FrameInput]:
    """The same frame stream seen by a tracker prompted with one target only."""
    return [
        FrameInput(
            t=frame.t,
            presence=frame.presence,
            observations=tuple(obs for obs in frame.observations if obs.slot == slot),
        )
        for frame in frames
    ]


def run_one_by_one(
    frames: Iterable[FrameInput], config: TrackerConfig, scenario_seed: int = 0
) -> Dict[int, RunRecord]:
    """Track every slot in its own isolated run."""
    frames = list(frames)
    slots = sorted({obs.slot for frame in frames for obs in frame.observations})
    return {slot: run(restrict_to_slot(frames, slot), config, scenario_seed) for slot in slots}


def save_rates(record: RunRecord) -> Dict[int, float]:
    """Fraction of decided frames in which each track saved to memory."""
    decided: Dict[int, int] = {}
    saved: Dict[int, int] = {}
    for frame in record.frames:
        for output in frame.outputs:
            if output.decision is None:
                continue
            decided[output.track_id] = decided.get(output.track_id, 0) + 1
            saved[output.track_id] = saved.get(output.track_id, 0) + int(output.decision.saved)
    return {track_id: saved[track_id] / decided[track_id] for track_id in sorted(decided)}
