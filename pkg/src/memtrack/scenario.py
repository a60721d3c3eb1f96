"""Seeded synthetic world and perception frontend.

``generate`` builds the ground truth: disc-shaped identities moving at
constant velocity inside a reflecting box, with visibility and speed altered
by scripted events, plus distractors that never count as identities.
``perceive`` turns one ground-truth frame into the noisy scores, masks and
embeddings a tracker consumes.
"""
import logging
import math
import re
from enum import Enum
from typing import Annotated, Callable, Dict, List, Optional, Tuple

import numpy as np
from annotated_types import Ge, Gt
from pydantic import model_validator

from .core import (
    ALL_AXES,
    APPEARANCE,
    DEFAULT_CAPACITY,
    DEFAULT_FEATURE_DIM,
    FeatureVec,
    FrameIndex,
    FrameInput,
    MaskGeom,
    Observation,
    Score,
    ValueModel,
    disc_intersection,
    random_unit,
)
from .errors import InvalidWindow, UnknownArchetype

logger = logging.getLogger(__name__)

NonNegative = Annotated[float, Ge(0.0)]

# Absence long enough to push every clean entry out of a default-capacity bank.
ABSENCE_FRAMES = 2 * DEFAULT_CAPACITY
CROSSING_SPEED = 1.5
PARALLEL_OFFSET = 0.5  # in target radii
# An 11x burst step at this speed exceeds the widest default motion gate, 2.0 * (6 + 6).
RAPID_SPEED_MIN = 2.5


class EventKind(str, Enum):
    OCCLUSION = "occlusion"
    EXIT_REENTRY = "exit_reentry"
    RAPID_MOTION = "rapid_motion"


class DistractorMotion(str, Enum):
    PARALLEL = "parallel"
    CROSSING = "crossing"


class PresenceMode(str, Enum):
    MAX = "max"
    MEAN = "mean"


class Event(ValueModel):
    kind: EventKind
    target: Annotated[int, Ge(0)]
    start: FrameIndex
    end: FrameIndex
    severity: Score = 1.0

    def covers(self, t: int) -> bool:
        return self.start <= t < self.end


class DistractorSpec(ValueModel):
    similarity: Score
    motion: DistractorMotion
    crowding: Score
    target: Annotated[int, Ge(0)] = 0


class NoiseModel(ValueModel):
    sigma_q: NonNegative = 0.02
    sigma_p: NonNegative = 0.02
    sigma_pos: NonNegative = 0.5


class ScenarioConfig(ValueModel):
    num_targets: Annotated[int, Ge(1)]
    num_frames: Annotated[int, Ge(1)]
    seed: Annotated[int, Ge(0)]
    width: Annotated[float, Gt(0.0)] = 100.0
    height: Annotated[float, Gt(0.0)] = 100.0
    radius_min: Annotated[float, Gt(0.0)] = 4.0
    radius_max: Annotated[float, Gt(0.0)] = 6.0
    speed_min: NonNegative = 0.3
    speed_max: NonNegative = 1.0
    presence: PresenceMode = PresenceMode.MAX
    feature_dim: Annotated[int, Ge(2)] = DEFAULT_FEATURE_DIM
    events: Tuple[Event, ...] = ()
    distractors: Tuple[DistractorSpec, ...] = ()
    noise: NoiseModel = NoiseModel()

    @model_validator(mode="after")
    def _ranges(self) -> "ScenarioConfig":
        if self.radius_min > self.radius_max:
            raise ValueError(f"radius_min {self.radius_min} exceeds radius_max {self.radius_max}")
        if self.speed_min > self.speed_max:
            raise ValueError(f"speed_min {self.speed_min} exceeds speed_max {self.speed_max}")
        if 2 * self.radius_max >= min(self.width, self.height):
            raise ValueError("discs of radius_max do not fit inside the world")
        for index, spec in enumerate(self.distractors):
            if spec.target >= self.num_targets:
                raise ValueError(f"distractor {index} follows target {spec.target} of {self.num_targets}")
        return self


class IdentityState(ValueModel):
    identity: Annotated[int, Ge(0)]
    mask: MaskGeom  # visible_fraction is the identity's visibility


class TruthFrame(ValueModel):
    t: FrameIndex
    identities: Tuple[IdentityState, ...]
    distractors: Tuple[MaskGeom, ...] = ()


class GroundTruth(ValueModel):
    width: float
    height: float
    embeddings: Tuple[FeatureVec, ...]
    distractor_embeddings: Tuple[FeatureVec, ...] = ()
    frames: Tuple[TruthFrame, ...] = ()


class ScenarioMetadata(ValueModel):
    seed: int
    num_targets: int
    num_frames: int
    pairwise_abs_cosine: Tuple[Tuple[float, ...], ...]
    max_abs_cosine: float


def check_events(config: ScenarioConfig) -> None:
    for index, event in enumerate(config.events):
        if event.target >= config.num_targets:
            raise InvalidWindow(index, f"target {event.target} outside 0..{config.num_targets - 1}")
        if not event.start < event.end <= config.num_frames:
            raise InvalidWindow(
                index, f"window [{event.start}, {event.end}) not inside [0, {config.num_frames})"
            )


def _reflect(position: np.ndarray, velocity: np.ndarray, radius: float, bounds: Tuple[float, float]) -> None:
    for axis, size in enumerate(bounds):
        low, high = radius, size - radius
        while not low <= position[axis] <= high:
            if position[axis] < low:
                position[axis] = 2 * low - position[axis]
            else:
                position[axis] = 2 * high - position[axis]
            velocity[axis] = -velocity[axis]


def _orthogonal_unit(rng: np.random.Generator, base: FeatureVec) -> np.ndarray:
    """Unit appearance vector orthogonal to ``base``."""
    while True:
        draw = random_unit(rng, base.dim, APPEARANCE).as_array()
        draw -= float(np.dot(draw, base.as_array())) * base.as_array()
        norm = float(np.linalg.norm(draw))
        if norm > 1e-9:
            return draw / norm


def generate(config: ScenarioConfig) -> Tuple[GroundTruth, ScenarioMetadata]:
    """Build the ground truth; a pure function of ``config``."""
    check_events(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    n, frames, bounds = config.num_targets, config.num_frames, (config.width, config.height)

    embeddings, radii, positions, velocities, headings = [], [], [], [], []
    for _ in range(n):
        embeddings.append(random_unit(rng, config.feature_dim, APPEARANCE))
        radius = float(rng.uniform(config.radius_min, config.radius_max))
        x = rng.uniform(radius, config.width - radius)
        y = rng.uniform(radius, config.height - radius)
        speed = rng.uniform(config.speed_min, config.speed_max)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        radii.append(radius)
        positions.append(np.array([x, y], dtype=np.float64))
        velocities.append(speed * np.array([math.cos(heading), math.sin(heading)]))
        headings.append(heading)

    tracks = np.zeros((frames, n, 2))
    for t in range(frames):
        for i in range(n):
            if t > 0:
                boost = 1.0
                for event in config.events:
                    if event.kind == EventKind.RAPID_MOTION and event.target == i and event.covers(t - 1):
                        boost *= 1.0 + 10.0 * event.severity
                positions[i] += velocities[i] * boost
                _reflect(positions[i], velocities[i], radii[i], bounds)
            tracks[t, i] = positions[i]

    distractor_embeddings, distractor_paths = [], []
    for spec in config.distractors:
        base = embeddings[spec.target]
        mixed = spec.similarity * base.as_array() + math.sqrt(1.0 - spec.similarity ** 2) * _orthogonal_unit(rng, base)
        distractor_embeddings.append(FeatureVec.from_array(mixed))
        normal = np.array([-math.sin(headings[spec.target]), math.cos(headings[spec.target])])
        radius = radii[spec.target]
        if spec.motion == DistractorMotion.PARALLEL:
            path = tracks[:, spec.target] + PARALLEL_OFFSET * radius * normal
        else:
            mid = frames // 2
            offsets = (np.arange(frames) - mid)[:, None] * (CROSSING_SPEED * normal)[None, :]
            path = tracks[mid, spec.target] + offsets
        distractor_paths.append((path, radius))

    truth_frames = []
    for t in range(frames):
        identities = []
        for i in range(n):
            visibility = 1.0
            for event in config.events:
                if event.target != i or not event.covers(t):
                    continue
                if event.kind == EventKind.OCCLUSION:
                    visibility *= 1.0 - event.severity
                elif event.kind == EventKind.EXIT_REENTRY:
                    visibility = 0.0
            mask = MaskGeom(
                center_x=float(tracks[t, i, 0]),
                center_y=float(tracks[t, i, 1]),
                radius=radii[i],
                visible_fraction=visibility,
            )
            identities.append(IdentityState(identity=i, mask=mask))
        distractors = tuple(
            MaskGeom(center_x=float(path[t, 0]), center_y=float(path[t, 1]), radius=radius)
            for path, radius in distractor_paths
        )
        truth_frames.append(TruthFrame(t=t, identities=tuple(identities), distractors=distractors))

    truth = GroundTruth(
        width=config.width,
        height=config.height,
        embeddings=tuple(embeddings),
        distractor_embeddings=tuple(distractor_embeddings),
        frames=tuple(truth_frames),
    )
    cosines = tuple(
        tuple(abs(a.cosine(b)) for b in embeddings) for a in embeddings
    )
    off_diagonal = [cosines[i][j] for i in range(n) for j in range(n) if i != j]
    metadata = ScenarioMetadata(
        seed=config.seed,
        num_targets=n,
        num_frames=frames,
        pairwise_abs_cosine=cosines,
        max_abs_cosine=max(off_diagonal, default=0.0),
    )
    logger.debug({"event": "scenario_generated", "seed": config.seed, "targets": n, "frames": frames})
    return truth, metadata


def crowding(truth: GroundTruth, frame: TruthFrame, identity: int, config: ScenarioConfig) -> float:
    """Strongest confidence suppression any distractor exerts on ``identity``."""
    state = frame.identities[identity]
    worst = 0.0
    for spec, embedding, mask in zip(config.distractors, truth.distractor_embeddings, frame.distractors):
        similarity = max(0.0, truth.embeddings[identity].cosine(embedding))
        overlap = disc_intersection(state.mask, mask) / state.mask.area
        worst = max(worst, spec.crowding * similarity * overlap)
    return worst


def perceive(truth: GroundTruth, t: int, config: ScenarioConfig, rng: np.random.Generator) -> FrameInput:
    """Noisy observation of ground-truth frame ``t``.

    Draw order is fixed: per identity the q noise, the x and y jitter and,
    for an invisible identity, an arbitrary embedding; then the presence noise.
    """
    frame = truth.frames[t]
    noise = config.noise
    observations = []
    for state in frame.identities:
        v = state.mask.visible_fraction
        crowd = crowding(truth, frame, state.identity, config)
        q = v * (1.0 - crowd) + rng.normal(0.0, noise.sigma_q)
        dx = rng.normal(0.0, noise.sigma_pos)
        dy = rng.normal(0.0, noise.sigma_pos)
        if v == 0.0:
            embedding = random_unit(rng, config.feature_dim, ALL_AXES)
        else:
            embedding = truth.embeddings[state.identity]
        observations.append(Observation(
            slot=state.identity,
            mask=state.mask.model_copy(update={
                "center_x": state.mask.center_x + float(dx),
                "center_y": state.mask.center_y + float(dy),
            }),
            embedding=embedding,
            q=float(np.clip(q, 0.0, 1.0)),
        ))
    visibilities = [state.mask.visible_fraction for state in frame.identities]
    if config.presence == PresenceMode.MEAN:
        base = math.fsum(visibilities) / len(visibilities)
    else:
        base = max(visibilities)
    presence = float(np.clip(base + rng.normal(0.0, noise.sigma_p), 0.0, 1.0))
    return FrameInput(t=t, presence=presence, observations=tuple(observations))


def stream(truth: GroundTruth, config: ScenarioConfig) -> List[FrameInput]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    return [perceive(truth, t, config, rng) for t in range(len(truth.frames))]


def simulate(config: ScenarioConfig) -> Tuple[GroundTruth, ScenarioMetadata, List[FrameInput]]:
    truth, metadata = generate(config)
    return truth, metadata, stream(truth, config)


# --- archetypes ---

def _reentry(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        num_targets=3, num_frames=40, seed=seed,
        events=(Event(kind=EventKind.EXIT_REENTRY, target=0, start=10, end=10 + ABSENCE_FRAMES),),
    )


def _occlusion(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        num_targets=3, num_frames=40, seed=seed,
        events=(Event(kind=EventKind.OCCLUSION, target=0, start=10, end=10 + ABSENCE_FRAMES, severity=0.8),),
    )


def _distractor(motion: DistractorMotion) -> Callable[[int], ScenarioConfig]:
    def build(seed: int) -> ScenarioConfig:
        return ScenarioConfig(
            num_targets=3, num_frames=40, seed=seed,
            distractors=(DistractorSpec(similarity=0.9, motion=motion, crowding=0.8, target=0),),
        )
    return build


def _rapid_motion(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        num_targets=3, num_frames=40, seed=seed,
        speed_min=RAPID_SPEED_MIN, speed_max=RAPID_SPEED_MIN + 0.5,
        events=(Event(kind=EventKind.RAPID_MOTION, target=0, start=10, end=20, severity=1.0),),
    )


def _reentry_multi(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        num_targets=5, num_frames=40, seed=seed,
        events=(
            Event(kind=EventKind.EXIT_REENTRY, target=0, start=10, end=10 + ABSENCE_FRAMES),
            Event(kind=EventKind.EXIT_REENTRY, target=1, start=12, end=12 + ABSENCE_FRAMES),
        ),
    )


def density(num_targets: int, seed: int) -> ScenarioConfig:
    """``num_targets`` identities, one staggered exit per three of them."""
    events = tuple(
        Event(kind=EventKind.EXIT_REENTRY, target=3 * k, start=10 + 3 * k, end=10 + 3 * k + ABSENCE_FRAMES)
        for k in range(math.ceil(num_targets / 3))
    )
    return ScenarioConfig(num_targets=num_targets, num_frames=60, seed=seed, events=events)


_BUILDERS: Dict[str, Callable[[int], ScenarioConfig]] = {
    "reentry": _reentry,
    "occlusion": _occlusion,
    "distractor_parallel": _distractor(DistractorMotion.PARALLEL),
    "distractor_crossing": _distractor(DistractorMotion.CROSSING),
    "rapid_motion": _rapid_motion,
    "reentry_multi": _reentry_multi,
}

ARCHETYPES = tuple(_BUILDERS) + ("density(N)",)

_DENSITY = re.compile(r"^density(?:\((\d+)\)|:(\d+))$")


def density_level(name: str) -> Optional[int]:
    """N of a ``density(N)`` / ``density:N`` name, None for other names."""
    match = _DENSITY.match(name.strip())
    if match is None:
        return None
    return int(match.group(1) or match.group(2))


def archetype(name: str, seed: int) -> ScenarioConfig:
    level = density_level(name)
    if level is not None:
        if level < 1:
            raise UnknownArchetype(name)
        return density(level, seed)
    builder = _BUILDERS.get(name.strip())
    if builder is None:
        raise UnknownArchetype(name)
    return builder(seed)
