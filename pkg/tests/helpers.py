"""Builders shared by the test modules."""
from typing import Optional, Sequence

import numpy as np

from memtrack.core import APPEARANCE, FeatureVec, FrameInput, MaskGeom, Observation, random_unit
from memtrack.policy import PolicyConfig, PolicyKind
from memtrack.scenario import GroundTruth, IdentityState, TruthFrame
from memtrack.tracker import FrameResult, RunRecord, TrackerConfig, TrackingMode, TrackOutput

DIM = 16


def basis(index: int, dim: int = DIM) -> FeatureVec:
    components = [0.0] * dim
    components[index] = 1.0
    return FeatureVec(components=tuple(components))


def appearance(seed: int, dim: int = DIM) -> FeatureVec:
    return random_unit(np.random.default_rng(seed), dim, APPEARANCE)


def disc(x: float, y: float, r: float = 5.0, v: float = 1.0) -> MaskGeom:
    return MaskGeom(center_x=x, center_y=y, radius=r, visible_fraction=v)


def obs(
    slot: int,
    x: float,
    y: float,
    embedding: Optional[FeatureVec] = None,
    q: float = 1.0,
    v: float = 1.0,
    r: float = 5.0,
) -> Observation:
    return Observation(
        slot=slot,
        mask=disc(x, y, r, v),
        embedding=embedding if embedding is not None else basis(2 * slot),
        q=q,
    )


def frame(t: int, observations: Sequence[Observation], presence: float = 1.0) -> FrameInput:
    return FrameInput(t=t, presence=presence, observations=tuple(observations))


def tracker_config(
    policy: PolicyKind = PolicyKind.DECOUPLED,
    mode: TrackingMode = TrackingMode.PCS,
    seed: int = 0,
    **overrides,
) -> TrackerConfig:
    return TrackerConfig(policy=PolicyConfig(kind=policy), mode=mode, encoder_noise_seed=seed, **overrides)


def truth_from_masks(frames: Sequence[Sequence[MaskGeom]], width: float = 100.0, height: float = 100.0) -> GroundTruth:
    """Ground truth with identity i at ``frames[t][i]``."""
    count = max((len(masks) for masks in frames), default=0)
    return GroundTruth(
        width=width,
        height=height,
        embeddings=tuple(basis(2 * i) for i in range(count)),
        frames=tuple(
            TruthFrame(t=t, identities=tuple(IdentityState(identity=i, mask=m) for i, m in enumerate(masks)))
            for t, masks in enumerate(frames)
        ),
    )


def run_from_outputs(frames: Sequence[Sequence[tuple]], config: Optional[TrackerConfig] = None) -> RunRecord:
    """Run record whose frame t holds the (track_id, mask) pairs ``frames[t]``."""
    return RunRecord(
        config=config or tracker_config(),
        frames=tuple(
            FrameResult(
                t=t,
                presence=1.0,
                outputs=tuple(
                    TrackOutput(track_id=track_id, slot=track_id, mask=mask, q=1.0)
                    for track_id, mask in sorted(pairs, key=lambda pair: pair[0])
                ),
            )
            for t, pairs in enumerate(frames)
        ),
    )


def perfect_run(truth: GroundTruth) -> RunRecord:
    """A run reproducing every identity exactly under its own track id."""
    return run_from_outputs([
        [(state.identity, state.mask) for state in truth_frame.identities]
        for truth_frame in truth.frames
    ])
