import math

import numpy as np
import pytest
from pydantic import ValidationError

from helpers import basis, disc, frame, obs
from memtrack.core import (
    APPEARANCE,
    BACKGROUND,
    FeatureVec,
    FrameInput,
    MemoryBank,
    MemoryEntry,
    Observation,
    SelectionDecision,
    disc_intersection,
    random_unit,
    validate_frame,
)
from memtrack.errors import DimensionMismatch, DuplicateSlot, NonUnitEmbedding, ScoreOutOfRange


def entry(t, conditioning=False, index=0):
    return MemoryEntry(t=t, feature=basis(index), pointer=basis(0, 4), conditioning=conditioning)


class TestFeatureVec:
    """Unit-norm vectors"""

    def test_rejects_non_unit(self):
        with pytest.raises(ValidationError):
            FeatureVec(components=(1.0, 1.0))

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            FeatureVec(components=())

    def test_from_array_normalizes(self):
        vec = FeatureVec.from_array([3.0, 4.0])
        assert vec.components == pytest.approx((0.6, 0.8))
        assert vec.dim == 2

    def test_from_array_rejects_zero(self):
        with pytest.raises(ValueError):
            FeatureVec.from_array([0.0, 0.0])

    def test_cosine_is_clamped(self):
        vec = FeatureVec.from_array([1.0, 1.0, 1.0])
        assert vec.cosine(vec) <= 1.0
        assert basis(0).cosine(basis(1)) == 0.0

    def test_random_unit_respects_axes(self, rng):
        look = random_unit(rng, 16, APPEARANCE).as_array()
        noise = random_unit(rng, 16, BACKGROUND).as_array()
        assert np.all(look[1::2] == 0.0)
        assert np.all(noise[0::2] == 0.0)
        assert float(np.dot(look, noise)) == 0.0


class TestFrameInput:
    """Frame construction and explicit validation"""

    def test_duplicate_slot_rejected_on_construction(self):
        with pytest.raises(ValidationError):
            frame(0, [obs(1, 10, 10), obs(1, 20, 20)])

    def test_score_range_enforced(self):
        with pytest.raises(ValidationError):
            obs(0, 10, 10, q=1.5)
        with pytest.raises(ValidationError):
            FrameInput(t=0, presence=-0.1)

    def test_validate_frame_reports_presence(self):
        bad = FrameInput.model_construct(t=0, presence=1.2, observations=())
        with pytest.raises(ScoreOutOfRange) as info:
            validate_frame(bad)
        assert info.value.field == "presence"

    def test_validate_frame_reports_duplicate_slot(self):
        bad = FrameInput.model_construct(t=0, presence=1.0, observations=(obs(3, 0, 0), obs(3, 5, 5)))
        with pytest.raises(DuplicateSlot) as info:
            validate_frame(bad)
        assert info.value.slot == 3

    def test_validate_frame_reports_query_score(self):
        bad_obs = Observation.model_construct(slot=2, mask=disc(0, 0), embedding=basis(0), q=-0.5)
        bad = FrameInput.model_construct(t=0, presence=1.0, observations=(bad_obs,))
        with pytest.raises(ScoreOutOfRange) as info:
            validate_frame(bad)
        assert info.value.slot == 2

    def test_validate_frame_reports_norm(self):
        skewed = FeatureVec.model_construct(components=(1.0, 1.0))
        bad_obs = Observation.model_construct(slot=0, mask=disc(0, 0), embedding=skewed, q=0.5)
        bad = FrameInput.model_construct(t=0, presence=1.0, observations=(bad_obs,))
        with pytest.raises(NonUnitEmbedding):
            validate_frame(bad)

    def test_validate_frame_reports_dimension(self):
        with pytest.raises(DimensionMismatch) as info:
            validate_frame(frame(0, [obs(0, 0, 0)]), feature_dim=8)
        assert (info.value.expected, info.value.found) == (8, 16)

    def test_valid_frame_passes(self):
        good = frame(4, [obs(0, 10, 10), obs(1, 30, 30, q=0.2)], presence=0.7)
        assert validate_frame(good, feature_dim=16) is good
        assert good.observation_for(1).q == 0.2
        assert good.observation_for(5) is None


class TestMemoryBank:
    """Bank invariants"""

    def test_empty_bank_allowed(self):
        assert MemoryBank().entries == ()

    def test_capacity_enforced(self):
        entries = (entry(0, True),) + tuple(entry(t) for t in range(1, 4))
        with pytest.raises(ValidationError):
            MemoryBank(capacity=3, entries=entries)

    def test_conditioning_entry_must_lead(self):
        with pytest.raises(ValidationError):
            MemoryBank(entries=(entry(0), entry(1, True)))
        with pytest.raises(ValidationError):
            MemoryBank(entries=(entry(0, True), entry(1, True)))

    def test_times_strictly_increase(self):
        with pytest.raises(ValidationError):
            MemoryBank(entries=(entry(0, True), entry(3), entry(3)))

    def test_views(self):
        bank = MemoryBank(entries=(entry(0, True), entry(2), entry(5)))
        assert bank.conditioning_entry.t == 0
        assert [e.t for e in bank.recent_entries] == [2, 5]


class TestSelectionDecision:
    """Saved flag agrees with the strict threshold"""

    def test_contradiction_rejected(self):
        with pytest.raises(ValidationError):
            SelectionDecision(track_id=0, score_s=0.5, tau=0.5, saved=True)

    def test_boundary_is_not_saved(self):
        decision = SelectionDecision(track_id=0, score_s=0.5, tau=0.5, saved=False)
        assert not decision.saved


class TestDiscIntersection:
    """Analytic overlap of two discs"""

    def test_disjoint(self):
        assert disc_intersection(disc(0, 0, 1), disc(3, 0, 1)) == 0.0

    def test_contained(self):
        assert disc_intersection(disc(0, 0, 1), disc(0.2, 0, 3)) == pytest.approx(math.pi)

    def test_symmetric_exactly(self, rng):
        for _ in range(200):
            a = disc(*rng.uniform(0, 10, 2), rng.uniform(0.5, 4))
            b = disc(*rng.uniform(0, 10, 2), rng.uniform(0.5, 4))
            assert disc_intersection(a, b) == disc_intersection(b, a)

    def test_half_lens_of_equal_discs(self):
        # Unit discs one radius apart share 2*pi/3 - sqrt(3)/2.
        expected = 2 * math.pi / 3 - math.sqrt(3) / 2
        assert disc_intersection(disc(0, 0, 1), disc(1, 0, 1)) == pytest.approx(expected, abs=1e-12)
