import math

import numpy as np
import pytest

from helpers import basis, frame, obs, tracker_config
from memtrack.core import ALL_AXES, FeatureVec, MemoryBank, MemoryEntry, random_unit
from memtrack.errors import EmptyBank, FixedTargetSet, NonMonotonicFrameIndex
from memtrack.policy import PolicyKind
from memtrack.tracker import (
    Tracker,
    TrackingMode,
    associate,
    encode_feature,
    noise_generator,
    readout,
    reidentify,
    restrict_to_slot,
    run,
    run_one_by_one,
    save_rates,
)

COUPLED, DECOUPLED = PolicyKind.COUPLED, PolicyKind.DECOUPLED


def bank_of(*features, capacity=7):
    entries = [MemoryEntry(t=0, feature=features[0], pointer=basis(0, 4), conditioning=True)]
    entries += [MemoryEntry(t=t, feature=f, pointer=basis(0, 4)) for t, f in enumerate(features[1:], start=1)]
    return MemoryBank(capacity=capacity, entries=tuple(entries))


def started(config, observations):
    tracker = Tracker(config)
    tracker.step(frame(0, observations))
    return tracker


THREE = [obs(0, 20, 20), obs(1, 50, 50), obs(2, 80, 80)]


class TestEncodeFeature:
    """Visibility-weighted feature encoding"""

    def test_fully_visible_returns_embedding(self):
        embedding = FeatureVec.from_array(np.arange(1, 17, dtype=float))
        feature, pointer = encode_feature(obs(0, 0, 0, embedding=embedding), noise_generator(1, 0))
        assert feature == embedding
        assert pointer == FeatureVec.from_array(embedding.as_array()[:4])

    def test_draw_consumed_even_when_visible(self):
        rng_a, rng_b = noise_generator(5, 0), noise_generator(5, 0)
        encode_feature(obs(0, 0, 0), rng_a)
        encode_feature(obs(0, 0, 0, v=0.5), rng_b)
        assert rng_a.standard_normal() == rng_b.standard_normal()

    def test_deterministic(self):
        first = encode_feature(obs(0, 0, 0, v=0.3), noise_generator(9, 2, 1))
        second = encode_feature(obs(0, 0, 0, v=0.3), noise_generator(9, 2, 1))
        assert first == second

    def test_partial_visibility_cosine(self):
        feature, _ = encode_feature(obs(0, 0, 0, v=0.2), noise_generator(3, 0))
        assert feature.cosine(basis(0)) == pytest.approx(0.2 / math.sqrt(0.2 ** 2 + 0.8 ** 2), abs=1e-12)

    def test_blank_feature_is_noise(self, rng):
        dim = 16
        expected = math.exp(math.lgamma(dim / 2) - math.lgamma((dim + 1) / 2)) / math.sqrt(math.pi)
        noise_rng = noise_generator(17, 0)
        values = []
        for _ in range(10_000):
            embedding = random_unit(rng, dim, ALL_AXES)
            feature, _ = encode_feature(obs(0, 0, 0, embedding=embedding, v=0.0, q=0.0), noise_rng)
            values.append(abs(feature.cosine(embedding)))
        mean = float(np.mean(values))
        assert mean < 0.5
        assert mean == pytest.approx(expected, abs=0.01)

    def test_zero_pointer_falls_back_to_basis(self):
        embedding = basis(6)
        _, pointer = encode_feature(obs(0, 0, 0, embedding=embedding), noise_generator(0, 0))
        assert pointer == basis(0, 4)


class TestReadout:
    """Bank recall"""

    def test_contains_query(self):
        assert readout(bank_of(basis(0), basis(4)), basis(4)) == pytest.approx(1.0)

    def test_orthogonal_bank(self):
        assert readout(bank_of(basis(0), basis(2), basis(6)), basis(4)) == 0.0

    def test_single_pollution_ignored(self):
        assert readout(bank_of(basis(0), basis(0), basis(1)), basis(0)) == pytest.approx(1.0)

    def test_conditioning_only_while_window_empty(self):
        assert readout(bank_of(basis(0)), basis(0)) == pytest.approx(1.0)
        assert readout(bank_of(basis(0), basis(1)), basis(0)) == 0.0

    def test_empty_bank(self):
        with pytest.raises(EmptyBank):
            readout(MemoryBank(), basis(0))


class TestAssociate:
    """Observation-to-track matching"""

    def test_pvs_matches_own_slot(self):
        tracker = started(tracker_config(mode=TrackingMode.PVS), THREE)
        result = associate(frame(1, [obs(0, 20.5, 20), obs(1, 50, 50.5)]), list(tracker.tracks.values()),
                           tracker.config)
        assert result.matches == {0: 0, 1: 1}
        assert result.unobserved == (2,)

    def test_pvs_rapid_motion_breaks_gate(self):
        tracker = started(tracker_config(mode=TrackingMode.PVS), THREE)
        # gate is 2 * (5 + 5) = 20; move ten times that
        result = associate(frame(1, [obs(0, 20 + 200, 20)]), list(tracker.tracks.values()), tracker.config)
        assert result.matches == {}
        assert [o.slot for o in result.unmatched] == [0]

    def test_pcs_greedy_order(self):
        a = FeatureVec.from_array(0.9 * basis(0).as_array() + 0.3 * basis(2).as_array()
                                  + math.sqrt(0.1) * basis(4).as_array())
        b = FeatureVec.from_array(0.4 * basis(0).as_array() + 0.8 * basis(2).as_array()
                                  + math.sqrt(0.2) * basis(4).as_array())
        config = tracker_config(assoc_threshold=0.25)
        tracker = started(config, [obs(0, 40, 40, embedding=basis(0)), obs(1, 45, 40, embedding=basis(2))])
        result = associate(frame(1, [obs(5, 42, 40, embedding=a), obs(6, 43, 40, embedding=b)]),
                           list(tracker.tracks.values()), config)
        assert result.matches == {5: 0, 6: 1}

    def test_pcs_ignores_blank_observations(self):
        tracker = started(tracker_config(), THREE)
        result = associate(frame(1, [obs(0, 20, 20, v=0.0, q=0.0)]), list(tracker.tracks.values()), tracker.config)
        assert result.matches == {}
        assert result.unmatched == ()


class TestReidentify:
    """Recovery of inactive tracks"""

    def test_clean_bank_restores_identity(self):
        tracker = started(tracker_config(), THREE)
        track = tracker.tracks[1].model_copy(update={"active": False})
        assert reidentify(obs(1, 0, 0), [track], 0.6) == 1

    def test_flushed_bank_gives_new_track(self):
        tracker = started(tracker_config(), THREE)
        flushed = tracker.tracks[1].model_copy(update={
            "active": False,
            "bank": bank_of(basis(2), *[basis(2 * k + 1) for k in range(6)]),
        })
        assert reidentify(obs(1, 0, 0), [flushed], 0.6) is None

    def test_no_candidates(self):
        assert reidentify(obs(1, 0, 0), [], 0.6) is None

    def test_best_readout_wins(self):
        tracker = started(tracker_config(), THREE)
        candidates = [t.model_copy(update={"active": False}) for t in tracker.tracks.values()]
        assert reidentify(obs(9, 0, 0, embedding=basis(4)), candidates, 0.6) == 2


class TestTrackerStep:
    """Frame loop"""

    def test_first_frame_creates_one_group(self):
        tracker = Tracker(tracker_config())
        result = tracker.step(frame(0, THREE))
        assert result.new_track_ids == (0, 1, 2)
        assert len(tracker.groups) == 1 and tracker.groups[0].members == (0, 1, 2)
        for track in tracker.tracks.values():
            assert len(track.bank.entries) == 1 and track.bank.entries[0].conditioning
        assert all(output.decision is None for output in result.outputs)

    def test_pcs_new_object_gets_own_group(self):
        tracker = Tracker(tracker_config())
        tracker.step(frame(0, THREE))
        result = tracker.step(frame(5, THREE + [obs(3, 10, 90)]))
        assert result.new_track_ids == (3,)
        assert [g.members for g in tracker.groups] == [(0, 1, 2), (3,)]
        assert [o.decision is not None for o in result.outputs] == [True, True, True, False]
        following = tracker.step(frame(6, THREE + [obs(3, 10, 90)]))
        assert all(o.decision is not None for o in following.outputs)

    def test_pvs_rejects_new_slot(self):
        tracker = Tracker(tracker_config(mode=TrackingMode.PVS))
        tracker.step(frame(0, THREE))
        result = tracker.step(frame(5, THREE + [obs(3, 10, 90)]))
        assert result.new_track_ids == ()
        assert len(tracker.tracks) == 3
        with pytest.raises(FixedTargetSet):
            tracker.init_group([obs(3, 10, 90)], 6)

    def test_frames_must_increase(self):
        tracker = Tracker(tracker_config())
        tracker.step(frame(3, THREE))
        with pytest.raises(NonMonotonicFrameIndex):
            tracker.step(frame(3, THREE))

    @pytest.mark.parametrize("policy,saved", [(COUPLED, True), (DECOUPLED, False)])
    def test_absent_member_decision(self, policy, saved):
        tracker = Tracker(tracker_config(policy=policy))
        tracker.step(frame(0, THREE))
        absent = obs(0, 20, 20, embedding=basis(1), v=0.0, q=0.0)
        result = tracker.step(frame(1, [absent] + THREE[1:]))
        output = result.output_for(0)
        assert output.decision.saved is saved
        assert output.mask.visible_fraction == 0.0 and output.q == 0.0
        assert len(tracker.tracks[0].bank.entries) == (2 if saved else 1)
        assert not tracker.tracks[0].active

    def test_single_target_policies_agree(self, rng):
        frames = [frame(t, [obs(0, 50 + t, 50, q=float(rng.uniform()), v=float(rng.choice([0.0, 0.5, 1.0])))],
                        presence=float(rng.uniform())) for t in range(12)]
        frames[0] = frame(0, [obs(0, 50, 50)])
        coupled = run(frames, tracker_config(policy=COUPLED))
        decoupled = run(frames, tracker_config(policy=DECOUPLED))
        assert coupled.frames == decoupled.frames
        assert coupled.tracks == decoupled.tracks

    def test_reentry_after_short_gap_keeps_id(self):
        config = tracker_config(policy=DECOUPLED)
        frames = [frame(0, THREE), frame(1, THREE[1:]), frame(2, THREE)]
        record = run(frames, config)
        assert len(record.tracks) == 3
        assert record.frames[2].output_for(0).mask.visible_fraction == 1.0

    def test_track_ids_never_reused(self):
        config = tracker_config()
        frames = [frame(0, THREE), frame(1, [obs(0, 20, 20, embedding=basis(9))]), frame(2, [obs(5, 70, 10)])]
        record = run(frames, config)
        ids = [track.track_id for track in record.tracks]
        assert ids == sorted(set(ids))
        assert len(record.groups) == 3


class TestRun:
    """Whole runs"""

    def test_empty_stream(self):
        record = run([], tracker_config())
        assert record.frames == () and record.tracks == () and record.groups == ()

    def test_deterministic(self):
        frames = [frame(t, [obs(0, 20 + t, 20, v=0.5, q=0.9), obs(1, 60, 60 - t, q=0.7)]) for t in range(10)]
        assert run(frames, tracker_config(seed=4)) == run(frames, tracker_config(seed=4))

    def test_restrict_to_slot_keeps_presence(self):
        frames = [frame(0, THREE, presence=0.8)]
        restricted = restrict_to_slot(frames, 1)
        assert restricted[0].presence == 0.8
        assert [o.slot for o in restricted[0].observations] == [1]

    def test_coupled_breaks_one_by_one(self):
        frames = [
            frame(0, [obs(0, 20, 20), obs(1, 60, 60)]),
            frame(1, [obs(0, 20, 20, q=1.0), obs(1, 60, 60, q=0.2)]),
        ]
        config = tracker_config(policy=COUPLED, mode=TrackingMode.PVS)
        together = run(frames, config)
        alone = run_one_by_one(frames, config)
        assert together.frames[1].output_for(1).decision.saved
        assert not alone[1].frames[1].outputs[0].decision.saved

    def test_decoupled_matches_one_by_one(self):
        frames = [
            frame(0, [obs(0, 20, 20), obs(1, 60, 60)]),
            frame(1, [obs(0, 20, 20, q=1.0), obs(1, 60, 60, q=0.2)]),
            frame(2, [obs(0, 21, 20, q=0.9, v=0.5), obs(1, 61, 60, q=0.0, v=0.0)]),
        ]
        config = tracker_config(policy=DECOUPLED, mode=TrackingMode.PVS, seed=8)
        together = run(frames, config)
        alone = run_one_by_one(frames, config)
        for slot in (0, 1):
            for joint, single in zip(together.frames, alone[slot].frames):
                mine = [o for o in joint.outputs if o.slot == slot][0]
                other = single.outputs[0]
                assert (mine.mask, mine.q) == (other.mask, other.q)
                if mine.decision is not None:
                    assert (mine.decision.score_s, mine.decision.saved) == (
                        other.decision.score_s, other.decision.saved)
            assert together.tracks[slot].bank == alone[slot].tracks[0].bank

    def test_save_rates(self):
        frames = [
            frame(0, [obs(0, 20, 20), obs(1, 60, 60)]),
            frame(1, [obs(0, 20, 20, q=1.0), obs(1, 60, 60, q=0.2)]),
            frame(2, [obs(0, 20, 20, q=1.0), obs(1, 60, 60, q=0.9)]),
        ]
        rates = save_rates(run(frames, tracker_config(policy=DECOUPLED)))
        assert rates == {0: 1.0, 1: 0.5}
