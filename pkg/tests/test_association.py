import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import uotrack.association as association
from uotrack.association import (
    DEFAULT_MEMORY_SIZE,
    MemoryBank,
    Tracker,
    TrackerConfig,
    TrackStatus,
    aggregate_memory,
    iou_gate,
    similarity_matrix,
    track_sequence,
)
from uotrack.geometry import Box
from uotrack.metrics import clear_mot
from uotrack.simulator import ScenarioConfig, generate, scripted_crossing
from uotrack.structures import FrameDetections, TrackedObject


def naive_similarity(a, b):
    m, n = len(a), len(b)
    dots = [[sum(a[i][k] * b[j][k] for k in range(len(a[i]))) for j in range(n)] for i in range(m)]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            row = sum(np.exp(dots[i][jj]) for jj in range(n))
            col = sum(np.exp(dots[ii][j]) for ii in range(m))
            out[i, j] = 0.5 * (np.exp(dots[i][j]) / row + np.exp(dots[i][j]) / col)
    return out


def dets(boxes, embeddings, masks=None):
    return FrameDetections([Box(*b) if not isinstance(b, Box) else b for b in boxes], np.array(embeddings, float), masks)


class TestMemory:
    def test_single(self):
        bank = MemoryBank(4)
        bank.push(np.array([1.0, 2.0]))
        assert np.array_equal(aggregate_memory(bank), [1.0, 2.0])

    def test_two_entries(self):
        bank = MemoryBank(4)
        e1, e2 = np.array([3.0, 0.0]), np.array([0.0, 3.0])
        bank.push(e1)
        bank.push(e2)
        assert np.allclose(aggregate_memory(bank), (e1 + 2 * e2) / 3)

    def test_identical_entries(self):
        bank = MemoryBank(8)
        e = np.array([0.3, -0.7, 0.2])
        for _ in range(6):
            bank.push(e)
        assert np.allclose(aggregate_memory(bank), e)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_memory(MemoryBank(3))

    def test_fifo_eviction(self):
        bank = MemoryBank(3)
        for k in range(5):
            bank.push(np.array([float(k)]))
        assert [e[0] for e in bank.ordered()] == [2.0, 3.0, 4.0]

    def test_pinned_survives(self):
        bank = MemoryBank(3, pinned_first=np.array([-1.0]))
        for k in range(10):
            bank.push(np.array([float(k)]))
            assert len(bank) <= 3
        assert [e[0] for e in bank.ordered()] == [-1.0, 8.0, 9.0]
        # pinned entry takes weight 1 of 6
        assert aggregate_memory(bank)[0] == pytest.approx((-1 + 2 * 8 + 3 * 9) / 6)

    def test_capacity_one_with_pin(self):
        bank = MemoryBank(1)
        bank.pin(np.array([5.0]))
        bank.push(np.array([1.0]))
        assert [e[0] for e in bank.ordered()] == [5.0]

    @pytest.mark.parametrize("capacity", sorted(set(DEFAULT_MEMORY_SIZE.values())))
    def test_default_mode_sizes(self, capacity):
        bank = MemoryBank(capacity)
        bank.pin(np.zeros(2))
        for k in range(3 * capacity):
            bank.push(np.full(2, k))
            assert len(bank) <= capacity
        assert bank.ordered()[0] is bank.pinned_first


class TestSimilarity:
    def test_single(self):
        assert similarity_matrix([[3.0, -2.0]], [[100.0, 4.0]]).tolist() == [[1.0]]

    def test_equal_dots(self):
        assert np.allclose(similarity_matrix([[1.0, 0.0]], [[0.5, 1.0], [0.5, -1.0]]), [[0.75, 0.75]])

    def test_random_against_naive(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 6)), rng.normal(size=(4, 6))
        assert np.max(np.abs(similarity_matrix(a, b) - naive_similarity(a.tolist(), b.tolist()))) < 1e-9

    @settings(max_examples=60)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1))
    def test_range_and_marginals(self, m, n, d, seed):
        rng = np.random.default_rng(seed)
        s = similarity_matrix(rng.normal(size=(m, d)) * 3, rng.normal(size=(n, d)) * 3)
        assert s.shape == (m, n)
        assert np.all(s > 0) and np.all(s <= 1)
        # total mass: each softmax sums to M (rows) or N (columns)
        assert s.sum() == pytest.approx(0.5 * (m + n))

    def test_large_logits_stable(self):
        s = similarity_matrix([[1000.0], [999.0]], [[1000.0], [-1000.0]])
        assert np.all(np.isfinite(s))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            similarity_matrix(np.ones((2, 3)), np.ones((2, 4)))
        with pytest.raises(ValueError):
            similarity_matrix(np.ones((0, 3)), np.ones((2, 3)))


class TestIouGate:
    tracks = np.array([[0.0, 0.0, 10.0, 10.0], [20.0, 0.0, 30.0, 10.0]])

    def test_all_pass(self):
        s = np.array([[0.3, 0.7], [0.6, 0.4]])
        g = iou_gate(s, self.tracks, self.tracks, 0.0)
        assert not np.ma.getmaskarray(g).any() and np.array_equal(g.data, s)

    def test_all_forbidden(self):
        far = self.tracks + 100
        g = iou_gate(np.ones((2, 2)), self.tracks, far, 0.25)
        assert np.ma.getmaskarray(g).all()
        assert association.hungarian(1.0 - g) == []

    def test_mixed(self):
        # det 0 equals track 0; det 1 overlaps track 1 with IoU 5/15, and nothing overlaps across
        det = np.array([[0.0, 0.0, 10.0, 10.0], [25.0, 0.0, 35.0, 10.0]])
        g = iou_gate(np.full((2, 2), 0.5), self.tracks, det, 0.25)
        assert np.ma.getmaskarray(g).tolist() == [[False, True], [True, False]]
        g = iou_gate(np.full((2, 2), 0.5), self.tracks, det, 0.4)
        assert np.ma.getmaskarray(g).tolist() == [[False, True], [True, True]]


class TestStep:
    def test_single_match(self):
        tr = Tracker(TrackerConfig("mot"))
        out0 = tr.step(dets([Box(0, 0, 10, 20, 0.9)], [[1.0, 0.0]]))
        out1 = tr.step(dets([Box(1, 0, 11, 20, 0.9)], [[-5.0, 3.0]]))
        assert [o.obj_id for o in out0] == [1] and [o.obj_id for o in out1] == [1]
        assert out1[0].box.x1 == 1

    def test_gated_and_weak(self):
        tr = Tracker(TrackerConfig("mot"))
        tr.step(dets([Box(0, 0, 10, 20, 0.9)], [[1.0, 0.0]]))
        out = tr.step(dets([Box(200, 200, 210, 220, 0.6)], [[1.0, 0.0]]))
        assert out == []
        assert tr.tracks[0].status is TrackStatus.LOST and len(tr.tracks) == 1

    def test_score_floor(self):
        tr = Tracker(TrackerConfig("mot", new_track_threshold=0.0))
        assert tr.step(dets([Box(0, 0, 10, 20, 0.3)], [[1.0]])) == []

    def test_termination(self):
        tr = Tracker(TrackerConfig("mot", max_age=2))
        tr.step(dets([Box(0, 0, 10, 20, 0.9)], [[1.0]]))
        for _ in range(3):
            tr.step(FrameDetections.empty(1))
        assert tr.tracks[0].status is TrackStatus.TERMINATED
        # a terminated track is never revived; the same box starts a new identity
        out = tr.step(dets([Box(0, 0, 10, 20, 0.9)], [[1.0]]))
        assert [o.obj_id for o in out] == [2]

    def test_instance_mode_never_terminates(self):
        init = [TrackedObject(7, Box(0, 0, 10, 20))]
        tr = Tracker(TrackerConfig("sot", max_age=1))
        tr.initialize(init, dets([Box(0, 0, 10, 20, 0.5)], [[1.0, 0.0]]))
        for _ in range(5):
            tr.step(FrameDetections.empty(2))
        assert tr.tracks[0].status is TrackStatus.LOST
        out = tr.step(dets([Box(0, 0, 10, 20, 0.99)], [[1.0, 0.0]]))
        assert [o.obj_id for o in out] == [7]

    def test_initialize_pins_best_overlap(self):
        tr = Tracker(TrackerConfig("sot"))
        tr.initialize([TrackedObject(1, Box(0, 0, 10, 10))], dets([Box(5, 5, 15, 15), Box(1, 0, 11, 10)], [[0.0, 1.0], [1.0, 0.0]]))
        assert tr.tracks[0].memory.pinned_first.tolist() == [1.0, 0.0]

    def test_mask_payload_required(self):
        tr = Tracker(TrackerConfig("mots"))
        with pytest.raises(ValueError):
            tr.step(dets([Box(0, 0, 1, 1, 0.9)], [[1.0]]))

    def test_embedding_dim_change(self):
        tr = Tracker(TrackerConfig("mot"))
        tr.step(dets([Box(0, 0, 1, 1, 0.9)], [[1.0]]))
        with pytest.raises(ValueError):
            tr.step(dets([Box(0, 0, 1, 1, 0.9)], [[1.0, 2.0]]))

    def test_config_defaults(self):
        assert TrackerConfig("sot").new_track_threshold == 1.0
        assert TrackerConfig("vos").memory_size == 64
        assert TrackerConfig("mot").new_track_threshold == 0.7
        assert TrackerConfig("vis").memory_size == 3
        assert TrackerConfig().iou_threshold == 0.25
        with pytest.raises(ValueError):
            TrackerConfig("det")


def ids_by_source(scenario, result):
    """Map every output id to the set of ground-truth ids whose exact box it reported."""
    seen = {}
    for gt, out in zip(scenario.ground_truth, result):
        boxes = {o.box.as_xyxy()[:4]: o.obj_id for o in gt}
        for o in out:
            seen.setdefault(o.obj_id, set()).add(boxes.get(o.box.as_xyxy()[:4]))
    return seen


class TestSequences:
    def test_perfect_detections(self):
        sc = generate(ScenarioConfig(seed=1, frame_count=60, target_count=6, true_score_range=(1.0, 1.0)))
        out = track_sequence(TrackerConfig("mot"), sc.detections)
        mapping = {}
        for gt, res in zip(sc.ground_truth, out):
            assert len(gt) == len(res)
            by_box = {o.box.as_xyxy(): o.obj_id for o in gt}
            for o in res:
                mapping.setdefault(o.obj_id, by_box[o.box.as_xyxy()])
                assert mapping[o.obj_id] == by_box[o.box.as_xyxy()]
        assert len(set(mapping.values())) == len(mapping) == 6

    def test_crossing_with_appearance(self):
        sc = scripted_crossing(10, 3, 90)
        out = track_sequence(TrackerConfig("mot"), sc.detections)
        assert all(len(s) == 1 for s in ids_by_source(sc, out).values())
        assert clear_mot(sc.ground_truth, out).ids == 0

    def test_crossing_iou_only_switches(self):
        sc = scripted_crossing(10, 3, 90)
        out = track_sequence(TrackerConfig("mot", use_appearance=False), sc.detections)
        assert clear_mot(sc.ground_truth, out).ids >= 2

    def test_empty_stream(self):
        assert track_sequence(TrackerConfig("mot"), [FrameDetections.empty(4)] * 5) == [[]] * 5
        init = [TrackedObject(1, Box(0, 0, 5, 5))]
        tr = Tracker(TrackerConfig("sot"))
        tr.initialize(init)
        for _ in range(4):
            assert tr.step(FrameDetections.empty(4)) == []
        assert tr.tracks[0].status is TrackStatus.LOST

    def test_initial_annotation_contract(self):
        sc = scripted_crossing(10, 3, 90, frame_count=6)
        with pytest.raises(ValueError):
            track_sequence(TrackerConfig("sot"), sc.detections)
        with pytest.raises(ValueError):
            track_sequence(TrackerConfig("mot"), sc.detections, sc.initial_annotation())

    def test_replay_determinism(self):
        sc = generate(ScenarioConfig(seed=5, frame_count=50, target_count=5, fn_rate=0.1, fp_rate=0.2, box_jitter_std=0.03, embedding_noise_deg=15))
        a = track_sequence(TrackerConfig("mot"), sc.detections)
        b = track_sequence(TrackerConfig("mot"), sc.detections)
        assert a == b

    def test_ids_never_reused(self):
        sc = generate(ScenarioConfig(seed=8, frame_count=80, target_count=6, fn_rate=0.3, fp_rate=0.3, box_jitter_std=0.05, lifespans=[(0, 20), (10, 50), (30, 80), (0, 80), (40, 45), (60, 80)]))
        tr = Tracker(TrackerConfig("mot", max_age=3))
        for d in sc.detections:
            tr.step(d)
        ids = [t.track_id for t in tr.tracks]
        assert ids == sorted(set(ids)) and ids == list(range(1, len(ids) + 1))

    @pytest.mark.parametrize("mode", ["sot", "vos"])
    def test_instance_modes_create_no_ids(self, mode):
        for seed in range(5):
            sc = generate(ScenarioConfig(seed=seed, frame_count=40, target_count=4, fp_rate=0.5, true_score_range=(0.9, 1.0), mask_shape="ellipse" if mode == "vos" else None))
            n_init = 1 if mode == "sot" else 3
            init = sc.initial_annotation()[:n_init]
            out = track_sequence(TrackerConfig(mode), sc.detections, init)
            assert {o.obj_id for f in out for o in f} <= {o.obj_id for o in init}

    def test_pin_present_in_every_aggregate(self, monkeypatch):
        calls = []
        real = association.aggregate_memory

        def spy(bank):
            calls.append((len(bank), bank.capacity, bank.pinned_first is not None))
            return real(bank)

        monkeypatch.setattr(association, "aggregate_memory", spy)
        sc = generate(ScenarioConfig(seed=2, frame_count=100, target_count=3, embedding_noise_deg=5))
        track_sequence(TrackerConfig("sot", memory_size=3), sc.detections, sc.initial_annotation()[:1])
        assert len(calls) > 50
        assert all(pinned and size <= cap for size, cap, pinned in calls)


class TestSnapshot:
    def test_round_trip_continues_identically(self):
        sc = generate(ScenarioConfig(seed=12, frame_count=40, target_count=4, fn_rate=0.1, fp_rate=0.1, box_jitter_std=0.02, embedding_noise_deg=10, mask_shape="rectangle", arena_width=200, arena_height=160, width_range=(10, 30), height_range=(20, 40)))
        a = Tracker(TrackerConfig("mots"))
        for d in sc.detections[:20]:
            a.step(d)
        text = a.dumps()
        b = Tracker.loads(text)
        assert b.dumps() == text
        for d in sc.detections[20:]:
            assert a.step(d) == b.step(d)

    def test_version_check(self):
        snap = json.loads(Tracker().dumps())
        snap["version"] = 99
        with pytest.raises(ValueError):
            Tracker.from_snapshot(snap)
