"""Online tracker shared by every task mode.

Each frame: Kalman-predict every live track, score track/detection pairs by
the bidirectional softmax similarity of memory-aggregated embeddings, forbid
pairs whose predicted-box IoU falls below ``iou_threshold``, solve the
assignment on ``1 - S``, then update matched tracks, age unmatched ones and
spawn tracks from confident leftovers.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .assignment import hungarian
from .geometry import Box, RleMask, box_iou, box_iou_matrix, boxes_to_array, mask_to_box, rle_decode
from .motion import KalmanState, kf_init, kf_predict, kf_update, state_to_box
from .structures import FrameDetections, SequenceAnnotation, TrackedObject

INSTANCE_MODES = ("sot", "vos")
CATEGORY_MODES = ("mot", "mots", "vis")
MASK_MODES = ("vos", "mots", "vis")
DEFAULT_MEMORY_SIZE = {"sot": 64, "vos": 64, "mot": 32, "mots": 32, "vis": 3}
SNAPSHOT_VERSION = 1


class TrackStatus(str, Enum):
    ACTIVE = "active"
    LOST = "lost"
    TERMINATED = "terminated"


class MemoryBank:
    """FIFO of identity embeddings with an optional pinned first entry.

    ``capacity`` bounds the total number of stored embeddings, pinned one
    included; the pinned entry is never evicted.
    """

    def __init__(self, capacity: int, pinned_first: np.ndarray | None = None):
        if capacity < 1:
            raise ValueError("memory capacity must be at least 1")
        self.capacity = capacity
        self.pinned_first = None if pinned_first is None else np.asarray(pinned_first, dtype=float)
        self.entries: deque[np.ndarray] = deque(maxlen=self._fifo_size())

    def _fifo_size(self) -> int:
        return self.capacity - (self.pinned_first is not None)

    def pin(self, embedding: np.ndarray) -> None:
        self.pinned_first = np.asarray(embedding, dtype=float)
        self.entries = deque(self.entries, maxlen=self._fifo_size())

    def push(self, embedding: np.ndarray) -> None:
        if self.entries.maxlen:
            self.entries.append(np.asarray(embedding, dtype=float))

    def ordered(self) -> list[np.ndarray]:
        """Stored embeddings oldest first, pinned entry leading."""
        head = [] if self.pinned_first is None else [self.pinned_first]
        return head + list(self.entries)

    def __len__(self) -> int:
        return len(self.entries) + (self.pinned_first is not None)


def aggregate_memory(bank: MemoryBank) -> np.ndarray:
    """Recency-weighted mean: the k-th oldest of n entries gets weight ``k / (n(n+1)/2)``."""
    items = bank.ordered()
    if not items:
        raise ValueError("cannot aggregate an empty memory bank")
    n = len(items)
    weights = np.arange(1, n + 1) / (n * (n + 1) / 2)
    return weights @ np.stack(items)


def similarity_matrix(track_embeddings: np.ndarray, det_embeddings: np.ndarray) -> np.ndarray:
    """Bidirectional similarity, shape ``(M tracks, N detections)``.

    Entry ``[m, n]`` averages the softmax of ``e_m . e_n`` over detections
    and its softmax over tracks.
    """
    a = np.asarray(track_embeddings, dtype=float)
    b = np.asarray(det_embeddings, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding shapes {a.shape} and {b.shape} are incompatible")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("similarity needs at least one track and one detection")
    logits = a @ b.T
    over_dets = logits - logits.max(axis=1, keepdims=True)
    over_dets = over_dets - np.log(np.exp(over_dets).sum(axis=1, keepdims=True))
    over_tracks = logits - logits.max(axis=0, keepdims=True)
    over_tracks = over_tracks - np.log(np.exp(over_tracks).sum(axis=0, keepdims=True))
    return 0.5 * (np.exp(over_dets) + np.exp(over_tracks))


def iou_gate(s: np.ndarray, predicted_boxes: np.ndarray, det_boxes: np.ndarray, tau: float) -> np.ma.MaskedArray:
    """Mask every entry whose predicted-box/detection IoU is below ``tau``."""
    iou = box_iou_matrix(predicted_boxes, det_boxes)
    if iou.shape != np.shape(s):
        raise ValueError(f"similarity shape {np.shape(s)} does not match IoU shape {iou.shape}")
    return np.ma.masked_array(np.asarray(s, dtype=float), mask=iou < tau)


@dataclass
class TrackerConfig:
    mode: str = "mot"
    iou_threshold: float = 0.25
    new_track_threshold: float | None = None
    memory_size: int | None = None
    score_floor: float = 0.4
    max_age: int = 30
    use_appearance: bool = True
    normalize_embeddings: bool = False

    def __post_init__(self) -> None:
        if self.mode not in INSTANCE_MODES + CATEGORY_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold {self.iou_threshold} outside [0, 1]")
        if self.new_track_threshold is None:
            self.new_track_threshold = 1.0 if self.is_instance else 0.7
        if self.memory_size is None:
            self.memory_size = DEFAULT_MEMORY_SIZE[self.mode]
        if self.memory_size < 1:
            raise ValueError("memory_size must be positive")
        if self.max_age < 0:
            raise ValueError("max_age must be non-negative")

    @property
    def is_instance(self) -> bool:
        return self.mode in INSTANCE_MODES

    @property
    def uses_masks(self) -> bool:
        return self.mode in MASK_MODES


@dataclass
class Track:
    track_id: int
    kalman: KalmanState
    memory: MemoryBank
    class_id: int = 0
    status: TrackStatus = TrackStatus.ACTIVE
    age_since_update: int = 0
    history: list[tuple[int, Box, RleMask | None]] = field(default_factory=list)

    def predicted_box(self) -> Box:
        return state_to_box(self.kalman)


class Tracker:
    """Single-sequence state machine; call ``step`` once per frame, in order."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self.frame_index = 0
        self.next_id = 1
        self.embedding_dim: int | None = None

    # -- lifecycle -------------------------------------------------------

    def initialize(self, targets: list[TrackedObject], dets: FrameDetections | None = None) -> list[TrackedObject]:
        """Start an instance-mode sequence from first-frame annotations.

        For each target the embedding of the frame-0 detection overlapping
        it most is pinned in its memory bank. Returns the frame-0 output.
        """
        if not self.config.is_instance:
            raise ValueError(f"{self.config.mode} tracks start empty; initialize() is for sot/vos")
        if self.frame_index or self.tracks:
            raise RuntimeError("tracker already started")
        if self.config.mode == "sot" and len(targets) != 1:
            raise ValueError(f"sot tracks exactly one target, got {len(targets)}")
        if dets is not None:
            self._check_payload(dets)
        out = []
        for obj in targets:
            if self.config.mode == "vos" and obj.mask is None:
                raise ValueError("vos initialization needs first-frame masks")
            box = obj.box
            if obj.mask is not None and self.config.mode == "vos":
                box = mask_to_box(rle_decode(obj.mask))
            track = Track(obj.obj_id, kf_init(box), MemoryBank(self.config.memory_size), box.class_id)
            if dets is not None and len(dets):
                ious = [box_iou(box, d) for d in dets.boxes]
                best = int(np.argmax(ious))
                if ious[best] > 0:
                    track.memory.pin(self._prepare_embedding(dets.embeddings[best]))
            track.history.append((0, box, obj.mask))
            self.tracks.append(track)
            out.append(TrackedObject(obj.obj_id, box, obj.mask))
        self.next_id = max([t.track_id for t in self.tracks], default=0) + 1
        self.frame_index = 1
        return sorted(out, key=lambda o: o.obj_id)

    def live_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.status is not TrackStatus.TERMINATED]

    def _check_payload(self, dets: FrameDetections) -> None:
        if self.config.uses_masks and dets.masks is None:
            raise ValueError(f"mode {self.config.mode} requires detection masks")
        if len(dets) and dets.embeddings.shape[1]:
            if self.embedding_dim is None:
                self.embedding_dim = dets.embeddings.shape[1]
            elif dets.embeddings.shape[1] != self.embedding_dim:
                raise ValueError(f"embedding dim changed from {self.embedding_dim} to {dets.embeddings.shape[1]}")

    def _prepare_embedding(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self.config.normalize_embeddings:
            norm = np.linalg.norm(e)
            return e / norm if norm > 0 else e
        return e

    def _track_embedding(self, track: Track) -> np.ndarray:
        if len(track.memory) == 0:
            # only reachable in instance modes when frame 0 had no usable detection
            return np.zeros(self.embedding_dim or 0)
        return aggregate_memory(track.memory)

    def _score_matrix(self, tracks: list[Track], dets: FrameDetections, predicted: np.ndarray) -> np.ndarray:
        if not self.config.use_appearance:
            return box_iou_matrix(predicted, boxes_to_array(dets.boxes))
        track_emb = np.stack([self._track_embedding(t) for t in tracks])
        det_emb = np.stack([self._prepare_embedding(e) for e in dets.embeddings])
        return similarity_matrix(track_emb, det_emb)

    def step(self, dets: FrameDetections) -> list[TrackedObject]:
        cfg = self.config
        self._check_payload(dets)
        frame = self.frame_index

        live = self.live_tracks()
        for t in live:
            if t.status is TrackStatus.LOST:
                # coasting tracks keep their height; extrapolated shrinkage can go negative
                mean = t.kalman.mean.copy()
                mean[7] = 0.0
                t.kalman = KalmanState(mean, t.kalman.covariance)
            t.kalman = kf_predict(t.kalman)

        if not cfg.is_instance:
            dets = dets.subset([i for i, b in enumerate(dets.boxes) if b.score >= cfg.score_floor])

        matches: list[tuple[int, int]] = []
        if live and len(dets):
            predicted = np.array([t.predicted_box().as_xyxy() for t in live])
            s = self._score_matrix(live, dets, predicted)
            gated = iou_gate(s, predicted, boxes_to_array(dets.boxes), cfg.iou_threshold)
            matches = hungarian(1.0 - gated)

        outputs = []
        matched_tracks = set()
        matched_dets = set()
        for ti, di in matches:
            track = live[ti]
            box = dets.boxes[di]
            mask = None if dets.masks is None else dets.masks[di]
            track.kalman = kf_update(track.kalman, box)
            emb = self._prepare_embedding(dets.embeddings[di])
            if cfg.is_instance and track.memory.pinned_first is None:
                track.memory.pin(emb)
            else:
                track.memory.push(emb)
            track.status = TrackStatus.ACTIVE
            track.age_since_update = 0
            track.history.append((frame, box, mask))
            outputs.append(TrackedObject(track.track_id, box, mask))
            matched_tracks.add(ti)
            matched_dets.add(di)

        for ti, track in enumerate(live):
            if ti in matched_tracks:
                continue
            track.age_since_update += 1
            track.status = TrackStatus.LOST
            if not cfg.is_instance and track.age_since_update > cfg.max_age:
                track.status = TrackStatus.TERMINATED

        for di, box in enumerate(dets.boxes):
            if di in matched_dets or box.score <= cfg.new_track_threshold:
                continue
            mask = None if dets.masks is None else dets.masks[di]
            track = Track(self.next_id, kf_init(box), MemoryBank(cfg.memory_size), box.class_id)
            self.next_id += 1
            track.memory.push(self._prepare_embedding(dets.embeddings[di]))
            track.history.append((frame, box, mask))
            self.tracks.append(track)
            outputs.append(TrackedObject(track.track_id, box, mask))

        self.frame_index += 1
        return sorted(outputs, key=lambda o: o.obj_id)

    # -- snapshots -------------------------------------------------------

    def to_snapshot(self) -> dict:
        """JSON-ready state; ``from_snapshot`` restores an equivalent tracker."""

        def box_dict(b: Box) -> dict:
            return asdict(b)

        return {
            "version": SNAPSHOT_VERSION,
            "config": asdict(self.config),
            "frame_index": self.frame_index,
            "next_id": self.next_id,
            "embedding_dim": self.embedding_dim,
            "tracks": [
                {
                    "track_id": t.track_id,
                    "class_id": t.class_id,
                    "status": t.status.value,
                    "age_since_update": t.age_since_update,
                    "mean": t.kalman.mean.tolist(),
                    "covariance": t.kalman.covariance.tolist(),
                    "memory": {
                        "capacity": t.memory.capacity,
                        "pinned_first": None if t.memory.pinned_first is None else t.memory.pinned_first.tolist(),
                        "entries": [e.tolist() for e in t.memory.entries],
                    },
                    "history": [
                        [f, box_dict(b), None if m is None else m.to_string()] for f, b, m in t.history
                    ],
                }
                for t in self.tracks
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> Tracker:
        if snap.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {snap.get('version')!r}")
        tracker = cls(TrackerConfig(**snap["config"]))
        tracker.frame_index = snap["frame_index"]
        tracker.next_id = snap["next_id"]
        tracker.embedding_dim = snap["embedding_dim"]
        for t in snap["tracks"]:
            mem = t["memory"]
            bank = MemoryBank(mem["capacity"], None if mem["pinned_first"] is None else np.array(mem["pinned_first"]))
            for e in mem["entries"]:
                bank.push(np.array(e))
            tracker.tracks.append(
                Track(
                    t["track_id"],
                    KalmanState(np.array(t["mean"]), np.array(t["covariance"])),
                    bank,
                    t["class_id"],
                    TrackStatus(t["status"]),
                    t["age_since_update"],
                    [(f, Box(**b), None if m is None else RleMask.from_string(m)) for f, b, m in t["history"]],
                )
            )
        return tracker

    def dumps(self) -> str:
        return json.dumps(self.to_snapshot(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> Tracker:
        return cls.from_snapshot(json.loads(text))


def track_sequence(
    config: TrackerConfig,
    detections: Iterable[FrameDetections],
    initial: list[TrackedObject] | None = None,
) -> SequenceAnnotation:
    """Run a whole sequence; instance modes consume frame 0 for initialization."""
    tracker = Tracker(config)
    frames = iter(detections)
    results: SequenceAnnotation = []
    if config.is_instance:
        if not initial:
            raise ValueError(f"mode {config.mode} needs a first-frame annotation")
        first = next(frames, None)
        results.append(tracker.initialize(initial, first))
    elif initial:
        raise ValueError(f"mode {config.mode} does not take an initial annotation")
    for dets in frames:
        results.append(tracker.step(dets))
    return results
