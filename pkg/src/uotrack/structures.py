"""Per-frame containers shared by the tracker, metrics, simulator and file IO."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, RleMask


@dataclass(frozen=True)
class TrackedObject:
    """One identity in one frame: a ground-truth object or a tracker output."""

    obj_id: int
    box: Box
    mask: RleMask | None = None


# frames[t] lists the objects present in frame t
SequenceAnnotation = list[list[TrackedObject]]


@dataclass(eq=False)
class FrameDetections:
    boxes: list[Box]
    embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    masks: list[RleMask] | None = None

    def __post_init__(self) -> None:
        emb = np.asarray(self.embeddings, dtype=float)
        if emb.ndim == 1 and emb.size == 0:
            emb = emb.reshape(0, 0)
        if emb.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {emb.shape}")
        if emb.shape[0] != len(self.boxes) and not (emb.size == 0 and not self.boxes):
            raise ValueError(f"{len(self.boxes)} boxes but {emb.shape[0]} embeddings")
        if self.masks is not None and len(self.masks) != len(self.boxes):
            raise ValueError(f"{len(self.boxes)} boxes but {len(self.masks)} masks")
        self.embeddings = emb

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def empty(cls, dim: int = 0, with_masks: bool = False) -> FrameDetections:
        return cls([], np.zeros((0, dim)), [] if with_masks else None)

    def subset(self, keep: list[int]) -> FrameDetections:
        return FrameDetections(
            [self.boxes[i] for i in keep],
            self.embeddings[keep] if len(keep) else np.zeros((0, self.embeddings.shape[1])),
            None if self.masks is None else [self.masks[i] for i in keep],
        )
