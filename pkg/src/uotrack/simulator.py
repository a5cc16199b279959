"""Synthetic scenarios: ground-truth trajectories plus corrupted detections.

Randomness is drawn from independent PCG64 streams, one per
``(purpose, index, frame)`` triple, each seeded by
``numpy.random.SeedSequence(seed, spawn_key=(purpose, index, frame))``.
Changing one target's parameters therefore never perturbs another
target's draws.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Box, box_to_mask, rle_encode
from .structures import FrameDetections, SequenceAnnotation, TrackedObject

_INIT, _MOTION, _DETECT, _CLUTTER, _EMBED, _ORDER = range(6)


@dataclass
class Occlusion:
    """``occluded`` emits no detections on frames ``start <= t < end``."""

    occluder: int
    occluded: int
    start: int
    end: int


@dataclass
class ScenarioConfig:
    seed: int = 0
    frame_count: int = 100
    arena_width: float = 640.0
    arena_height: float = 480.0
    target_count: int = 4
    width_range: tuple[float, float] = (30.0, 60.0)
    height_range: tuple[float, float] = (60.0, 120.0)
    speed_range: tuple[float, float] = (1.0, 4.0)
    turn_noise: float = 0.05
    # per-target (birth, death) frames, death exclusive; None keeps everyone alive
    lifespans: list[tuple[int, int]] | None = None
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    box_jitter_std: float = 0.0
    true_score_range: tuple[float, float] = (0.5, 1.0)
    clutter_score_range: tuple[float, float] = (0.0, 1.0)
    embedding_dim: int = 16
    embedding_noise_deg: float = 0.0
    occlusions: list[Occlusion] = field(default_factory=list)
    mask_shape: str | None = None
    class_id: int = 0

    def __post_init__(self) -> None:
        self.occlusions = [o if isinstance(o, Occlusion) else Occlusion(*o) for o in self.occlusions]
        if self.lifespans is not None:
            self.lifespans = [tuple(span) for span in self.lifespans]
        for name in ("width_range", "height_range", "speed_range", "true_score_range", "clutter_score_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("fn_rate", "fp_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.frame_count < 1:
            raise ValueError("frame_count must be at least 1")
        if self.target_count < 0:
            raise ValueError("target_count must be non-negative")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be at least 2")
        if self.box_jitter_std < 0 or self.embedding_noise_deg < 0 or self.turn_noise < 0:
            raise ValueError("noise parameters must be non-negative")
        for name in ("width_range", "height_range", "speed_range", "true_score_range", "clutter_score_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an ordered non-negative pair, got {(lo, hi)}")
        if self.true_score_range[1] > 1 or self.clutter_score_range[1] > 1:
            raise ValueError("scores must lie in [0, 1]")
        if self.width_range[1] >= self.arena_width or self.height_range[1] >= self.arena_height:
            raise ValueError("boxes must fit inside the arena")
        if self.lifespans is not None:
            if len(self.lifespans) != self.target_count:
                raise ValueError("lifespans needs one (birth, death) pair per target")
            for birth, death in self.lifespans:
                if not 0 <= birth < death:
                    raise ValueError(f"invalid lifespan {(birth, death)}")
        if len(self.occlusions) > self.target_count:
            raise ValueError("more occlusion events than targets")
        for o in self.occlusions:
            if not (0 <= o.occluder < self.target_count and 0 <= o.occluded < self.target_count):
                raise ValueError(f"occlusion {o} references a missing target")
            if o.occluder == o.occluded or o.start > o.end:
                raise ValueError(f"invalid occlusion {o}")
        if self.mask_shape not in (None, "rectangle", "ellipse"):
            raise ValueError(f"unknown mask_shape {self.mask_shape!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Scenario:
    config: ScenarioConfig
    ground_truth: SequenceAnnotation
    detections: list[FrameDetections]
    # sources[t][k]: ground-truth id behind detection k of frame t, -1 for clutter
    sources: list[list[int]]
    embedding_means: np.ndarray

    def initial_annotation(self, ids: list[int] | None = None) -> list[TrackedObject]:
        first = self.ground_truth[0]
        return [o for o in first if ids is None or o.obj_id in ids]


def stream(seed: int, purpose: int, index: int = 0, frame: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose, index, frame))))


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def perturb_embedding(mean: np.ndarray, noise_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian perturbation then renormalization; the typical deviation angle is ``noise_deg``."""
    if noise_deg == 0:
        return mean.copy()
    sigma = math.tan(math.radians(noise_deg)) / math.sqrt(mean.size - 1)
    v = mean + sigma * rng.standard_normal(mean.size)
    return v / np.linalg.norm(v)


def _jitter(box: Box, std: float, rng: np.random.Generator) -> Box:
    if std == 0:
        return box
    dx = rng.normal(0.0, std * box.width, 2)
    dy = rng.normal(0.0, std * box.height, 2)
    x1, x2 = box.x1 + dx[0], box.x2 + dx[1]
    y1, y2 = box.y1 + dy[0], box.y2 + dy[1]
    if x2 - x1 < 1.0:
        x1, x2 = box.x1, box.x2
    if y2 - y1 < 1.0:
        y1, y2 = box.y1, box.y2
    return Box(x1, y1, x2, y2)


def _simulate_trajectories(cfg: ScenarioConfig) -> list[list[Box | None]]:
    """``paths[i][t]`` is target i's box at frame t, or None outside its lifespan."""
    paths = []
    for i in range(cfg.target_count):
        rng = stream(cfg.seed, _INIT, i)
        w = rng.uniform(*cfg.width_range)
        h = rng.uniform(*cfg.height_range)
        x = rng.uniform(0, cfg.arena_width - w)
        y = rng.uniform(0, cfg.arena_height - h)
        speed = rng.uniform(*cfg.speed_range)
        heading = rng.uniform(0, 2 * math.pi)
        birth, death = cfg.lifespans[i] if cfg.lifespans else (0, cfg.frame_count)
        path: list[Box | None] = []
        for t in range(cfg.frame_count):
            if t > 0:
                heading += stream(cfg.seed, _MOTION, i, t).normal(0.0, cfg.turn_noise) if cfg.turn_noise else 0.0
                vx, vy = speed * math.cos(heading), speed * math.sin(heading)
                x, vx = _reflect(x + vx, vx, cfg.arena_width - w)
                y, vy = _reflect(y + vy, vy, cfg.arena_height - h)
                heading = math.atan2(vy, vx)
            path.append(Box(x, y, x + w, y + h, 1.0, cfg.class_id) if birth <= t < death else None)
        paths.append(path)
    return paths


def _reflect(pos: float, vel: float, upper: float) -> tuple[float, float]:
    if pos < 0:
        return -pos, -vel
    if pos > upper:
        return 2 * upper - pos, -vel
    return pos, vel


def _mask(box: Box, cfg: ScenarioConfig):
    if cfg.mask_shape is None:
        return None
    return rle_encode(box_to_mask(box, int(cfg.arena_height), int(cfg.arena_width), cfg.mask_shape))


def _occluded(cfg: ScenarioConfig, target: int, t: int) -> bool:
    return any(o.occluded == target and o.start <= t < o.end for o in cfg.occlusions)


def render(
    cfg: ScenarioConfig, paths: list[list[Box | None]], means: np.ndarray
) -> tuple[SequenceAnnotation, list[FrameDetections], list[list[int]]]:
    """Turn trajectories into ground truth plus corrupted detections."""
    gt: SequenceAnnotation = []
    frames: list[FrameDetections] = []
    sources: list[list[int]] = []
    for t in range(cfg.frame_count):
        objs, boxes, embs, masks, src = [], [], [], [], []
        for i, path in enumerate(paths):
            box = path[t]
            if box is None:
                continue
            objs.append(TrackedObject(i + 1, box, _mask(box, cfg)))
            rng = stream(cfg.seed, _DETECT, i, t)
            dropped = rng.random() < cfg.fn_rate
            if dropped or _occluded(cfg, i, t):
                continue
            det = _jitter(box, cfg.box_jitter_std, rng)
            score = rng.uniform(*cfg.true_score_range)
            boxes.append(Box(det.x1, det.y1, det.x2, det.y2, score, cfg.class_id))
            embs.append(perturb_embedding(means[i], cfg.embedding_noise_deg, rng))
            masks.append(_mask(det, cfg))
            src.append(i + 1)
        rng = stream(cfg.seed, _CLUTTER, 0, t)
        for _ in range(cfg.target_count):
            if rng.random() >= cfg.fp_rate:
                continue
            w = rng.uniform(*cfg.width_range)
            h = rng.uniform(*cfg.height_range)
            x = rng.uniform(0, cfg.arena_width - w)
            y = rng.uniform(0, cfg.arena_height - h)
            box = Box(x, y, x + w, y + h, rng.uniform(*cfg.clutter_score_range), cfg.class_id)
            boxes.append(box)
            embs.append(random_unit(rng, cfg.embedding_dim))
            masks.append(_mask(box, cfg))
            src.append(-1)
        order = stream(cfg.seed, _ORDER, 0, t).permutation(len(boxes)).tolist()
        gt.append(objs)
        frames.append(
            FrameDetections(
                [boxes[k] for k in order],
                np.array([embs[k] for k in order]).reshape(len(order), cfg.embedding_dim),
                None if cfg.mask_shape is None else [masks[k] for k in order],
            )
        )
        sources.append([src[k] for k in order])
    return gt, frames, sources


def generate(cfg: ScenarioConfig) -> Scenario:
    cfg.validate()
    means = np.array([random_unit(stream(cfg.seed, _EMBED, i), cfg.embedding_dim) for i in range(cfg.target_count)])
    means = means.reshape(cfg.target_count, cfg.embedding_dim)
    paths = _simulate_trajectories(cfg)
    gt, frames, sources = render(cfg, paths, means)
    return Scenario(cfg, gt, frames, sources, means)


def scripted_crossing(
    separation: float,
    speed: float,
    embedding_angle: float,
    frame_count: int = 40,
    pattern: str = "bounce",
    box_size: tuple[float, float] = (40.0, 80.0),
    embedding_dim: int = 16,
    embedding_noise_deg: float = 0.0,
    seed: int = 0,
) -> Scenario:
    """Two targets meet head-on at frame ``frame_count // 2``.

    ``separation`` offsets their lanes vertically and ``embedding_angle``
    (degrees) separates their appearance means. With ``pattern="bounce"``
    each target turns back at the meeting point, the case where a
    constant-velocity prediction points at the wrong target; ``"pass"``
    lets them continue through each other.
    """
    if pattern not in ("bounce", "pass"):
        raise ValueError(f"unknown crossing pattern {pattern!r}")
    w, h = box_size
    arena_w = 2 * speed * frame_count + 4 * w
    arena_h = 4 * h + abs(separation)
    cfg = ScenarioConfig(
        seed=seed,
        frame_count=frame_count,
        arena_width=arena_w,
        arena_height=arena_h,
        target_count=2,
        width_range=(w, w),
        height_range=(h, h),
        speed_range=(speed, speed),
        turn_noise=0.0,
        embedding_dim=embedding_dim,
        embedding_noise_deg=embedding_noise_deg,
        true_score_range=(1.0, 1.0),
    )
    crossing = frame_count // 2
    cx0, cy0 = arena_w / 2, arena_h / 2
    paths: list[list[Box | None]] = [[], []]
    for t in range(frame_count):
        offset = speed * (t - crossing)
        if pattern == "bounce":
            xs = (cx0 - abs(offset), cx0 + abs(offset))
        else:
            xs = (cx0 + offset, cx0 - offset)
        for i, (cx, cy) in enumerate(zip(xs, (cy0 - separation / 2, cy0 + separation / 2))):
            paths[i].append(Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    angle = math.radians(embedding_angle)
    means = np.zeros((2, embedding_dim))
    means[0, 0] = 1.0
    means[1, 0], means[1, 1] = math.cos(angle), math.sin(angle)
    gt, frames, sources = render(cfg, paths, means)
    return Scenario(cfg, gt, frames, sources, means)
