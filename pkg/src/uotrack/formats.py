"""File formats for the command line tools.

Detections, ground truth and results are CSV with a fixed header. Numbers
are written with ``repr`` so a read/write cycle is exact and repeated runs
are byte-identical. Embeddings travel in a little-endian binary file:

    header (16 bytes): b"EMB1", uint32 dim, uint64 rows
    row:               int64 frame, int64 candidate_id, dim x float64

Masks are RLE strings ``"h w c0 c1 ..."`` (column-major, zeros first).
Configs are flat TOML tables whose keys mirror ``TrackerConfig`` or
``ScenarioConfig``.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np

from .association import TrackerConfig
from .geometry import Box, RleMask
from .metrics import ClearMotResult, MetricsReport
from .simulator import Occlusion, Scenario, ScenarioConfig
from .structures import FrameDetections, SequenceAnnotation, TrackedObject

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DETECTION_HEADER = ["frame", "candidate_id", "x", "y", "w", "h", "score", "class_id"]
TRACK_HEADER = ["frame", "track_id", "x", "y", "w", "h", "score"]
MASK_HEADER = ["frame", "candidate_id", "rle"]
CURVE_HEADER = ["frame", "gt", "tp", "fp", "fn", "ids", "mota"]
EMBEDDING_MAGIC = b"EMB1"
_EMB_HEADER = struct.Struct("<4sIQ")


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _num(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read_csv(path: Path, header: list[str], optional: list[str] = ()) -> list[tuple[int, dict[str, str]]]:
    """Rows as ``(line_number, record)``; the header must match exactly, optional columns last."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        allowed = [header + list(optional[:k]) for k in range(len(optional) + 1)]
        if got not in allowed:
            raise FormatError(f"{path}:1: expected header {','.join(header)}, got {got}")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(got):
                raise FormatError(f"{path}:{reader.line_num}: expected {len(got)} fields, got {len(row)}")
            rows.append((reader.line_num, dict(zip(got, row))))
    return rows


def _parse(path: Path, line: int, record: dict[str, str], key: str, kind: type):
    try:
        value = kind(record[key])
    except ValueError:
        raise FormatError(f"{path}:{line}: bad {key} value {record[key]!r}") from None
    if kind is float and not np.isfinite(value):
        raise FormatError(f"{path}:{line}: non-finite {key}")
    return value


def _parse_box(path: Path, line: int, rec: dict[str, str], class_id: int = 0) -> Box:
    x, y, w, h, score = (_parse(path, line, rec, k, float) for k in ("x", "y", "w", "h", "score"))
    try:
        return Box.from_xywh(x, y, w, h, score, class_id)
    except ValueError as exc:
        raise FormatError(f"{path}:{line}: {exc}") from None


# -- detections -----------------------------------------------------------


def write_detections(path: Path, frames: list[FrameDetections]) -> None:
    rows = []
    for t, dets in enumerate(frames):
        for k, b in enumerate(dets.boxes):
            rows.append([str(t), str(k), *map(_num, b.as_xywh()), _num(b.score), str(b.class_id)])
    _write_csv(path, DETECTION_HEADER, rows)


def write_embeddings(path: Path, frames: list[FrameDetections], dim: int) -> None:
    dtype = np.dtype([("frame", "<i8"), ("candidate_id", "<i8"), ("e", "<f8", (dim,))])
    n = sum(len(d) for d in frames)
    table = np.zeros(n, dtype=dtype)
    row = 0
    for t, dets in enumerate(frames):
        for k in range(len(dets)):
            table[row] = (t, k, dets.embeddings[k])
            row += 1
    Path(path).write_bytes(_EMB_HEADER.pack(EMBEDDING_MAGIC, dim, n) + table.tobytes())


def read_embeddings(path: Path) -> tuple[int, dict[tuple[int, int], np.ndarray]]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, dim, n = _EMB_HEADER.unpack_from(raw)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    dtype = np.dtype([("frame", "<i8"), ("candidate_id", "<i8"), ("e", "<f8", (dim,))])
    if len(raw) != _EMB_HEADER.size + n * dtype.itemsize:
        raise FormatError(f"{path}: header announces {n} rows of dim {dim} but payload has {len(raw) - 16} bytes")
    table = np.frombuffer(raw, dtype=dtype, offset=_EMB_HEADER.size)
    out = {}
    for r in range(n):
        key = (int(table["frame"][r]), int(table["candidate_id"][r]))
        if key in out:
            raise FormatError(f"{path}: row {r}: duplicate key {key}")
        out[key] = table["e"][r].astype(float)
    return int(dim), out


def write_masks(path: Path, frames: list[FrameDetections]) -> None:
    rows = []
    for t, dets in enumerate(frames):
        for k, m in enumerate(dets.masks or []):
            rows.append([str(t), str(k), m.to_string()])
    _write_csv(path, MASK_HEADER, rows)


def _read_masks(path: Path) -> dict[tuple[int, int], RleMask]:
    out = {}
    for line, rec in _read_csv(path, MASK_HEADER):
        key = (_parse(path, line, rec, "frame", int), _parse(path, line, rec, "candidate_id", int))
        try:
            out[key] = RleMask.from_string(rec["rle"])
        except ValueError as exc:
            raise FormatError(f"{path}:{line}: {exc}") from None
    return out


def read_detections(
    det_path: Path,
    emb_path: Path,
    mask_path: Path | None = None,
    frame_count: int | None = None,
) -> list[FrameDetections]:
    """Group detection rows per frame and attach their embeddings (and masks).

    The number of frames is ``frame_count`` when given, otherwise one past
    the last frame mentioned.
    """
    det_path = Path(det_path)
    rows = _read_csv(det_path, DETECTION_HEADER)
    dim, embeddings = read_embeddings(emb_path)
    masks = _read_masks(mask_path) if mask_path is not None else None
    per_frame: dict[int, list[tuple[int, Box]]] = {}
    last_frame = -1
    seen = set()
    for line, rec in rows:
        t = _parse(det_path, line, rec, "frame", int)
        k = _parse(det_path, line, rec, "candidate_id", int)
        if t < last_frame:
            raise FormatError(f"{det_path}:{line}: frame {t} after frame {last_frame}; frames must be non-decreasing")
        if t < 0 or (t, k) in seen:
            raise FormatError(f"{det_path}:{line}: invalid or duplicate key ({t}, {k})")
        if (t, k) not in embeddings:
            raise FormatError(f"{det_path}:{line}: no embedding for ({t}, {k})")
        if masks is not None and (t, k) not in masks:
            raise FormatError(f"{det_path}:{line}: no mask for ({t}, {k})")
        seen.add((t, k))
        last_frame = t
        per_frame.setdefault(t, []).append((k, _parse_box(det_path, line, rec, _parse(det_path, line, rec, "class_id", int))))
    if set(embeddings) - seen:
        raise FormatError(f"{emb_path}: {len(set(embeddings) - seen)} embedding rows have no detection")
    n_frames = last_frame + 1 if frame_count is None else frame_count
    if last_frame >= n_frames:
        raise FormatError(f"{det_path}: frame {last_frame} beyond frame count {n_frames}")
    frames = []
    for t in range(n_frames):
        items = per_frame.get(t, [])
        frames.append(
            FrameDetections(
                [b for _, b in items],
                np.array([embeddings[(t, k)] for k, _ in items]).reshape(len(items), dim),
                None if masks is None else [masks[(t, k)] for k, _ in items],
            )
        )
    return frames


# -- ground truth and results ----------------------------------------------


def write_tracks(path: Path, frames: SequenceAnnotation) -> None:
    """Canonical order: frame, then track id. The mask column appears when any object has a mask."""
    with_masks = any(o.mask is not None for f in frames for o in f)
    rows = []
    for t, objs in enumerate(frames):
        for o in sorted(objs, key=lambda o: o.obj_id):
            row = [str(t), str(o.obj_id), *map(_num, o.box.as_xywh()), _num(o.box.score)]
            if with_masks:
                row.append("" if o.mask is None else o.mask.to_string())
            rows.append(row)
    _write_csv(path, TRACK_HEADER + (["mask"] if with_masks else []), rows)


def read_tracks(path: Path, frame_count: int | None = None) -> SequenceAnnotation:
    path = Path(path)
    rows = _read_csv(path, TRACK_HEADER, ["mask"])
    per_frame: dict[int, list[TrackedObject]] = {}
    seen = set()
    for line, rec in rows:
        t = _parse(path, line, rec, "frame", int)
        i = _parse(path, line, rec, "track_id", int)
        if t < 0 or (t, i) in seen:
            raise FormatError(f"{path}:{line}: invalid or duplicate (frame, track_id) ({t}, {i})")
        seen.add((t, i))
        mask = None
        if rec.get("mask"):
            try:
                mask = RleMask.from_string(rec["mask"])
            except ValueError as exc:
                raise FormatError(f"{path}:{line}: {exc}") from None
        per_frame.setdefault(t, []).append(TrackedObject(i, _parse_box(path, line, rec), mask))
    n = max(per_frame, default=-1) + 1 if frame_count is None else frame_count
    if per_frame and max(per_frame) >= n:
        raise FormatError(f"{path}: frame {max(per_frame)} beyond frame count {n}")
    return [sorted(per_frame.get(t, []), key=lambda o: o.obj_id) for t in range(n)]


def write_scenario(out_dir: Path, scenario: Scenario) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "gt.csv", out_dir / "detections.csv", out_dir / "embeddings.bin"]
    write_tracks(paths[0], scenario.ground_truth)
    write_detections(paths[1], scenario.detections)
    write_embeddings(paths[2], scenario.detections, scenario.config.embedding_dim)
    if scenario.config.mask_shape is not None:
        paths.append(out_dir / "masks.csv")
        write_masks(paths[-1], scenario.detections)
    return paths


# -- configs --------------------------------------------------------------


def load_toml(path: Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise FormatError(f"{path}: config must be flat; found tables {nested}")
    return data


def _check_keys(path: Path, data: dict[str, Any], cls: type) -> None:
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")


def load_scenario_config(path: Path) -> ScenarioConfig:
    data = load_toml(path)
    _check_keys(path, data, ScenarioConfig)
    if "occlusions" in data:
        data["occlusions"] = [Occlusion(*o) for o in data["occlusions"]]
    try:
        return ScenarioConfig(**data)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_tracker_config(path: Path | None, mode: str) -> TrackerConfig:
    data = load_toml(path) if path is not None else {}
    _check_keys(path, data, TrackerConfig)
    if data.setdefault("mode", mode) != mode:
        raise FormatError(f"{path}: config mode {data['mode']!r} disagrees with --mode {mode!r}")
    try:
        return TrackerConfig(**data)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- reports --------------------------------------------------------------


def write_report(path: Path, report: MetricsReport) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def read_report(path: Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_curves(path: Path, detail: ClearMotResult) -> None:
    """Per-frame counts plus cumulative MOTA, for external plotting."""
    rows = []
    gt_total = errors = 0
    for t, (gt, tp, fp, fn, ids) in enumerate(detail.per_frame):
        gt_total += gt
        errors += fp + fn + ids
        mota = 1.0 - errors / gt_total if gt_total else float("nan")
        rows.append([str(t), str(gt), str(tp), str(fp), str(fn), str(ids), _num(mota)])
    _write_csv(path, CURVE_HEADER, rows)
