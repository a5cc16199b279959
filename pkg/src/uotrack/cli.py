"""``uotrack`` command line: simulate, track, eval, selftest.

Exit codes: 0 success, 1 invalid input or usage, 2 failed self-check.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import formats
from .association import CATEGORY_MODES, INSTANCE_MODES, track_sequence
from .metrics import evaluate
from .selftest import CHECKS, run_selftest
from .simulator import generate

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 1, 2
MODES = INSTANCE_MODES + CATEGORY_MODES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for failed checks here
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def cmd_simulate(config: Path, out_dir: Path) -> int:
    scenario = generate(formats.load_scenario_config(config))
    for path in formats.write_scenario(out_dir, scenario):
        print(path)
    return EXIT_OK


def cmd_track(
    mode: str,
    detections: Path,
    embeddings: Path,
    out: Path,
    init: Path | None = None,
    config: Path | None = None,
    masks: Path | None = None,
    frame_count: int | None = None,
) -> int:
    cfg = formats.load_tracker_config(config, mode)
    if cfg.is_instance and init is None:
        raise ValueError(f"mode {mode} needs --init with the first-frame annotation")
    if not cfg.is_instance and init is not None:
        raise ValueError(f"mode {mode} does not take --init")
    if cfg.uses_masks and masks is None:
        raise ValueError(f"mode {mode} needs --masks")
    frames = formats.read_detections(detections, embeddings, masks, frame_count)
    initial = None
    if init is not None:
        annotation = formats.read_tracks(init)
        if not annotation or not annotation[0] or any(annotation[1:]):
            raise ValueError(f"{init}: the initial annotation must list objects on frame 0 only")
        initial = annotation[0]
        if not frames:
            raise ValueError(f"{detections}: no frames to track")
    formats.write_tracks(out, track_sequence(cfg, frames, initial))
    return EXIT_OK


def cmd_eval(mode: str, gt: Path, result: Path, out: Path, curves: Path | None = None) -> int:
    gt_frames = formats.read_tracks(gt)
    res_frames = formats.read_tracks(result)
    n = max(len(gt_frames), len(res_frames))
    gt_frames += [[] for _ in range(n - len(gt_frames))]
    res_frames += [[] for _ in range(n - len(res_frames))]
    report, detail = evaluate(mode, gt_frames, res_frames)
    if curves is not None:
        if detail is None:
            raise ValueError(f"per-frame curves are available for {CATEGORY_MODES}, not {mode}")
        formats.write_curves(curves, detail)
    formats.write_report(out, report)
    sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_selftest(inject_fault: str | None = None, seed: int = 0) -> int:
    results = run_selftest(inject_fault, seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uotrack", description="Unified online tracker: simulate, track, evaluate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--config", type=Path, required=True, help="flat TOML with ScenarioConfig keys")
    s.add_argument("--out", type=Path, required=True, help="output directory")

    t = sub.add_parser("track", help="run the tracker over a detection stream")
    t.add_argument("--mode", choices=MODES, required=True)
    t.add_argument("--detections", type=Path, required=True)
    t.add_argument("--embeddings", type=Path, required=True)
    t.add_argument("--masks", type=Path, help="RLE masks, required in vos/mots/vis")
    t.add_argument("--init", type=Path, help="first-frame annotation, required in sot/vos")
    t.add_argument("--config", type=Path, help="flat TOML with TrackerConfig keys")
    t.add_argument("--frame-count", type=int, help="number of frames (default: last detection frame + 1)")
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="score a result file against ground truth")
    e.add_argument("--mode", choices=MODES, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--result", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True, help="metrics report (JSON)")
    e.add_argument("--curves", type=Path, help="per-frame CSV for plotting")

    c = sub.add_parser("selftest", help="compare kernels against slow references")
    c.add_argument("--inject-fault", choices=CHECKS, help="corrupt one check to exercise the failure path")
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "track":
            return cmd_track(
                args.mode, args.detections, args.embeddings, args.out, args.init, args.config, args.masks, args.frame_count
            )
        if args.command == "eval":
            return cmd_eval(args.mode, args.gt, args.result, args.out, args.curves)
        return cmd_selftest(args.inject_fault, args.seed)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
