#!/usr/bin/env python3
"""
LSMVOS - Command Line
    segment   propagate the first-frame annotation through a DAVIS sequence
    eval      J/F statistics of predicted label maps against annotations
    bench     pipeline and matching timings on procedural clips
    selftest  oracle-equivalence and gradient checks
    serve     HTTP API over evaluation and run history
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace
from typing import Dict, List, Optional
import logging

import numpy as np

from dataio import (load_sequence, load_weights, read_label_map, seeded_init,
                    write_label_map)
from matching import (GateMask, MatchConfig, long_term_match, long_term_volume,
                      short_term_match, short_term_volume)
from metrics import evaluate_directories
from network import full_layout
from numerics import l2_normalize_channels
from pipeline import AblationConfig, ABLATION_PRESETS, PipelineConfig, SegmentationPipeline
from settings import get_settings, reset_settings
from synthetic import make_clip

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("cli")

MANIFEST_NAME = "run_manifest.json"


def _apply_runtime(args) -> None:
    s = get_settings()
    changes = {}
    if getattr(args, "threads", None):
        changes["threads"] = args.threads
    if getattr(args, "log_level", None):
        changes["log_level"] = args.log_level.upper()
    if changes:
        s = replace(s, **changes)
        reset_settings(s)
    logging.getLogger().setLevel(s.log_level)


def _pipeline_config(args) -> PipelineConfig:
    if args.disable_long or args.disable_short or args.disable_prev_mask:
        ablation = AblationConfig.from_flags(args.disable_long, args.disable_short, args.disable_prev_mask)
    else:
        ablation = AblationConfig.preset(args.ablation or get_settings().ablation)
    return PipelineConfig.from_settings(ablation=ablation, theta=args.theta)


def _weights(args, n: int):
    if args.weights:
        return load_weights(args.weights), {"weights": os.path.abspath(args.weights)}
    return seeded_init(args.seed, full_layout(n)), {"seed": args.seed}


def _config_dict(cfg: PipelineConfig, source: Dict) -> Dict:
    return {
        "k": cfg.match.k,
        "n": cfg.match.n,
        "similarity": cfg.match.similarity,
        "theta": cfg.theta,
        "ablation": dict(asdict(cfg.ablation), name=cfg.ablation.name),
        "threads": get_settings().threads,
        "object_workers": cfg.object_workers,
        **source,
    }


def _record(args, kind: str, name: str, config: Dict, payload: Dict, **fields) -> Optional[int]:
    if args.no_record:
        return None
    from run_registry import get_registry
    return get_registry().record_run(kind, name, config, payload, **fields)


# ═══════════════════════════════════════════════════════════════
# SEGMENT
# ═══════════════════════════════════════════════════════════════

def cmd_segment(args) -> int:
    cfg = _pipeline_config(args)
    handle = load_sequence(args.data, args.set, args.seq)
    frames = handle.frames()
    label0 = read_label_map(handle.annotation_for(0))
    weights, source = _weights(args, cfg.match.n)

    pipe = SegmentationPipeline.from_weights(weights, cfg)
    result = pipe.run_sequence(frames, label0)

    outputs = []
    for path, labels in zip(handle.frame_paths, result.labels):
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(args.out, f"{stem}.png")
        write_label_map(out, labels)
        outputs.append(out)

    summary = result.counters.summary()
    config = _config_dict(cfg, source)
    manifest = {
        "command": "segment",
        "sequence": handle.name,
        "resolution": list(handle.resolution),
        "frames": len(frames),
        "objects": result.object_ids,
        "config": config,
        "timing": summary,
        "outputs": [os.path.basename(o) for o in outputs],
    }
    run_id = _record(args, "segment", handle.name, config, manifest, frames=len(frames),
                     fps=summary["fps"], stages=summary["stages"])
    manifest["run_id"] = run_id
    with open(os.path.join(args.out, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2)

    print(f"Segmented {handle.name}: {len(frames)} frames, objects {result.object_ids}, "
          f"{summary['fps']:.2f} FPS -> {args.out}")
    return 0


# ═══════════════════════════════════════════════════════════════
# EVAL
# ═══════════════════════════════════════════════════════════════

def cmd_eval(args) -> int:
    start = time.perf_counter()
    report = evaluate_directories(args.pred, args.gt, args.tol)
    report.timing = {"eval_ms": (time.perf_counter() - start) * 1000.0}
    if args.report:
        report.save(args.report)
    data = report.to_dict()
    run_id = _record(args, "eval", os.path.basename(os.path.normpath(args.gt)),
                     {"pred": args.pred, "gt": args.gt, "tol": args.tol}, data,
                     frames=sum(o.frames for o in report.objects.values()), jf_mean=report.jf_mean)

    print(f"{'OBJECT':<24} {'J mean':>8} {'J rec':>7} {'J dec':>7} {'F mean':>8} {'F rec':>7} {'F dec':>7}")
    for key, o in report.objects.items():
        print(f"{key:<24} {o.j.mean:8.4f} {o.j.recall:7.3f} {o.j.decay:7.3f} "
              f"{o.f.mean:8.4f} {o.f.recall:7.3f} {o.f.decay:7.3f}")
    print(f"\nJ&F mean {report.jf_mean:.4f} (J {report.j_mean:.4f}, F {report.f_mean:.4f})"
          + (f" | run #{run_id}" if run_id else ""))
    return 0


# ═══════════════════════════════════════════════════════════════
# BENCH
# ═══════════════════════════════════════════════════════════════

def _parse_size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 854x480, got {text!r}")
    if w < 8 or h < 8:
        raise argparse.ArgumentTypeError(f"size must be at least 8x8, got {text!r}")
    return w, h


def _parse_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"object counts must be >= 1, got {text!r}")
    return values


def r_squared(x, y) -> float:
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


def _bench_run(width: int, height: int, objects: int, frames: int, seed: int,
               cfg: PipelineConfig, weights) -> Dict:
    clip = make_clip(width, height, frames, objects, seed)
    pipe = SegmentationPipeline.from_weights(weights, cfg)
    result = pipe.run_sequence(clip.frames, clip.labels[0])
    summary = result.counters.summary()
    summary["objects"] = len(result.object_ids)
    summary["shared_equals_frames"] = result.counters.shared_calls == frames
    return summary


def _micro(width: int, height: int, cfg: MatchConfig, seed: int, repeats: int = 3) -> Dict:
    rng = np.random.default_rng(seed)
    h8, w8 = -(-height // 8), -(-width // 8)
    cur = l2_normalize_channels(rng.standard_normal((128, h8, w8)).astype(np.float32))
    other = l2_normalize_channels(rng.standard_normal((128, h8, w8)).astype(np.float32))
    gate = GateMask(rng.uniform(0, 1, (1, h8, w8)).astype(np.float32))

    def timed(fn) -> float:
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append((time.perf_counter() - start) * 1000.0)
        return float(np.mean(times))

    short_vol = short_term_volume(cur, other, cfg.k)
    long_vol = long_term_volume(cur, other)
    return {
        "extent": [w8, h8],
        "short_term_volume_ms": timed(lambda: short_term_volume(cur, other, cfg.k)),
        "short_term_select_ms": timed(lambda: short_term_match(cur, other, gate, cfg, volume=short_vol)),
        "short_term_match_ms": timed(lambda: short_term_match(cur, other, gate, cfg)),
        "long_term_volume_ms": timed(lambda: long_term_volume(cur, other)),
        "long_term_select_ms": timed(lambda: long_term_match(cur, other, gate, cfg, volume=long_vol)),
        "long_term_match_ms": timed(lambda: long_term_match(cur, other, gate, cfg)),
    }


def cmd_bench(args) -> int:
    width, height = args.size
    cfg = PipelineConfig.from_settings()
    # objects run one after another so per-object cost adds up linearly
    cfg = replace(cfg, object_workers=1)
    weights = seeded_init(args.seed, full_layout(cfg.match.n))

    base = _bench_run(width, height, args.objects, args.frames, args.seed, cfg, weights)
    print(f"Pipeline {width}x{height} | K={args.objects} | {args.frames} frames | {base['fps']:.2f} FPS")
    for stage, t in base["stages"].items():
        print(f"  {stage:<11} {t['mean_ms']:10.1f} ms  ({t['calls']} calls)")

    report = {"command": "bench", "size": [width, height], "frames": args.frames,
              "seed": args.seed, "pipeline": base, "config": _config_dict(cfg, {"seed": args.seed})}

    if args.scaling and not args.no_scaling:
        rows = []
        for k in args.scaling:
            run = _bench_run(width, height, k, args.frames, args.seed, cfg, weights)
            rows.append({"objects": k, "frame_ms": run["stages"]["frame"]["mean_ms"],
                         "shared_ms": run["stages"]["shared"]["mean_ms"],
                         "per_object_ms": run["stages"]["per_object"]["mean_ms"],
                         "shared_calls": run["shared_calls"], "frames": run["frames"]})
        r2 = r_squared([r["objects"] for r in rows], [r["frame_ms"] for r in rows]) if len(rows) > 1 else 1.0
        report["scaling"] = {"rows": rows, "r_squared": r2}
        print(f"\n{'K':>3} {'frame ms':>10} {'shared ms':>10} {'per-obj ms':>11} {'shared calls':>13}")
        for r in rows:
            print(f"{r['objects']:>3} {r['frame_ms']:10.1f} {r['shared_ms']:10.1f} "
                  f"{r['per_object_ms']:11.1f} {r['shared_calls']:>13}")
        print(f"linear fit of frame time vs K: R^2 = {r2:.4f}")

    if not args.no_micro:
        report["micro"] = _micro(width, height, cfg.match, args.seed)
        print("\nMatching micro-benchmarks")
        for key, value in report["micro"].items():
            if key.endswith("_ms"):
                print(f"  {key:<24} {value:10.1f} ms")

    name = args.name or f"bench-{width}x{height}-k{args.objects}"
    report["run_id"] = _record(args, "bench", name, report["config"], report, frames=args.frames,
                               fps=base["fps"], stages=base["stages"])
    if args.report:
        os.makedirs(os.path.dirname(os.path.abspath(args.report)), exist_ok=True)
        with open(args.report, "w") as f:
            json.dump(report, f, indent=2)
    return 0


# ═══════════════════════════════════════════════════════════════
# SELFTEST / SERVE
# ═══════════════════════════════════════════════════════════════

def cmd_selftest(args) -> int:
    from selftest import format_table, run_selftest
    results = run_selftest()
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_serve(args) -> int:
    from api_server import serve
    s = get_settings()
    serve(args.host or s.host, args.port or s.port)
    return 0


# ═══════════════════════════════════════════════════════════════
# ENTRY POINT
# ═══════════════════════════════════════════════════════════════

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsmvos", description="Long/short-term matching video object segmentation")
    parser.add_argument("--threads", type=int, help="worker cap (overrides LSMVOS_THREADS)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a DAVIS-layout sequence")
    p.add_argument("--data", required=True, help="dataset root (JPEGImages/, Annotations/)")
    p.add_argument("--seq", required=True, help="sequence name")
    p.add_argument("--set", default="480p", help="resolution set directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="weights container file")
    src.add_argument("--seed", type=int, help="seeded random weights")
    p.add_argument("--out", required=True, help="output directory for label PNGs")
    p.add_argument("--ablation", choices=sorted(ABLATION_PRESETS))
    p.add_argument("--disable-long", action="store_true")
    p.add_argument("--disable-short", action="store_true")
    p.add_argument("--disable-prev-mask", action="store_true")
    p.add_argument("--theta", type=float)
    p.add_argument("--no-record", action="store_true", help="do not store the run in the registry")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="evaluate predictions against annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--tol", type=int, help="boundary tolerance in pixels (default: 0.8%% of the diagonal)")
    p.add_argument("--no-record", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="benchmark on procedural clips")
    p.add_argument("--size", type=_parse_size, default=(854, 480), help="WxH")
    p.add_argument("--objects", type=int, default=1)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scaling", type=_parse_list, default=[1, 2, 4, 8], help="object counts for the scaling table")
    p.add_argument("--no-scaling", action="store_true", help="skip the object-count scaling table")
    p.add_argument("--no-micro", action="store_true", help="skip matching micro-benchmarks")
    p.add_argument("--name", help="registry name for FPS history")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--no-record", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run oracle and gradient checks")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and (args.objects < 1 or args.frames < 1):
        print("bench: --objects and --frames must be >= 1", file=sys.stderr)
        return 2
    try:
        _apply_runtime(args)
        return args.func(args)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed | {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
