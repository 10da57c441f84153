"""turbkit command-line interface.

Subcommands: run, stabilize, flow, segment, cn2, restore-bg, simulate,
gen-dataset, evaluate. Exit codes: 0 success, 2 configuration/input error,
3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .flow import FlowParams, compute_flow, save_flow
from .metrics import (
    LineDeviationParams,
    line_deviation,
    mask_iou,
    psnr,
    rolling_line_deviation,
    ssim,
)
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    config_from_toml,
    config_to_toml,
    run_pipeline,
)
from .segment import (
    average_optical_flow,
    load_mask,
    save_mask,
    select_n_opt,
    threshold_mask,
)
from .simulate import TurbulenceParams, generate_dataset, simulate_sequence
from .stabilize import apply_offsets, estimate_offsets, offsets_to_csv
from .stackblend import blend_foreground, gaussian_stack
from .turbstats import (
    OpticalConfig,
    WindowCalibration,
    calibration_from_simulator,
    estimate_cn2,
    window_from_cn2,
    with_window,
)
from .videocore import (
    load_sequence,
    save_sequence,
    to_luma,
    write_raw_volume,
    VideoSequence,
)


def _add_io_args(sub, output_required=True):
    sub.add_argument("--input", required=True, help="input frame directory")
    sub.add_argument("--output", required=output_required, help="output directory")
    sub.add_argument("--color", choices=("luma", "rgb"), default="rgb")


def _luma_of(seq: VideoSequence) -> VideoSequence:
    if seq.channels == 1:
        return seq
    return VideoSequence(tuple(to_luma(f) for f in seq.frames), seq.frame_rate)


def _cmd_run(args) -> int:
    config = config_from_toml(args.config) if args.config else PipelineConfig()
    if args.dump_config:
        Path(args.dump_config).write_text(config_to_toml(config))
        print(f"wrote config to {args.dump_config}")
    t0 = time.perf_counter()
    seq = load_sequence(args.input, color_mode=args.color)
    read_seconds = time.perf_counter() - t0
    print(f"loaded {len(seq)} frames at {seq.width}x{seq.height} in {read_seconds:.2f}s")

    result = run_pipeline(seq, config)
    result.latency = replace(result.latency, io_seconds=read_seconds / len(seq))

    out = Path(args.output)
    save_sequence(result.restored, out / "restored")
    if result.stabilization is not None:
        offsets_to_csv(result.stabilization.offsets, out / "offsets.csv")
    if result.masks is not None:
        mask_dir = out / "masks"
        mask_dir.mkdir(parents=True, exist_ok=True)
        for m in result.masks:
            save_mask(m, mask_dir / f"mask_{m.frame_index:06d}.png")
    if result.turbulence is not None:
        (out / "turbulence.json").write_text(result.turbulence.to_json())
    from .report import write_latency_report

    paths = write_latency_report(result.latency, out)
    print(result.latency.table())
    if result.n_opt is not None:
        print(f"segmentation used N = {result.n_opt}")
    print(f"restored frames in {out / 'restored'}; latency report: {paths['csv']}")
    return 0


def _cmd_stabilize(args) -> int:
    seq = load_sequence(args.input, color_mode=args.color)
    offsets = estimate_offsets(_luma_of(seq), args.border, workers=args.workers)
    stabilized = apply_offsets(seq, offsets)
    save_sequence(stabilized, args.output)
    if args.offsets_csv:
        offsets_to_csv(offsets, args.offsets_csv)
        print(f"offsets -> {args.offsets_csv}")
    largest = max((abs(dx), abs(dy)) for dx, dy in offsets)
    print(f"stabilized {len(seq)} frames (max |offset| {largest}) -> {args.output}")
    return 0


def _cmd_flow(args) -> int:
    seq = load_sequence(args.input, color_mode="luma")
    i, j = args.pair
    params = FlowParams(args.levels, args.scale, args.iterations, args.smoothness)
    field = compute_flow(seq[i], seq[j], params)
    save_flow(field, args.output)
    from .flow import flow_magnitude

    print(
        f"flow {i}->{j}: median magnitude {np.median(flow_magnitude(field)):.3f} px -> {args.output}"
    )
    return 0


def _cmd_segment(args) -> int:
    seq = load_sequence(args.input, color_mode="luma")
    candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    feasible = [c for c in candidates if c < len(seq)] or [len(seq) - 1]
    from .flowcache import FlowCache

    cache = FlowCache(args.cache_capacity)
    center = len(seq) // 2
    n_opt = select_n_opt(seq, center, feasible, cache=cache)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(len(seq)):
        aof = average_optical_flow(seq, t, n_opt, cache=cache)
        mask = threshold_mask(aof, args.threshold, args.morph_radius)
        save_mask(mask, out / f"mask_{t:06d}.png")
    print(f"N_opt = {n_opt}; wrote {len(seq)} masks to {out}")
    return 0


def _cmd_cn2(args) -> int:
    seq = load_sequence(args.input, color_mode="luma")
    optics = None
    if args.optics:
        pfov, d, l, p = (float(v) for v in args.optics.split(","))
        optics = OpticalConfig(pfov, d, l, p)
    report = estimate_cn2(seq, optics=optics)
    if args.calibration:
        lo, hi, smin, smax = (float(v) for v in args.calibration.split(","))
        report = with_window(report, WindowCalibration(lo, hi, smin, smax))
    elif args.auto_window:
        cal = calibration_from_simulator(seq[0].plane())
        report = with_window(report, cal)
    text = report.to_json()
    if args.output:
        Path(args.output).write_text(text)
        print(f"report -> {args.output}")
    print(text)
    return 0


def _cmd_restore_bg(args) -> int:
    seq = load_sequence(args.input, color_mode=args.color)
    masks = None
    if args.masks:
        mask_dir = Path(args.masks)
        files = sorted(mask_dir.glob("*.png"))
        if len(files) != len(seq):
            raise ValueError(f"need {len(seq)} masks, found {len(files)} in {mask_dir}")
        masks = [load_mask(p, frame_index=t) for t, p in enumerate(files)]
    if args.sigma == "auto":
        luma = _luma_of(seq)
        sel = None
        if masks is not None:
            union = np.stack([m.labels for m in masks]).any(axis=0)
            sel = ~union if not union.all() else None
        report = estimate_cn2(luma, mask=sel)
        cal = calibration_from_simulator(luma[0].plane())
        sigma, span = window_from_cn2(report, cal)
        print(f"cn2 {report.cn2:.4g} -> sigma {sigma:.2f} (span {span})")
    else:
        sigma = float(args.sigma)
    mask_arr = np.stack([m.labels for m in masks]) if masks is not None else None
    restored = []
    for t in range(len(seq)):
        bg = gaussian_stack(seq, t, sigma, mask_arr).frame
        if masks is not None and not masks[t].empty:
            bg = blend_foreground(bg, seq[t], masks[t], mode=args.blend)
        restored.append(bg.samples)
    save_sequence(VideoSequence.from_arrays(restored, seq.frame_rate), args.output)
    print(f"restored {len(seq)} frames (sigma {sigma:.2f}, blend {args.blend}) -> {args.output}")
    return 0


def _cmd_simulate(args) -> int:
    seq = load_sequence(args.input, color_mode=args.color)
    params = TurbulenceParams(
        tilt_octaves=args.tilt_octaves,
        tilt_frequency=args.tilt_frequency,
        tilt_amplitude=args.tilt_amplitude,
        blur_levels=args.blur_levels,
        blur_sigma_max=args.blur_sigma_max,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    degraded, truth = simulate_sequence(seq, params)
    dt = time.perf_counter() - t0
    out = Path(args.output)
    save_sequence(degraded, out / "degraded")
    vol = lambda v: np.transpose(v, (2, 0, 1))[:, :, :, None]
    write_raw_volume(out / "tilt_x.raw", vol(truth.tilt_x.values))
    write_raw_volume(out / "tilt_y.raw", vol(truth.tilt_y.values))
    write_raw_volume(out / "blur.raw", vol(truth.blur_sigma))
    (out / "params.json").write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True))
    fps = len(seq) / dt if dt > 0 else float("inf")
    print(f"simulated {len(seq)} frames in {dt:.2f}s ({fps:.1f} fps) -> {out}")
    return 0


def _cmd_gen_dataset(args) -> int:
    manifest = generate_dataset(
        args.source,
        args.output,
        count=args.count,
        severity_range=tuple(args.severity),
        clip_length=args.clip_length,
        master_seed=args.seed,
        color_mode=args.color,
        workers=args.workers,
    )
    failures = [c for c in manifest["clips"] if "error" in c]
    print(
        f"wrote {len(manifest['clips']) - len(failures)} clips "
        f"({len(failures)} failures) -> {Path(args.output) / 'manifest.json'}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"psnr", "ssim", "iou", "linedev"}
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    seq = load_sequence(args.input, color_mode=args.color)
    reference = load_sequence(args.reference, color_mode=args.color) if args.reference else None
    if ("psnr" in wanted or "ssim" in wanted) and reference is None:
        raise ConfigError("psnr/ssim need --reference")
    rows = [{"frame": t} for t in range(len(seq))]
    if reference is not None and len(reference) != len(seq):
        raise ConfigError("reference frame count differs from input")
    for t in range(len(seq)):
        if reference is not None and "psnr" in wanted:
            rows[t]["psnr"] = psnr(seq[t], reference[t])
        if reference is not None and "ssim" in wanted:
            rows[t]["ssim"] = ssim(seq[t], reference[t])
    if "iou" in wanted:
        if not (args.pred_masks and args.truth_masks):
            raise ConfigError("iou needs --pred-masks and --truth-masks")
        preds = sorted(Path(args.pred_masks).glob("*.png"))
        truths = sorted(Path(args.truth_masks).glob("*.png"))
        if len(preds) != len(truths):
            raise ConfigError("pred/truth mask counts differ")
        for t, (p, q) in enumerate(zip(preds, truths)):
            if t < len(rows):
                rows[t]["iou"] = mask_iou(load_mask(p), load_mask(q))
    ldr = None
    if "linedev" in wanted:
        luma = _luma_of(seq)
        try:
            ldr = rolling_line_deviation(luma, window=args.window)
        except ValueError:
            print("line deviation undefined on every frame (no segments detected)")
        else:
            for e in ldr.entries:
                rows[e.frame_index]["linedev"] = e.score
                rows[e.frame_index]["line_count"] = e.line_count

    from .report import line_deviation_figure, metric_figure, write_metric_table

    paths = write_metric_table(rows, out)
    figure_keys = [k for k in ("psnr", "ssim", "iou") if any(k in r for r in rows)]
    if figure_keys:
        metric_figure(rows, figure_keys, out / "metrics.png")
    if ldr is not None:
        line_deviation_figure(ldr, out / "line_deviation.png")
        print(f"line deviation: mean {ldr.mean:.3f} deg, std {ldr.std:.3f} deg")
    print(f"evaluation -> {paths['csv']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbkit",
        description="Atmospheric-turbulence video restoration, simulation, and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"turbkit {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run the full restoration pipeline")
    run.add_argument("--config", help="pipeline TOML config (defaults used if omitted)")
    run.add_argument("--dump-config", help="write the effective config TOML to this path")
    _add_io_args(run)
    run.set_defaults(func=_cmd_run)

    st = subs.add_parser("stabilize", help="remove global translational camera motion")
    _add_io_args(st)
    st.add_argument("--border", type=int, default=50, help="crop border / max shift in px")
    st.add_argument("--offsets-csv", help="also dump per-frame offsets as CSV")
    st.add_argument("--workers", type=int, default=1)
    st.set_defaults(func=_cmd_stabilize)

    fl = subs.add_parser("flow", help="dense optical flow between two frames")
    fl.add_argument("--input", required=True)
    fl.add_argument("--pair", nargs=2, type=int, required=True, metavar=("I", "J"))
    fl.add_argument("--output", required=True, help="raw planar output (u, v channels)")
    fl.add_argument("--levels", type=int, default=4)
    fl.add_argument("--scale", type=float, default=0.5)
    fl.add_argument("--iterations", type=int, default=50)
    fl.add_argument("--smoothness", type=float, default=15.0)
    fl.set_defaults(func=_cmd_flow)

    sg = subs.add_parser("segment", help="motion masks from averaged optical flow")
    sg.add_argument("--input", required=True)
    sg.add_argument("--output", required=True, help="mask PNG directory")
    sg.add_argument("--threshold", type=float, default=0.5)
    sg.add_argument("--candidates", default="2,4,8,16,32")
    sg.add_argument("--morph-radius", type=int, default=3)
    sg.add_argument("--cache-capacity", type=int, default=64)
    sg.set_defaults(func=_cmd_segment)

    cn = subs.add_parser("cn2", help="turbulence-strength proxy of a sequence")
    cn.add_argument("--input", required=True)
    cn.add_argument("--output", help="write the JSON report here (also printed)")
    cn.add_argument("--optics", help="pfov,aperture_d,distance_l,turbulence_p")
    cn.add_argument("--calibration", help="cn2_low,cn2_high,sigma_min,sigma_max")
    cn.add_argument(
        "--auto-window", action="store_true", help="calibrate the window against the simulator"
    )
    cn.set_defaults(func=_cmd_cn2)

    rb = subs.add_parser("restore-bg", help="temporal stacking plus foreground blending")
    _add_io_args(rb)
    rb.add_argument("--sigma", default="auto", help="'auto' or a window sigma in frames")
    rb.add_argument("--blend", choices=("poisson", "pyramid"), default="poisson")
    rb.add_argument("--masks", help="directory of mask PNGs (one per frame)")
    rb.set_defaults(func=_cmd_restore_bg)

    sim = subs.add_parser("simulate", help="degrade a clean sequence with simulated turbulence")
    _add_io_args(sim)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--tilt-amplitude", type=float, default=2.0)
    sim.add_argument("--tilt-frequency", type=float, default=0.03)
    sim.add_argument("--tilt-octaves", type=int, default=8)
    sim.add_argument("--blur-sigma-max", type=float, default=1.0)
    sim.add_argument("--blur-levels", type=int, default=11)
    sim.set_defaults(func=_cmd_simulate)

    gd = subs.add_parser("gen-dataset", help="batch paired clean/degraded clips + manifest")
    gd.add_argument("--source", required=True, help="directory of source images")
    gd.add_argument("--output", required=True)
    gd.add_argument("--count", type=int, required=True)
    gd.add_argument("--severity", nargs=2, type=float, default=(1.0, 6.0), metavar=("LO", "HI"))
    gd.add_argument("--clip-length", type=int, default=16)
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--color", choices=("luma", "rgb"), default="luma")
    gd.add_argument("--workers", type=int, default=1)
    gd.set_defaults(func=_cmd_gen_dataset)

    ev = subs.add_parser("evaluate", help="PSNR/SSIM/IoU/line-deviation reports")
    ev.add_argument("--input", required=True, help="frames to score")
    ev.add_argument("--reference", help="clean reference frames (psnr/ssim)")
    ev.add_argument("--pred-masks", help="predicted mask PNGs (iou)")
    ev.add_argument("--truth-masks", help="ground-truth mask PNGs (iou)")
    ev.add_argument("--metrics", default="psnr,ssim", help="comma list: psnr,ssim,iou,linedev")
    ev.add_argument("--window", type=int, default=10, help="rolling window for linedev")
    ev.add_argument("--color", choices=("luma", "rgb"), default="rgb")
    ev.add_argument("--output", required=True)
    ev.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, 0 on --help/--version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything else is a processing failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
