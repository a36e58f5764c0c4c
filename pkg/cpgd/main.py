import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from cpgd.functions.codec import decode_sequence, encode_frames, encode_sequence
from cpgd.functions.cpc import (
    Conditioning,
    CpcAttnParams,
    ToyNoisePredictor,
    build_schedule,
    init_cpc_params,
    latent_shape,
    sample,
)
from cpgd.functions.cpfp import CpfaParams, init_cpfa_params, propagate_sequence, restore
from cpgd.functions.frames_io import (
    from_unit_rgb,
    read_frame_dir,
    read_yuv420,
    rgb_to_luma,
    to_unit_rgb,
    write_frame_dir,
)
from cpgd.functions.metrics import bench_alignment_cost, evaluate_sequences
from cpgd.functions.prior_extract import (
    BACKWARD,
    FORWARD,
    augment_dataset,
    load_prior_set,
    priors_from_stream,
    read_manifest,
)
from cpgd.utils.config import echo_config, load_run_config, resolve_workers
from cpgd.utils.errors import ConfigError, DataError, FormatError, ShapeError
from cpgd.utils.logging_config import setup_logger, setup_visualization_logger

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

logger = logging.getLogger("cpgd")


def _emit(args, table, payload):
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(table)


def _read_luma_clip(args):
    if getattr(args, "yuv", None):
        if not args.width or not args.height:
            raise ConfigError("--yuv needs --width and --height")
        return read_yuv420(args.yuv, args.width, args.height)
    if not args.input:
        raise ConfigError("an input is required (--input dir or --yuv file)")
    return [rgb_to_luma(frame) for frame in read_frame_dir(args.input)]


def _motion_statistics(coded):
    rows = []
    for index in range(len(coded.frames)):
        mv = coded.motion[index]
        res = coded.residuals[index]
        if mv is None:
            rows.append(
                {"frame": index, "type": "I", "mean_abs_dy": 0.0, "mean_abs_dx": 0.0,
                 "nonzero_mv": 0.0, "residual_energy": 0.0}
            )
            continue
        vectors = mv.vectors.astype(np.float64)
        rows.append(
            {
                "frame": index,
                "type": "P",
                "mean_abs_dy": float(np.abs(vectors[..., 0]).mean()),
                "mean_abs_dx": float(np.abs(vectors[..., 1]).mean()),
                "nonzero_mv": float(np.any(vectors != 0, axis=2).mean()),
                "residual_energy": float((res.reconstructed().astype(np.float64) ** 2).mean()),
            }
        )
    return pd.DataFrame(rows)


def cmd_encode(args, cfg, workers):
    frames = _read_luma_clip(args)
    codec_cfg = cfg.codec_config()
    stream = encode_sequence(frames, codec_cfg, workers)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "wb") as f:
        f.write(stream)
    echo_config(cfg, out_dir)

    stats = _motion_statistics(decode_sequence(stream))
    p_frames = stats[stats["type"] == "P"]
    mean_energy = float(p_frames["residual_energy"].mean()) if len(p_frames) else 0.0
    payload = {
        "stream": args.out,
        "bytes": len(stream),
        "frame_count": len(frames),
        "width": frames[0].width,
        "height": frames[0].height,
        "mean_residual_energy": mean_energy,
        "frames": stats.to_dict(orient="records"),
    }
    table = stats.to_string(index=False, float_format=lambda v: f"{v:.4f}")
    table += f"\nmean residual energy: {mean_energy:.4f}\nwrote {len(stream)} bytes to {args.out}"
    _emit(args, table, payload)
    return EXIT_OK


def cmd_extract(args, cfg, workers):
    if args.stream:
        with open(args.stream, "rb") as f:
            stream = f.read()
        manifest, _ = priors_from_stream(stream, args.out)
    else:
        frames = _read_luma_clip(args)
        manifest = augment_dataset(frames, cfg.codec_config(), args.out, workers)
    echo_config(cfg, args.out)
    _emit(args, json.dumps(manifest, indent=4), manifest)
    return EXIT_OK


def _load_cpfa_params(path, cfg):
    if path:
        return CpfaParams.load(path)
    logger.info(f"No parameter file given, using seeded parameters (seed {cfg.seed})")
    return init_cpfa_params(cfg.channels, cfg.seed)


def cmd_restore(args, cfg, workers):
    rgb = read_frame_dir(args.input)
    manifest = read_manifest(args.priors)
    height, width = rgb[0].shape[:2]
    if (manifest["width"], manifest["height"]) != (width, height):
        raise DataError(
            f"priors are {manifest['width']}×{manifest['height']}, frames are {width}×{height}"
        )
    forward = load_prior_set(args.priors, FORWARD, len(rgb), cfg.use_residual_prior)
    backward = None
    if cfg.mode == "bidirectional":
        backward = load_prior_set(args.priors, BACKWARD, len(rgb), cfg.use_residual_prior)

    params = _load_cpfa_params(args.params, cfg)
    frames = [to_unit_rgb(frame) for frame in rgb]
    features = propagate_sequence(frames, forward, params, cfg.mode, backward)
    restored = [from_unit_rgb(x) for x in restore(frames, features, params)]
    write_frame_dir(restored, args.out)
    echo_config(cfg, args.out)

    payload = {"frames": len(restored), "output": args.out, "mode": cfg.mode}
    table = f"restored {len(restored)} frame(s) ({cfg.mode}) into {args.out}"
    if args.reference:
        report = evaluate_sequences(restored, read_frame_dir(args.reference), workers)
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=4)
        payload["metrics"] = report.to_dict()
        table += "\n" + report.to_table()
    _emit(args, table, payload)
    return EXIT_OK


def cmd_generate(args, cfg, workers):
    stage1 = read_frame_dir(args.stage1)
    priors = load_prior_set(args.priors, FORWARD, len(stage1), cfg.use_residual_prior)
    if args.params:
        params = CpcAttnParams.load(args.params)
    else:
        params = init_cpc_params(cfg.attn_dim, cfg.heads, cfg.seed)
    predictor = ToyNoisePredictor(params)

    # a single step runs only the final, noise-free position of a 2-step schedule
    schedule = build_schedule(cfg.t_train, max(cfg.steps, 2))
    start = 0 if cfg.steps == 1 else None

    outputs = []
    for index, (frame, (v, r)) in enumerate(zip(stage1, priors)):
        cond = Conditioning(
            x=to_unit_rgb(frame),
            v=v,
            r=r,
            prompt=tuple(cfg.prompt_tokens),
            latent_factor=cfg.latent_factor,
            use_prior_attention=cfg.use_prior_attention,
        )
        rng = np.random.default_rng([cfg.seed, index])
        y_T = rng.standard_normal(latent_shape(cond)).astype(np.float32)
        y_0 = sample(y_T, cond, schedule, predictor, params, rng, start)
        outputs.append(from_unit_rgb((y_0 + 1.0) / 2.0))
        logger.info(f"Generated frame {index} with {cfg.steps} step(s)")

    write_frame_dir(outputs, args.out)
    echo_config(cfg, args.out)
    payload = {"frames": len(outputs), "steps": cfg.steps, "seed": cfg.seed, "output": args.out}
    _emit(args, f"generated {len(outputs)} frame(s) with {cfg.steps} step(s) into {args.out}", payload)
    return EXIT_OK


def cmd_eval(args, cfg, workers):
    report = evaluate_sequences(read_frame_dir(args.a), read_frame_dir(args.b), workers)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as f:
            json.dump(report.to_dict(), f, indent=4)
    _emit(args, report.to_table(), report.to_dict())
    return EXIT_OK


def cmd_bench(args, cfg, workers):
    frames = _read_luma_clip(args)
    report = bench_alignment_cost(frames, cfg.codec_config(), workers)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as f:
            json.dump(report.to_dict(), f, indent=4)
    _emit(args, report.to_table(), report.to_dict())
    return EXIT_OK


def cmd_init_params(args, cfg, workers):
    if args.kind == "cpfp":
        params = init_cpfa_params(cfg.channels, cfg.seed, args.random_finals)
    else:
        params = init_cpc_params(cfg.attn_dim, cfg.heads, cfg.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    params.save(args.out)
    payload = {"kind": args.kind, "seed": cfg.seed, "layers": len(params.layers), "path": args.out}
    _emit(args, f"wrote {args.kind} parameters (seed {cfg.seed}) to {args.out}", payload)
    return EXIT_OK


def cmd_plot(args, cfg, workers):
    from cpgd.visualization.prior_analysis import plot_priors

    setup_visualization_logger(args.log_file)
    background = None
    if args.input:
        background = rgb_to_luma(read_frame_dir(args.input)[args.frame]).samples
    paths = plot_priors(args.priors, args.frame, args.out, background, args.direction)
    _emit(args, "\n".join(paths), {"plots": paths})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cpgd",
        description="Coding priors from a block-based codec, prior-guided alignment and generation.",
    )
    parser.add_argument("--config", help="RunConfig JSON file")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--log-file", help="log file path (default logs/cpgd.log)")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_clip_input(p):
        p.add_argument("--input", help="directory of frame_%%06d images")
        p.add_argument("--yuv", help="raw planar YUV420 file")
        p.add_argument("--width", type=int, help="YUV frame width")
        p.add_argument("--height", type=int, help="YUV frame height")

    def add_codec_flags(p):
        p.add_argument("--block-size", type=int, dest="block_size")
        p.add_argument("--search-radius", type=int, dest="search_radius")
        p.add_argument("--quant", type=int)

    p = sub.add_parser("encode", help="encode frames into a CPV1 stream")
    add_clip_input(p)
    add_codec_flags(p)
    p.add_argument("--out", required=True, help="output .cpv stream")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("extract", help="write coding-prior sidecars")
    p.add_argument("--stream", help="CPV1 stream to read priors from")
    add_clip_input(p)
    add_codec_flags(p)
    p.add_argument("--out", required=True, help="sidecar directory")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("restore", help="stage-one restoration with prior-guided propagation")
    p.add_argument("--input", required=True, help="degraded frame directory")
    p.add_argument("--priors", required=True, help="sidecar directory")
    p.add_argument("--params", help="CPFP parameter file")
    p.add_argument("--mode", choices=["forward", "bidirectional"])
    p.add_argument("--reference", help="sharp frames for PSNR/SSIM")
    p.add_argument("--out", required=True, help="output frame directory")
    p.set_defaults(handler=cmd_restore)

    p = sub.add_parser("generate", help="prior-controlled sampling on stage-one frames")
    p.add_argument("--stage1", required=True, help="stage-one frame directory")
    p.add_argument("--priors", required=True, help="sidecar directory")
    p.add_argument("--params", help="CPCA parameter file")
    p.add_argument("--steps", type=int, help="sampling steps (default 50)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output frame directory")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("eval", help="PSNR/SSIM between two frame directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="cost of reusing MVs versus recomputing them")
    add_clip_input(p)
    add_codec_flags(p)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("init-params", help="write a seeded parameter file")
    p.add_argument("--kind", choices=["cpfp", "cpc"], required=True)
    p.add_argument("--channels", type=int)
    p.add_argument("--dim", type=int, dest="attn_dim")
    p.add_argument("--heads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--random-finals", action="store_true", help="randomize zero-init layers")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_init_params)

    p = sub.add_parser("plot", help="plot one frame's motion vectors and residual map")
    p.add_argument("--priors", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--direction", choices=[FORWARD, BACKWARD], default=FORWARD)
    p.add_argument("--input", help="frame directory for the background")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_plot)
    return parser


CONFIG_FLAGS = (
    "block_size",
    "search_radius",
    "quant",
    "mode",
    "steps",
    "seed",
    "channels",
    "attn_dim",
    "heads",
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logger(args.log_file, level=logging.DEBUG if args.verbose else logging.INFO)

    overrides = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    try:
        cfg = load_run_config(args.config, **overrides)
        workers = resolve_workers()
        logger.info(f"Running {args.command} with {workers} worker(s)")
        return args.handler(args, cfg, workers)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DataError, FormatError, ShapeError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
