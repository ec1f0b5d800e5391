"""Command-line front door.

Subcommands: ``schedule dump``, ``invert``, ``stylize``,
``mosaic {build-content, build-style, extract, reinsert}``, ``eval``,
and ``demo``.  Every command is a pure function of its inputs and
config (no environment lookups, no timestamps), so repeated runs
produce bitwise-identical artifacts.

Exit codes: 0 success, 1 usage or parameter problems, 2 I/O problems,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit, mosaic
from .config import (PipelineConfig, load_config, validate_config,
                     write_config)
from .denoise import (GaussianPriorPredictor, PointMassPredictor,
                      StylePullPredictor, write_latent)
from .errors import (DegenerateInputError, DetectorError, FormatError,
                     NumericalDivergenceError, ParameterError,
                     PredictorError, ShapeError)
from .guidance import GuidanceConfig
from .imageio import load_image, resize, save_image
from .latentcodec import CodecConfig, decode, encode
from .sampler import InversionConfig, invert, sample
from .schedule import build_schedule, plan_timesteps, schedule_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

_USAGE_ERRORS = (ParameterError, ShapeError, DetectorError,
                 DegenerateInputError, PredictorError, IndexError, ValueError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage must be 1
        raise _UsageError(message)


@contextlib.contextmanager
def _stage(name: str):
    """Tag exceptions with the pipeline stage they escaped from."""
    try:
        yield
    except Exception as err:
        if not getattr(err, "_stage", None):
            err._stage = name
        raise


def _load_cfg(args) -> PipelineConfig:
    with _stage("config"):
        if getattr(args, "config", None):
            return load_config(args.config)
        return validate_config(PipelineConfig())


def _echo_config(cfg: PipelineConfig, out_path) -> None:
    write_config(cfg, str(out_path) + ".config.ini")


def _schedule_from(cfg: PipelineConfig):
    return build_schedule(cfg.num_train_steps, cfg.beta_start, cfg.beta_end,
                          cfg.schedule_kind)


def _build_predictor(cfg: PipelineConfig, x_c, work_wh, codec_cfg):
    if cfg.predictor_kind == "point_mass":
        return PointMassPredictor(x_c)
    if cfg.predictor_kind == "gaussian_prior":
        return GaussianPriorPredictor(x_c, cfg.sigma2)
    if not cfg.style_image:
        raise ParameterError(
            "predictor kind 'style_pull' needs [predictor] style_image")
    with _stage("imageio"):
        style = load_image(cfg.style_image)
    w, h = work_wh
    style = resize(style, w, h, "bicubic")
    if style.shape[2] != 3 and x_c.shape[0] == 3:
        style = np.repeat(style, 3, axis=2)
    if style.shape[2] == 3 and x_c.shape[0] == 1:
        style = style.mean(axis=2, keepdims=True)
    return StylePullPredictor(x_c, encode(style, codec_cfg), cfg.gamma)


def _write_trace_csv(path, trace, plan, schedule) -> None:
    lines = ["step,t,alpha_bar,loss"]
    for i, t in enumerate(plan.timesteps):
        loss = repr(trace.losses[i]) if i < len(trace.losses) else ""
        lines.append(f"{i},{t},{schedule.alpha_bar(t)!r},{loss}")
    Path(path).write_text("\n".join(lines) + "\n")


def _stability_bound(schedule, plan) -> float:
    """Smallest per-step alpha_bar/(1 - alpha_bar) over the plan."""
    return min(schedule.alpha_bar(t) / (1.0 - schedule.alpha_bar(t))
               for t in plan.timesteps)


# ---------------------------------------------------------------------------
# The stylize pipeline (shared by stylize / demo)
# ---------------------------------------------------------------------------

def _run_pipeline(content, boxes, cfg: PipelineConfig, use_mosaic: bool,
                  lambda_c: float):
    """encode -> invert -> guided sample -> decode, with the optional
    mosaic wrap.  Returns (output image, trace, schedule, plan)."""
    codec_cfg = CodecConfig(cfg.codec_mode, cfg.codec_factor)
    layout = None
    if use_mosaic:
        with _stage("mosaic"):
            work, layout = mosaic.build_content_mosaic(
                content, boxes, mosaic.BicubicUpscaler(), cfg.tile_size)
    else:
        work = content

    with _stage("latentcodec"):
        x_c = encode(work, codec_cfg)
    with _stage("denoise"):
        predictor = _build_predictor(
            cfg, x_c, (work.shape[1], work.shape[0]), codec_cfg)
    schedule = _schedule_from(cfg)
    plan = plan_timesteps(schedule, cfg.inference_steps)
    guidance = GuidanceConfig(lambda_c=lambda_c, reduction=cfg.reduction,
                              enabled=cfg.guidance_enabled,
                              iterations=cfg.guidance_iterations)
    with _stage("sampler"):
        z_start = invert(x_c, predictor, schedule,
                         InversionConfig(cfg.inversion_steps,
                                         cfg.fixed_point_iters))
        trace = sample(z_start, predictor, schedule, plan, x_c, guidance)
    with _stage("latentcodec"):
        out = decode(trace.latents[-1], codec_cfg)

    if use_mosaic:
        with _stage("mosaic"):
            faces = mosaic.extract_stylized_faces(out, layout)
            background = out[:content.shape[0], :content.shape[1]]
            out = mosaic.reinsert_faces(background, faces, boxes, cfg.feather)
    return out, trace, schedule, plan


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_schedule(args) -> int:
    cfg = _load_cfg(args)
    schedule = _schedule_from(cfg)
    with _stage("io"):
        Path(args.out).write_text(schedule_csv(schedule))
        _echo_config(cfg, args.out)
    return EXIT_OK


def _cmd_invert(args) -> int:
    cfg = _load_cfg(args)
    with _stage("imageio"):
        content = load_image(args.content)
    codec_cfg = CodecConfig(cfg.codec_mode, cfg.codec_factor)
    with _stage("latentcodec"):
        x_c = encode(content, codec_cfg)
    with _stage("denoise"):
        predictor = _build_predictor(
            cfg, x_c, (content.shape[1], content.shape[0]), codec_cfg)
    schedule = _schedule_from(cfg)
    with _stage("sampler"):
        z = invert(x_c, predictor, schedule,
                   InversionConfig(cfg.inversion_steps, cfg.fixed_point_iters))
    with _stage("io"):
        write_latent(args.out, z)
        _echo_config(cfg, args.out)
    return EXIT_OK


def _cmd_stylize(args) -> int:
    cfg = _load_cfg(args)
    lambda_c = cfg.lambda_c if args.lambda_c is None else args.lambda_c
    if lambda_c < 0:
        raise _UsageError(f"--lambda-c must be >= 0, got {lambda_c}")
    if args.mosaic and not args.boxes:
        raise _UsageError("--mosaic requires --boxes with a face manifest")

    with _stage("imageio"):
        content = load_image(args.content)
    boxes = []
    if args.boxes:
        with _stage("mosaic"):
            boxes = mosaic.load_face_manifest(args.boxes)

    out, trace, schedule, plan = _run_pipeline(
        content, boxes, cfg, args.mosaic, lambda_c)

    with _stage("imageio"):
        save_image(out, args.out)
    with _stage("io"):
        if args.trace:
            _write_trace_csv(args.trace, trace, plan, schedule)
        _echo_config(cfg, args.out)
    return EXIT_OK


def _cmd_mosaic(args) -> int:
    if args.action == "build-content":
        with _stage("imageio"):
            image = load_image(args.image)
        with _stage("mosaic"):
            boxes = mosaic.load_face_manifest(args.boxes)
            canvas, layout = mosaic.build_content_mosaic(
                image, boxes, mosaic.BicubicUpscaler(), args.tile_size)
            mosaic.save_layout(args.layout, layout)
        with _stage("imageio"):
            save_image(canvas, args.out)
    elif args.action == "build-style":
        with _stage("imageio"):
            styles = [load_image(p) for p in args.styles]
        with _stage("mosaic"):
            spec = mosaic.StyleMosaicSpec(args.rows, args.cols, args.cell_size)
            grid = mosaic.build_style_mosaic(styles, spec)
        with _stage("imageio"):
            save_image(grid, args.out)
    elif args.action == "extract":
        with _stage("imageio"):
            image = load_image(args.image)
        with _stage("mosaic"):
            layout = mosaic.load_layout(args.layout)
            faces = mosaic.extract_stylized_faces(image, layout)
        with _stage("io"):
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
        with _stage("imageio"):
            for face_id, face in faces:
                save_image(face, out_dir / f"face_{face_id}.png")
    else:  # reinsert
        with _stage("imageio"):
            background = load_image(args.background)
        with _stage("mosaic"):
            boxes = mosaic.load_face_manifest(args.boxes)
        faces = []
        with _stage("io"):
            face_paths = sorted(Path(args.faces_dir).glob("face_*.png"))
        with _stage("imageio"):
            for path in face_paths:
                match = re.fullmatch(r"face_(-?\d+)\.png", path.name)
                if not match:
                    continue
                faces.append((int(match.group(1)), load_image(path)))
        with _stage("mosaic"):
            out = mosaic.reinsert_faces(background, faces, boxes, args.feather)
        with _stage("imageio"):
            save_image(out, args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    with _stage("evalkit"):
        entries = evalkit.load_eval_manifest(args.manifest)
        embedder = evalkit.ToyEmbedder(cfg.embedder_size)
        report = evalkit.run_eval(entries, args.candidate, args.baseline,
                                  embedder)
    with _stage("io"):
        Path(args.out_csv).write_text(evalkit.report_csv(report))
        Path(args.out_text).write_text(evalkit.report_text(report))
        _echo_config(cfg, args.out_csv)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Demo: synthetic fixtures + mosaic/plain sweeps + eval report
# ---------------------------------------------------------------------------

def _smooth_field(rng, h, w, channels, cells=4):
    """Low-frequency random texture in [0.1, 0.9]."""
    coarse = rng.uniform(0.1, 0.9, size=(cells, cells, channels))
    return resize(coarse, w, h, "bicubic")


def _demo_content(rng, size, boxes):
    img = _smooth_field(rng, size, size, 3, cells=3)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img[:, :, 2] = 0.25 + 0.5 * ((xx + yy) % size) / size  # diagonal wash
    for box in boxes:
        img[box.y:box.y + box.h, box.x:box.x + box.w] = \
            _smooth_field(rng, box.h, box.w, 3, cells=4)
    return np.clip(img, 0.0, 1.0)


def _demo_style(rng, size):
    img = _smooth_field(rng, size, size, 3, cells=2)
    yy = np.arange(size)[:, None] * np.ones((1, size))
    stripes = 0.5 + 0.35 * np.sin(yy * (2.0 * np.pi / 12.0))
    img[:, :, 0] = stripes
    img[:, :, 1] = 1.0 - 0.6 * stripes
    return np.clip(img, 0.0, 1.0)


def _cmd_demo(args) -> int:
    base = _load_cfg(args)
    cfg = validate_config(PipelineConfig(**{
        **base.__dict__,
        # Desk-scale sweep defaults; a caller's --config still wins for
        # anything it sets explicitly via the demo section seed.
        "num_train_steps": 40, "beta_start": 0.01, "beta_end": 0.09,
        "schedule_kind": "linear", "predictor_kind": "style_pull",
        "tile_size": 32, "codec_mode": "identity",
    }))
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(args.out)
    with _stage("io"):
        out_dir.mkdir(parents=True, exist_ok=True)
        fixtures = out_dir / "fixtures"
        stylized = out_dir / "stylized"
        traces = out_dir / "traces"
        eval_dir = out_dir / "eval"
        for sub in (fixtures, stylized, traces, eval_dir):
            sub.mkdir(exist_ok=True)

    size = 96
    face_sets = [
        [mosaic.FaceBox(10, 14, 14, 14, id=0), mosaic.FaceBox(60, 52, 12, 16, id=1)],
        [mosaic.FaceBox(34, 8, 16, 12, id=0), mosaic.FaceBox(12, 58, 13, 13, id=1)],
    ]
    contents = []
    for idx, boxes in enumerate(face_sets):
        img = _demo_content(rng, size, boxes)
        path = fixtures / f"content_{idx}.png"
        save_image(img, path)
        mosaic.save_face_manifest(fixtures / f"content_{idx}.boxes.json", boxes)
        contents.append((idx, path, boxes))

    style_paths = []
    for idx in range(4):
        path = fixtures / f"style_{idx}.png"
        save_image(_demo_style(rng, 48), path)
        style_paths.append(path)
    grid = mosaic.build_style_mosaic(
        [load_image(p) for p in style_paths], mosaic.StyleMosaicSpec(2, 2, 48))
    save_image(grid, fixtures / "style_mosaic.png")
    # Execution needs a resolvable path; the echoed config and manifest
    # use paths relative to their own location so two demo trees are
    # bitwise identical regardless of the output directory name.
    cfg.style_image = str(fixtures / "style_mosaic.png")

    schedule = _schedule_from(cfg)
    plan = plan_timesteps(schedule, cfg.inference_steps)
    bound = _stability_bound(schedule, plan)
    multipliers = (0.0, 0.2, 0.4)

    summary = ["content,pipeline,multiplier,lambda_c,output,final_loss"]
    for idx, path, boxes in contents:
        content = load_image(path)
        for use_mosaic in (False, True):
            tag = "mosaic" if use_mosaic else "plain"
            for mult in multipliers:
                lam = mult * bound
                out, trace, schedule, plan = _run_pipeline(
                    content, boxes, cfg, use_mosaic, lam)
                name = f"content_{idx}_{tag}_g{int(mult * 100):03d}"
                with _stage("imageio"):
                    save_image(out, stylized / f"{name}.png")
                with _stage("io"):
                    _write_trace_csv(traces / f"{name}.csv", trace, plan,
                                     schedule)
                final_loss = trace.losses[-1] if trace.losses else float("nan")
                summary.append(
                    f"content_{idx},{tag},{mult!r},{lam!r},{name}.png,"
                    f"{final_loss!r}")
    with _stage("io"):
        (out_dir / "runs.csv").write_text("\n".join(summary) + "\n")

    # Identity comparison with the detail-losing toy stylizer: the
    # mosaic route enhances faces before degradation, the plain route
    # degrades them in place.
    stylizer = mosaic.DegradingStylizer(factor=4)
    manifest_lines = []
    for idx, path, boxes in contents:
        content = load_image(path)
        degraded = stylizer.apply(content)
        canvas, layout = mosaic.build_content_mosaic(
            content, boxes, mosaic.BicubicUpscaler(), cfg.tile_size)
        styled_canvas = stylizer.apply(canvas)
        faces = mosaic.extract_stylized_faces(styled_canvas, layout)
        background = styled_canvas[:content.shape[0], :content.shape[1]]
        via_mosaic = mosaic.reinsert_faces(background, faces, boxes,
                                           cfg.feather)
        mosaic_path = eval_dir / f"content_{idx}_mosaic.png"
        plain_path = eval_dir / f"content_{idx}_plain.png"
        save_image(via_mosaic, mosaic_path)
        save_image(degraded, plain_path)
        manifest_lines.append(
            '{"id": "content_%d", "style": "degrade", '
            '"content": "../fixtures/content_%d.png", '
            '"boxes": %s, "variants": {"mosaic": "content_%d_mosaic.png", '
            '"plain": "content_%d_plain.png"}}'
            % (idx, idx,
               "[" + ", ".join(
                   '{"id": %d, "x": %d, "y": %d, "w": %d, "h": %d}'
                   % (b.id, b.x, b.y, b.w, b.h) for b in boxes) + "]",
               idx, idx))
    with _stage("io"):
        manifest_path = eval_dir / "manifest.jsonl"
        manifest_path.write_text("\n".join(manifest_lines) + "\n")
    with _stage("evalkit"):
        entries = evalkit.load_eval_manifest(manifest_path)
        report = evalkit.run_eval(entries, "mosaic", "plain",
                                  evalkit.ToyEmbedder(cfg.embedder_size))
    with _stage("io"):
        (eval_dir / "report.csv").write_text(evalkit.report_csv(report))
        (eval_dir / "report.txt").write_text(evalkit.report_text(report))
        echo_cfg = replace(cfg, style_image="fixtures/style_mosaic.png")
        write_config(echo_cfg, out_dir / "config.ini")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="idstyle",
                     description="Identity-preserving stylization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="noise schedule utilities")
    ssub = p.add_subparsers(dest="action", required=True)
    dump = ssub.add_parser("dump", help="emit the schedule table as CSV")
    dump.add_argument("--out", required=True, help="CSV output path")
    dump.add_argument("--config", help="INI config path")
    dump.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("invert", help="map a content image to its start latent")
    p.add_argument("--content", required=True, help="content image (PNG/PPM/PGM)")
    p.add_argument("--out", required=True, help="latent tensor output path")
    p.add_argument("--config", help="INI config path")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("stylize", help="run the full guided pipeline")
    p.add_argument("--content", required=True, help="content image")
    p.add_argument("--out", required=True, help="stylized image output path")
    p.add_argument("--config", help="INI config path")
    p.add_argument("--mosaic", action="store_true",
                   help="wrap the run in the face-tile mosaic pipeline")
    p.add_argument("--boxes", help="face manifest JSON (required with --mosaic)")
    p.add_argument("--lambda-c", type=float, dest="lambda_c",
                   help="override the config's guidance strength")
    p.add_argument("--trace", help="write a per-step CSV trace here")
    p.set_defaults(func=_cmd_stylize)

    p = sub.add_parser("mosaic", help="mosaic pipeline pieces")
    msub = p.add_subparsers(dest="action", required=True)
    b = msub.add_parser("build-content", help="append enhanced-face tiles")
    b.add_argument("--image", required=True)
    b.add_argument("--boxes", required=True, help="face manifest JSON")
    b.add_argument("--out", required=True, help="mosaic canvas output image")
    b.add_argument("--layout", required=True, help="layout sidecar output JSON")
    b.add_argument("--tile-size", type=int, default=256, dest="tile_size")
    b.set_defaults(func=_cmd_mosaic)
    b = msub.add_parser("build-style", help="grid several style images")
    b.add_argument("--out", required=True)
    b.add_argument("--rows", type=int, required=True)
    b.add_argument("--cols", type=int, required=True)
    b.add_argument("--cell-size", type=int, required=True, dest="cell_size")
    b.add_argument("styles", nargs="+", help="style image paths")
    b.set_defaults(func=_cmd_mosaic)
    b = msub.add_parser("extract", help="crop stylized faces back out")
    b.add_argument("--image", required=True, help="stylized mosaic canvas")
    b.add_argument("--layout", required=True, help="layout sidecar JSON")
    b.add_argument("--out-dir", required=True, dest="out_dir")
    b.set_defaults(func=_cmd_mosaic)
    b = msub.add_parser("reinsert", help="paste stylized faces into a background")
    b.add_argument("--background", required=True)
    b.add_argument("--boxes", required=True, help="face manifest JSON")
    b.add_argument("--faces-dir", required=True, dest="faces_dir",
                   help="directory of face_<id>.png files")
    b.add_argument("--out", required=True)
    b.add_argument("--feather", type=int, default=0)
    b.set_defaults(func=_cmd_mosaic)

    p = sub.add_parser("eval", help="identity-preservation report")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest")
    p.add_argument("--candidate", default="candidate",
                   help="variant name treated as ours")
    p.add_argument("--baseline", default="baseline",
                   help="variant name treated as the baseline")
    p.add_argument("--out-csv", required=True, dest="out_csv")
    p.add_argument("--out-text", required=True, dest="out_text")
    p.add_argument("--config", help="INI config path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("demo", help="synthetic end-to-end run into a directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="INI config path")
    p.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"idstyle: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalDivergenceError as err:
        print(f"idstyle: {getattr(err, '_stage', 'sampler')}: {err}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, OSError) as err:
        print(f"idstyle: {getattr(err, '_stage', 'io')}: {err}",
              file=sys.stderr)
        return EXIT_IO
    except _USAGE_ERRORS as err:
        print(f"idstyle: {getattr(err, '_stage', 'args')}: {err}",
              file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
