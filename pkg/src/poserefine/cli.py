"""Command line entry point: ``poserefine <subcommand>``.

Subcommands
-----------
calibrate       refine one camera pose, either a synthetic scenario or a
                user-supplied segmentation mask PNG with intrinsics and start pose
experiment      batch comparison of start / ES / SGD over generated scenarios
ablate-blur     ES over a grid of template blur pyramids
render-template write the blurred template as a 16-bit PNG for inspection

Flags override the corresponding fields of the JSON config given by
``--config``. The worker-thread count comes from ``--workers`` or the
``POSEREFINE_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .field import FieldModel, TemplateFrame, rasterize_areas, rasterize_lines, standard_pitch
from .geometry import Intrinsics, NoiseModel, Pose
from .imaging import BlurSpec, build_blurred_template, gaussian_blur, read_png, write_png
from .optimize import ESConfig, FitnessContext, evolve, sgd_refine
from .synthetic import CameraSite

log = logging.getLogger("poserefine")


def _image_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", help="output directory (config: output_dir)")
    p.add_argument("--run-id", help="run directory name (default: timestamp)")
    p.add_argument("--image", type=_image_size, metavar="WxH", help="camera image size")
    p.add_argument("--fov", type=float, help="horizontal field of view in degrees")
    p.add_argument("--noise", type=float, nargs=2, action="append", metavar=("XI_R", "XI_T"), help="noise setting; repeatable")
    p.add_argument("--scenarios", type=int, help="scenarios per camera and noise setting")
    p.add_argument("--kernel-count", type=int, help="template blur kernel count")
    p.add_argument("--base-size", type=int, help="template blur base kernel size")
    p.add_argument("--margin", type=float, help="template margin around the field, meters")
    p.add_argument("--mu", type=int)
    p.add_argument("--lam", type=int, help="offspring per generation (lambda)")
    p.add_argument("--generations", type=int)
    p.add_argument("--workers", type=int, help="worker threads (env: %s)" % ex.WORKERS_ENV)
    p.add_argument("--diagnostics", action="store_true", help="write before/after PNGs")
    p.add_argument("-v", "--verbose", action="store_true")


def load_config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out:
        kw["output_dir"] = args.out
    if args.run_id:
        kw["run_id"] = args.run_id
    if args.image:
        kw["image_width"], kw["image_height"] = args.image
        if cfg.intrinsics is not None:
            log.warning("--image given with explicit intrinsics; intrinsics kept as configured")
    if args.fov is not None:
        kw["fov_x_deg"] = args.fov
        kw["intrinsics"] = None
    if args.noise:
        kw["noise"] = [NoiseModel(*n) for n in args.noise]
    if args.scenarios is not None:
        kw["scenarios_per_camera"] = args.scenarios
    if args.kernel_count is not None or args.base_size is not None:
        kw["blur"] = BlurSpec(
            cfg.blur.kernel_count if args.kernel_count is None else args.kernel_count,
            cfg.blur.base_size if args.base_size is None else args.base_size,
        )
    if args.margin is not None:
        kw["template_margin"] = args.margin
    es = {k: v for k, v in (("mu", args.mu), ("lam", args.lam), ("generations", args.generations)) if v is not None}
    if es:
        kw["es"] = replace(cfg.es, **es)
    if args.diagnostics:
        kw["diagnostics"] = True
    cfg = replace(cfg, **kw)
    cfg.validate()
    return cfg


def cmd_experiment(args) -> int:
    cfg = load_config(args)
    if args.methods:
        cfg = replace(cfg, methods=tuple(args.methods))
        cfg.validate()
    t0 = time.perf_counter()
    out = ex.run_experiment(cfg, workers=args.workers)
    report = json.loads((out / "report.json").read_text())
    print(ex.format_table(report["aggregate"]))
    print(f"wrote {out} in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    es = ESConfig(
        mu=args.mu or 32,
        lam=args.lam or 64,
        generations=args.generations if args.generations is not None else 60,
        xi_decay=cfg.es.xi_decay,
    )
    out = ex.run_blur_ablation(cfg, args.kernel_counts, args.base_sizes, es=es, workers=args.workers)
    print((out / "ablation.csv").read_text(), end="")
    print(f"wrote {out}")
    return 0


def cmd_render_template(args) -> int:
    cfg = load_config(args)
    model = cfg.field_model()
    frame = TemplateFrame.for_field(model, cfg.template_ppm, cfg.template_margin)
    raster = rasterize_lines(model, frame) if cfg.mode == "lines" else rasterize_areas(model, frame)
    template = build_blurred_template(raster, cfg.blur)
    path = Path(args.output)
    write_png(path, template, bits=16)
    path.with_suffix(".json").write_text(json.dumps({"frame": frame.to_dict(), "blur_sizes": list(cfg.blur.sizes)}, indent=2) + "\n")
    print(f"wrote {path} ({frame.width_px}x{frame.height_px}, blur sizes {list(cfg.blur.sizes)})")
    return 0


def _load_json(path):
    return json.loads(Path(path).read_text())


def cmd_calibrate(args) -> int:
    if args.mask:
        return _calibrate_files(args)
    stray = [flag for flag, val in (("--intrinsics", args.intrinsics), ("--start", args.start)) if val]
    if stray:
        raise ex.ConfigError(f"{', '.join(stray)} only apply together with --mask")
    cfg = load_config(args)
    model = cfg.field_model()
    sites = cfg.camera_sites(model)
    if args.site is not None:
        site = CameraSite(args.site[0], args.site[1], args.site[2])
    else:
        if not 0 <= args.camera < len(sites):
            raise ex.ConfigError(f"--camera must lie in [0, {len(sites) - 1}]")
        site = sites[args.camera]
    noise = cfg.noise[-1] if not args.noise else NoiseModel(*args.noise[0])
    methods = tuple(args.methods) if args.methods else cfg.methods
    cfg = replace(cfg, cameras=[site], noise=[noise], scenarios_per_camera=1, methods=methods)
    cfg.validate()
    out = ex.run_experiment(cfg, workers=args.workers)
    report = json.loads((out / "report.json").read_text())
    for r in report["results"]:
        m = r["final_metrics"]
        print(f"{r['method']:<6} fitness {_show(r['refinement']['best_fitness'])}  IoU_part {100 * m['iou_part']:.2f}%  RWE mean {m['rwe_mean']:.3f} m")
    print(f"wrote {out}")
    return 0


def _show(f):
    return "inf" if f is None else f"{f:.5f}"


def _calibrate_files(args) -> int:
    """Refine a user-supplied pose against a user-supplied segmentation mask."""
    if not (args.intrinsics and args.start):
        raise ex.ConfigError("--mask requires --intrinsics and --start")
    cfg = load_config(args)
    mask = read_png(args.mask)
    if cfg.degradation.blur_size > 1:
        mask = gaussian_blur(mask, cfg.degradation.blur_size)
    k = Intrinsics.from_dict(_load_json(args.intrinsics))
    start = Pose.from_dict(_load_json(args.start))
    model = FieldModel.load(args.field) if args.field else (cfg.field_model() if cfg.field else standard_pitch())
    frame = TemplateFrame.for_field(model, cfg.template_ppm, cfg.template_margin)
    raster = rasterize_lines(model, frame) if cfg.mode == "lines" else rasterize_areas(model, frame)
    ctx = FitnessContext(build_blurred_template(raster, cfg.blur), mask, k, frame)
    noise = cfg.noise[-1] if not args.noise else NoiseModel(*args.noise[0])
    method = (args.methods or ["es"])[0]
    if method == "sgd":
        s = cfg.sgd
        report = sgd_refine(ctx, start, lr=s.lr, momentum=s.momentum, steps=s.steps, fd_step=s.fd_step)
    elif method == "es":
        report = evolve(ctx, start, replace(cfg.es, noise=noise, seed=cfg.seed), workers=ex.worker_count(args.workers))
    else:
        raise ex.ConfigError("file calibration supports the methods es and sgd")
    run_id = cfg.run_id or time.strftime("run-%Y%m%d-%H%M%S")
    out = Path(cfg.output_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    result = {
        "mask": str(args.mask),
        "intrinsics": k.to_dict(),
        "start_pose": start.to_dict(),
        "start_fitness": ex._json_num(ctx(start)),
        "refinement": report.to_dict(),
    }
    (out / "result.json").write_text(json.dumps(result, indent=2) + "\n")
    if cfg.diagnostics:
        scenario = ex.Scenario(0, 0, k, start, start, noise, cfg.seed)
        ex.dump_diagnostics(out / "diagnostics", ctx, scenario, report)
    print(f"{method} fitness {_show(result['start_fitness'])} -> {_show(ex._json_num(report.best_fitness))}")
    print(json.dumps(report.best_pose.to_dict()))
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poserefine", description="Camera pose refinement against a sports field template.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="refine a single camera pose")
    _common(p)
    p.add_argument("--camera", type=int, default=0, help="index of the configured camera site (synthetic mode)")
    p.add_argument("--site", type=float, nargs=3, metavar=("X", "Y", "HEIGHT"), help="ad hoc camera site aimed at the center")
    p.add_argument("--methods", nargs="+", choices=ex.METHODS)
    p.add_argument("--mask", type=Path, help="segmentation mask PNG (file mode)")
    p.add_argument("--intrinsics", type=Path, help="intrinsics JSON {fx, fy, cx, cy} (file mode)")
    p.add_argument("--start", type=Path, help="start pose JSON {r, t} (file mode)")
    p.add_argument("--field", type=Path, help="field model JSON (default: standard pitch)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("experiment", help="batch comparison over generated scenarios")
    _common(p)
    p.add_argument("--methods", nargs="+", choices=ex.METHODS)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablate-blur", help="ES over a grid of template blur settings")
    _common(p)
    p.add_argument("--kernel-counts", type=int, nargs="+", default=[0, 1, 3, 7, 15])
    p.add_argument("--base-sizes", type=int, nargs="+", default=[5])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render-template", help="write the blurred template PNG")
    _common(p)
    p.add_argument("-o", "--output", default="template.png")
    p.set_defaults(func=cmd_render_template)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"poserefine: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
