"""Experiment harness: scenario batches, method comparison, blur ablation, diagnostics.

A run is described by one JSON document (`ExperimentConfig`). Results land in
``<output_dir>/<run_id>/``: the resolved ``config.json``, one CSV row per
(scenario, method) in ``report.csv``, full detail including fitness traces
in ``report.json``, and optional PNG diagnostics.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from dataclasses import field as dc_field
from pathlib import Path

import jsonschema
import numpy as np

from . import schemas
from .field import FieldModel, TemplateFrame, rasterize_areas, rasterize_lines, standard_pitch
from .geometry import Intrinsics, NoiseModel, Pose
from .imaging import BlurSpec, build_blurred_template, read_png, warp_to_topview, write_png
from .metrics import iou_part, rwe, summarize
from .optimize import ESConfig, FitnessContext, RefinementReport, evolve, fitness_from_rasters, oriented_homography, sgd_refine
from .synthetic import CameraSite, MaskDegradation, Scenario, generate_scenarios, halfway_sites, render_camera_mask

log = logging.getLogger(__name__)

METHODS = ("start", "es", "sgd")
WORKERS_ENV = "POSEREFINE_WORKERS"

CSV_COLUMNS = [
    "scenario_id",
    "camera",
    "xi_r",
    "xi_t",
    "method",
    "start_fitness",
    "final_fitness",
    "start_iou_part",
    "final_iou_part",
    "start_rwe_mean",
    "start_rwe_std",
    "start_rwe_median",
    "final_rwe_mean",
    "final_rwe_std",
    "final_rwe_median",
    "n_points",
    "last_iou_part",
    "last_rwe_mean",
    "evaluations",
    "runtime_s",
]
TIMING_COLUMNS = ("runtime_s",)


class ConfigError(ValueError):
    """Invalid experiment configuration or unusable output location."""


@dataclass(frozen=True)
class SGDConfig:
    lr: float = 1e-4
    momentum: float = 0.9
    steps: int = 50
    fd_step: tuple[float, float] = (1e-4, 2e-3)


@dataclass
class ExperimentConfig:
    """Everything a batch needs. ``field`` is None (standard 105 x 68 pitch),
    a path to a field JSON file, or an inline field document."""

    field: str | dict | None = None
    template_ppm: float = 10.0
    template_margin: float = 30.0
    cameras: list[CameraSite] | None = None
    image_width: int = 3840
    image_height: int = 2160
    fov_x_deg: float = 90.0
    intrinsics: Intrinsics | None = None
    noise: list[NoiseModel] = dc_field(default_factory=lambda: [NoiseModel(0.005, 0.1), NoiseModel(0.015, 0.3)])
    blur: BlurSpec = BlurSpec(7, 5)
    mode: str = "lines"
    es: ESConfig = ESConfig()
    sgd: SGDConfig = SGDConfig()
    methods: tuple[str, ...] = METHODS
    degradation: MaskDegradation = MaskDegradation()
    scenarios_per_camera: int = 10
    seed: int = 0
    output_dir: str = "runs"
    run_id: str | None = None
    diagnostics: bool = False

    # -- construction ----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        try:
            jsonschema.validate(d, schemas.load("config"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        try:
            cfg = cls(**cls._parse(d))
            cfg.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def _parse(cls, d: dict) -> dict:
        kw = {}
        for key in ("field", "mode", "scenarios_per_camera", "seed", "output_dir", "run_id", "diagnostics"):
            if key in d:
                kw[key] = d[key]
        if "template" in d:
            kw["template_ppm"] = d["template"].get("pixels_per_meter", cls.template_ppm)
            kw["template_margin"] = d["template"].get("margin", cls.template_margin)
        if d.get("cameras") is not None:
            kw["cameras"] = [CameraSite.from_dict(c) for c in d["cameras"]]
        if "image" in d:
            kw["image_width"], kw["image_height"] = d["image"]["width"], d["image"]["height"]
        if "intrinsics" in d:
            k = d["intrinsics"]
            if "fov_x_deg" in k:
                kw["fov_x_deg"] = k["fov_x_deg"]
            else:
                kw["intrinsics"] = Intrinsics.from_dict(k)
        if "noise" in d:
            kw["noise"] = [NoiseModel(*n) for n in d["noise"]]
        if "blur" in d:
            kw["blur"] = BlurSpec(d["blur"]["kernel_count"], d["blur"].get("base_size", 5))
        if "es" in d:
            e = d["es"]
            kw["es"] = replace(
                ESConfig(),
                **{k2: e[k1] for k1, k2 in (("mu", "mu"), ("lambda", "lam"), ("generations", "generations"), ("xi_decay", "xi_decay")) if k1 in e},
            )
        if "sgd" in d:
            s = dict(d["sgd"])
            if "fd_step" in s:
                s["fd_step"] = tuple(s["fd_step"])
            kw["sgd"] = SGDConfig(**s)
        if "methods" in d:
            kw["methods"] = tuple(d["methods"])
        if "degradation" in d:
            kw["degradation"] = MaskDegradation(**d["degradation"])
        return kw

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if self.image_width < 2 or self.image_height < 2:
            raise ConfigError("image must be at least 2x2 pixels")
        if self.mode not in ("lines", "areas"):
            raise ConfigError(f"mode must be 'lines' or 'areas', got {self.mode!r}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {list(self.methods)}")
        if self.scenarios_per_camera < 1:
            raise ConfigError("scenarios_per_camera must be >= 1")
        if not self.noise:
            raise ConfigError("at least one noise setting is required")
        if self.template_ppm <= 0 or self.template_margin < 0:
            raise ConfigError("template scale must be positive and margin non-negative")

    # -- resolved pieces -------------------------------------------------

    def field_model(self) -> FieldModel:
        if self.field is None:
            return standard_pitch()
        if isinstance(self.field, str):
            return FieldModel.load(self.field)
        if "standard" in self.field:
            return standard_pitch(**self.field["standard"])
        return FieldModel.from_dict(self.field)

    def camera_intrinsics(self) -> Intrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        return Intrinsics.for_image(self.image_width, self.image_height, self.fov_x_deg)

    def camera_sites(self, model: FieldModel) -> list[CameraSite]:
        return list(self.cameras) if self.cameras is not None else halfway_sites(model)

    def to_dict(self) -> dict:
        """Fully resolved document; loading it back reproduces this config."""
        model = self.field_model()
        return {
            "field": model.to_dict(),
            "template": {"pixels_per_meter": self.template_ppm, "margin": self.template_margin},
            "cameras": [c.to_dict() for c in self.camera_sites(model)],
            "image": {"width": self.image_width, "height": self.image_height},
            "intrinsics": self.camera_intrinsics().to_dict(),
            "noise": [[n.xi_r, n.xi_t] for n in self.noise],
            "blur": {"kernel_count": self.blur.kernel_count, "base_size": self.blur.base_size},
            "mode": self.mode,
            "es": {"mu": self.es.mu, "lambda": self.es.lam, "generations": self.es.generations, "xi_decay": self.es.xi_decay},
            "sgd": {"lr": self.sgd.lr, "momentum": self.sgd.momentum, "steps": self.sgd.steps, "fd_step": list(self.sgd.fd_step)},
            "methods": list(self.methods),
            "degradation": asdict(self.degradation),
            "scenarios_per_camera": self.scenarios_per_camera,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "run_id": self.run_id,
            "diagnostics": self.diagnostics,
        }


def worker_count(default: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return max(n, 1)
    return default or os.cpu_count() or 1


def derive_seed(*parts: int) -> int:
    """Independent 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def prepare_run_dir(cfg: ExperimentConfig) -> Path:
    """Create ``<output_dir>/<run_id>`` and write the config echo; fails before any compute."""
    run_id = cfg.run_id or time.strftime("run-%Y%m%d-%H%M%S")
    out = Path(cfg.output_dir) / run_id
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    resolved = cfg.to_dict()
    resolved["run_id"] = run_id
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    return out


@dataclass
class Setup:
    """Artifacts shared by every scenario of a run."""

    model: FieldModel
    intrinsics: Intrinsics
    frame: TemplateFrame
    template: np.ndarray
    sites: list[CameraSite]

    @classmethod
    def build(cls, cfg: ExperimentConfig, blur: BlurSpec | None = None) -> Setup:
        model = cfg.field_model()
        frame = TemplateFrame.for_field(model, cfg.template_ppm, cfg.template_margin)
        raster = rasterize_lines(model, frame) if cfg.mode == "lines" else rasterize_areas(model, frame)
        template = build_blurred_template(raster, blur or cfg.blur)
        return cls(model, cfg.camera_intrinsics(), frame, template, cfg.camera_sites(model))


def make_scenarios(cfg: ExperimentConfig, setup: Setup) -> list[Scenario]:
    scenarios = []
    for ni, noise in enumerate(cfg.noise):
        scenarios += generate_scenarios(
            setup.model,
            setup.intrinsics,
            setup.sites,
            noise,
            cfg.scenarios_per_camera,
            derive_seed(cfg.seed, ni),
            cfg.image_width,
            cfg.image_height,
            first_id=len(scenarios),
        )
    return scenarios


class MaskCache:
    """Camera masks; without random degradation one render per camera suffices."""

    def __init__(self, cfg: ExperimentConfig, setup: Setup):
        self.cfg, self.setup = cfg, setup
        d = cfg.degradation
        self.shared = d.dropout_fraction == 0 and d.speckle_rate == 0
        self._masks = {}

    def __call__(self, scenario: Scenario) -> np.ndarray:
        key = scenario.camera if self.shared else scenario.scenario_id
        if key not in self._masks:
            self._masks[key] = render_camera_mask(
                self.setup.model,
                scenario.intrinsics,
                scenario.gt_pose,
                self.cfg.image_width,
                self.cfg.image_height,
                mode=self.cfg.mode,
                degrade=self.cfg.degradation,
                rng=np.random.default_rng(derive_seed(scenario.seed, 2)),
            )
        return self._masks[key]

    def prefill(self, scenarios) -> None:
        for s in scenarios:
            self(s)


def evaluate_pose(setup: Setup, cfg: ExperimentConfig, scenario: Scenario, pose: Pose):
    h_gt = oriented_homography(scenario.intrinsics, scenario.gt_pose)
    h_est = oriented_homography(scenario.intrinsics, pose)
    d = rwe(h_gt, h_est, setup.model, cfg.image_width, cfg.image_height)
    iou = iou_part(h_gt, h_est, setup.model, cfg.image_width, cfg.image_height)
    return summarize(d, iou), d


def refine(method: str, ctx: FitnessContext, scenario: Scenario, cfg: ExperimentConfig, workers: int = 1) -> RefinementReport:
    if method == "start":
        f = ctx(scenario.start_pose)
        return RefinementReport("start", scenario.start_pose, f, [f], 1, 0.0)
    if method == "es":
        es = replace(cfg.es, noise=scenario.noise, seed=derive_seed(scenario.seed, 1))
        return evolve(ctx, scenario.start_pose, es, workers=workers)
    if method == "sgd":
        s = cfg.sgd
        return sgd_refine(ctx, scenario.start_pose, lr=s.lr, momentum=s.momentum, steps=s.steps, fd_step=s.fd_step)
    raise ValueError(f"unknown method {method!r}")


def run_scenario(cfg: ExperimentConfig, setup: Setup, scenario: Scenario, mask: np.ndarray, workers: int = 1) -> list[dict]:
    """All enabled methods on one scenario; one result record per method."""
    ctx = FitnessContext(setup.template, mask, scenario.intrinsics, setup.frame)
    start_metrics, _ = evaluate_pose(setup, cfg, scenario, scenario.start_pose)
    start_fitness = ctx(scenario.start_pose)
    records = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        report = refine(method, ctx, scenario, cfg, workers)
        final, distances = evaluate_pose(setup, cfg, scenario, report.best_pose)
        last = evaluate_pose(setup, cfg, scenario, report.final_pose)[0] if report.final_pose is not None else None
        records.append(
            {
                "scenario": scenario,
                "method": method,
                "start_fitness": start_fitness,
                "start": start_metrics,
                "final": final,
                "distances": distances,
                "last": last,
                "report": report,
                "runtime": time.perf_counter() - t0,
            }
        )
    return records


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "inf"
    return str(x)


def csv_row(rec: dict) -> dict:
    s, st, fi, last = rec["scenario"], rec["start"], rec["final"], rec["last"]
    return {
        "scenario_id": s.scenario_id,
        "camera": s.camera,
        "xi_r": s.noise.xi_r,
        "xi_t": s.noise.xi_t,
        "method": rec["method"],
        "start_fitness": rec["start_fitness"],
        "final_fitness": rec["report"].best_fitness,
        "start_iou_part": st.iou_part,
        "final_iou_part": fi.iou_part,
        "start_rwe_mean": st.rwe_mean,
        "start_rwe_std": st.rwe_std,
        "start_rwe_median": st.rwe_median,
        "final_rwe_mean": fi.rwe_mean,
        "final_rwe_std": fi.rwe_std,
        "final_rwe_median": fi.rwe_median,
        "n_points": fi.n_points,
        "last_iou_part": last.iou_part if last else None,
        "last_rwe_mean": last.rwe_mean if last else None,
        "evaluations": rec["report"].evaluations,
        "runtime_s": round(rec["runtime"], 3),
    }


def write_csv(path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    Path(path).write_text(buf.getvalue())


def aggregate(records: list[dict]) -> list[dict]:
    """Pooled statistics per (noise, method), one row per table line.

    RWE statistics pool the keypoint distances of every scenario, so each
    visible keypoint counts once, like a per-image RWE set concatenated
    over the test set.
    """
    groups: dict[tuple, dict] = {}
    for rec in records:
        s = rec["scenario"]
        key = (s.noise.xi_r, s.noise.xi_t, rec["method"])
        g = groups.setdefault(key, {"dist": [], "iou": [], "n": 0})
        g["dist"].append(rec["distances"])
        g["iou"].append(rec["final"].iou_part)
        g["n"] += 1
    rows = []
    order = {m: i for i, m in enumerate(METHODS)}
    for (xr, xt, method), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], order[kv[0][2]])):
        d = np.concatenate(g["dist"])
        rows.append(
            {
                "xi_r": xr,
                "xi_t": xt,
                "method": method,
                "scenarios": g["n"],
                "n_points": int(d.size),
                "iou_part_mean": float(np.mean(g["iou"])),
                "rwe_mean": float(d.mean()),
                "rwe_std": float(d.std()),
                "rwe_median": float(np.median(d)),
            }
        )
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'noise (rad, m)':<16}{'method':<8}{'IoU_part %':>11}{'RWE mean':>10}{'RWE std':>10}{'n':>6}"]
    for r in rows:
        noise = f"({r['xi_r']:g}, {r['xi_t']:g})"
        lines.append(f"{noise:<16}{r['method']:<8}{100 * r['iou_part_mean']:>11.2f}{r['rwe_mean']:>10.2f}{r['rwe_std']:>10.2f}{r['n_points']:>6}")
    return "\n".join(lines)


def record_json(rec: dict) -> dict:
    s = rec["scenario"]
    d = {
        "scenario": s.to_dict(),
        "method": rec["method"],
        "start_fitness": _json_num(rec["start_fitness"]),
        "start_metrics": rec["start"].to_dict(),
        "final_metrics": rec["final"].to_dict(),
        "refinement": rec["report"].to_dict(),
    }
    if rec["last"] is not None:
        d["last_metrics"] = rec["last"].to_dict()
    return d


def _json_num(f):
    return float(f) if math.isfinite(f) else None


def run_records(cfg: ExperimentConfig, setup: Setup, scenarios: list[Scenario], workers: int | None = None) -> list[dict]:
    """Run every scenario, in parallel threads; records come back ordered by scenario id."""
    workers = worker_count(workers)
    masks = MaskCache(cfg, setup)
    masks.prefill(scenarios)

    def one(s):
        return run_scenario(cfg, setup, s, masks(s))

    if workers > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_scenario = list(pool.map(one, scenarios))
    else:
        per_scenario = [one(s) for s in scenarios]
    return [rec for recs in per_scenario for rec in recs]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> Path:
    """Run the full batch and write the report tree; returns the run directory."""
    cfg.validate()
    out = prepare_run_dir(cfg)
    setup = Setup.build(cfg)
    scenarios = make_scenarios(cfg, setup)
    log.info("running %d scenarios x %d methods", len(scenarios), len(cfg.methods))
    records = run_records(cfg, setup, scenarios, workers)
    write_csv(out / "report.csv", [csv_row(r) for r in records])
    table = aggregate(records)
    report = {
        "run_id": out.name,
        "columns": CSV_COLUMNS,
        "aggregate": table,
        "results": [record_json(r) for r in records],
    }
    jsonschema.validate(report, schemas.load("report"))
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    log.info("aggregate\n%s", format_table(table))
    if cfg.diagnostics:
        masks = MaskCache(cfg, setup)
        for rec in records:
            if rec["method"] != "start":
                s = rec["scenario"]
                ctx = FitnessContext(setup.template, masks(s), s.intrinsics, setup.frame)
                dump_diagnostics(out / "diagnostics", ctx, s, rec["report"])
    return out


def run_blur_ablation(
    cfg: ExperimentConfig,
    kernel_counts=(0, 1, 3, 7, 15),
    base_sizes=(5,),
    es: ESConfig | None = None,
    workers: int | None = None,
) -> Path:
    """ES on the same scenarios under every (kernel_count, base_size) template.

    Writes ``ablation.csv`` (one row per cell: RWE mean/median/std and median
    IoU_part) and ``report.csv`` (every scenario of every cell).
    """
    cfg.validate()
    cfg = replace(cfg, methods=("es",), es=es or ESConfig(mu=32, lam=64, generations=60))
    out = prepare_run_dir(cfg)
    base = Setup.build(cfg, BlurSpec(0))
    scenarios = make_scenarios(cfg, base)
    cells = []
    for n in kernel_counts:
        # base size is irrelevant without blur kernels
        for b in base_sizes if n >= 1 else base_sizes[:1]:
            spec = BlurSpec(n, b)
            if spec not in cells:
                cells.append(spec)
    cell_rows, rows, detail = [], [], []
    for spec in cells:
        setup = Setup(base.model, base.intrinsics, base.frame, build_blurred_template(_raw_raster(cfg, base), spec), base.sites)
        log.info("ablation cell kernel_count=%d base_size=%d", spec.kernel_count, spec.base_size)
        records = run_records(cfg, setup, scenarios, workers)
        dist = np.concatenate([r["distances"] for r in records])
        ious = [r["final"].iou_part for r in records]
        cell = {
            "kernel_count": spec.kernel_count,
            "base_size": spec.base_size,
            "sizes": " ".join(str(s) for s in spec.sizes),
            "scenarios": len(records),
            "n_points": int(dist.size),
            "rwe_mean": float(dist.mean()),
            "rwe_median": float(np.median(dist)),
            "rwe_std": float(dist.std()),
            "iou_part_median": float(np.median(ious)),
        }
        cell_rows.append(cell)
        for r in records:
            rows.append({"kernel_count": spec.kernel_count, "base_size": spec.base_size, **csv_row(r)})
            detail.append({"kernel_count": spec.kernel_count, "base_size": spec.base_size, **record_json(r)})
    _write_dicts(out / "ablation.csv", cell_rows)
    _write_dicts(out / "report.csv", rows)
    (out / "report.json").write_text(json.dumps({"run_id": out.name, "cells": cell_rows, "results": detail}, indent=2) + "\n")
    return out


def _raw_raster(cfg, setup):
    return rasterize_lines(setup.model, setup.frame) if cfg.mode == "lines" else rasterize_areas(setup.model, setup.frame)


def _write_dicts(path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    Path(path).write_text(buf.getvalue())


def warp_mask(ctx: FitnessContext, pose) -> np.ndarray:
    h = oriented_homography(ctx.intrinsics, pose)
    return warp_to_topview(ctx.mask, h, ctx.frame, ctx.frame.width_px, ctx.frame.height_px)


def overlay(template: np.ndarray, warped: np.ndarray) -> np.ndarray:
    """RGB composite: template in red, warped mask in green, agreement shows yellow."""
    return np.stack([template, np.clip(warped, 0, 1), np.zeros_like(template)], axis=-1)


def dump_diagnostics(directory, ctx: FitnessContext, scenario: Scenario, report: RefinementReport) -> dict:
    """Write before/after top-view images for one refinement.

    Grayscale images are 16-bit so the refined fitness can be recomputed
    from the files. Failures are logged, never raised. Returns the written
    paths by role.
    """
    directory = Path(directory)
    stem = f"s{scenario.scenario_id:04d}_{report.method}"
    paths = {
        "template": directory / "template.png",
        "mask": directory / f"s{scenario.scenario_id:04d}_mask.png",
        "warped_start": directory / f"{stem}_warped_start.png",
        "warped_refined": directory / f"{stem}_warped_refined.png",
        "overlay_start": directory / f"{stem}_overlay_start.png",
        "overlay_refined": directory / f"{stem}_overlay_refined.png",
    }
    try:
        before = warp_mask(ctx, scenario.start_pose)
        after = warp_mask(ctx, report.best_pose)
        if not paths["template"].exists():
            write_png(paths["template"], ctx.template, bits=16)
        write_png(paths["mask"], ctx.mask, bits=16)
        write_png(paths["warped_start"], before, bits=16)
        write_png(paths["warped_refined"], after, bits=16)
        write_png(paths["overlay_start"], overlay(ctx.template, before))
        write_png(paths["overlay_refined"], overlay(ctx.template, after))
    except Exception:  # diagnostics are best effort
        log.exception("could not write diagnostics for scenario %d", scenario.scenario_id)
    return paths


def fitness_from_files(warped_path, template_path) -> float:
    return fitness_from_rasters(read_png(warped_path), read_png(template_path))
