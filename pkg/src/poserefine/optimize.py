"""Alignment fitness, (mu + lambda) evolution strategy and a momentum-SGD baseline.

Both optimizers accept any callable mapping a pose 6-vector to a float, so a
`FitnessContext` and an analytic surrogate are interchangeable.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import alignment_sums, support_table
from .geometry import DegenerateGeometryError, check_invertible, Intrinsics, NoiseModel, Pose, homography_from_pose, perturb_pose
from .imaging import threshold_mask, warp_to_topview

SENTINEL = math.inf


class AllSentinelError(RuntimeError):
    """No individual of the initial population sees the field."""


def oriented_homography(k: Intrinsics, pose) -> np.ndarray:
    """``homography_from_pose`` rescaled so world points in front of the camera
    have positive homogeneous scale, even when the world origin is behind it."""
    h = homography_from_pose(k, pose)
    p = Pose.from_vector(pose) if not isinstance(pose, Pose) else pose
    return -h if p.t[2] < 0 else h


@dataclass(frozen=True, eq=False)
class FitnessContext:
    """Everything needed to score a pose: blurred template, camera mask, camera, frame."""

    template: np.ndarray
    mask: np.ndarray
    intrinsics: Intrinsics
    frame: object
    _support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        template = np.ascontiguousarray(self.template, dtype=np.float64)
        mask = np.ascontiguousarray(self.mask, dtype=np.float64)
        if template.shape != self.frame.shape:
            raise ValueError(f"template shape {template.shape} does not match frame {self.frame.shape}")
        if mask.ndim != 2 or min(mask.shape) < 2:
            raise ValueError("mask must be a 2D image of at least 2x2 pixels")
        object.__setattr__(self, "template", template)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "_support", support_table(mask))

    def __call__(self, x) -> float:
        return fitness(self, x)


def fitness(ctx: FitnessContext, pose) -> float:
    """Normalized squared misalignment between the top-view mask and the template.

    ``sum((W - T * B)**2) / sum(B)`` where ``W`` is the mask warped to the
    template grid and ``B = W > 0.5``. Poses that see no field (``sum(B) == 0``)
    or give a degenerate homography score ``SENTINEL`` (+inf).
    """
    try:
        h = check_invertible(oriented_homography(ctx.intrinsics, pose))
    except (DegenerateGeometryError, ValueError):
        return SENTINEL
    fr = ctx.frame
    num, den = alignment_sums(ctx.mask, ctx._support, ctx.template, h, fr.pixels_per_meter, fr.origin_px[0], fr.origin_px[1])
    if den == 0:
        return SENTINEL
    return num / den


def fitness_reference(ctx: FitnessContext, pose) -> float:
    """Same quantity as `fitness`, built from the public raster operations."""
    h = oriented_homography(ctx.intrinsics, pose)
    w = warp_to_topview(ctx.mask, h, ctx.frame, ctx.frame.width_px, ctx.frame.height_px)
    return fitness_from_rasters(w, ctx.template)


def fitness_from_rasters(warped: np.ndarray, template: np.ndarray) -> float:
    b = threshold_mask(warped, 0.5)
    den = b.sum()
    if den == 0:
        return SENTINEL
    return float(((warped - template * b) ** 2).sum() / den)


@dataclass(frozen=True)
class ESConfig:
    mu: int = 64
    lam: int = 128
    generations: int = 50
    xi_decay: float = 0.95
    noise: NoiseModel = NoiseModel(0.015, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.mu < 1 or self.lam < 1:
            raise ValueError("mu and lambda must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0 < self.xi_decay <= 1:
            raise ValueError("xi_decay must lie in (0, 1]")

    def mutation_scales(self, generation: int) -> np.ndarray:
        return self.xi_decay**generation * self.noise.scales


@dataclass
class RefinementReport:
    method: str
    best_pose: Pose
    best_fitness: float
    fitness_trace: list[float]
    evaluations: int
    wall_time: float
    final_pose: Pose | None = None
    final_fitness: float | None = None

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "best_pose": self.best_pose.to_dict(),
            "best_fitness": _json_float(self.best_fitness),
            "fitness_trace": [_json_float(f) for f in self.fitness_trace],
            "evaluations": self.evaluations,
            "wall_time": self.wall_time,
        }
        if self.final_pose is not None:
            d["final_pose"] = self.final_pose.to_dict()
            d["final_fitness"] = _json_float(self.final_fitness)
        return d


def _json_float(f):
    # JSON has no infinity; null marks the sentinel
    return None if f is None or not math.isfinite(f) else float(f)


def _clean(f) -> float:
    f = float(f)
    return SENTINEL if math.isnan(f) else f


class _Evaluator:
    def __init__(self, objective, workers: int):
        self.objective = objective
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None
        self.count = 0

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        self.count += len(xs)
        if self.pool is None:
            return np.array([_clean(self.objective(x)) for x in xs])
        return np.array([_clean(f) for f in self.pool.map(self.objective, list(xs))])

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


@dataclass
class Offspring:
    parents_i: np.ndarray
    parents_j: np.ndarray
    blend: np.ndarray
    recombined: np.ndarray
    children: np.ndarray


def make_offspring(population: np.ndarray, generation: int, cfg: ESConfig, rng: np.random.Generator) -> Offspring:
    """Draw lambda children: blend two uniformly drawn parents, then mutate.

    All random draws for the generation happen here, in a fixed order, so
    evaluation can proceed in any order afterwards.
    """
    mu = len(population)
    i = rng.integers(0, mu, size=cfg.lam)
    j = rng.integers(0, mu, size=cfg.lam)
    a = rng.random((cfg.lam, 6))
    recombined = a * population[i] + (1.0 - a) * population[j]
    children = recombined + rng.normal(0.0, cfg.mutation_scales(generation), size=(cfg.lam, 6))
    return Offspring(i, j, a, recombined, children)


def evolve(objective, start, cfg: ESConfig, workers: int = 1, history: list | None = None) -> RefinementReport:
    """Refine ``start`` by (mu + lambda) elitist evolution.

    The initial population holds ``start`` itself plus ``mu - 1`` mutated
    copies. Each generation adds lambda blended and mutated children and
    keeps the best ``mu`` of parents and children (stable sort, so earlier
    individuals win ties). If ``history`` is a list, the population of every
    generation boundary is appended to it.
    """
    t0 = time.perf_counter()
    x0 = (start if isinstance(start, Pose) else Pose.from_vector(start)).vector
    rng = np.random.default_rng(cfg.seed)
    population = np.vstack([x0] + [perturb_pose(x0, cfg.noise, rng).vector for _ in range(cfg.mu - 1)])
    evaluate = _Evaluator(objective, workers)
    try:
        scores = evaluate(population)
        if not np.any(np.isfinite(scores)):
            raise AllSentinelError("every individual of the initial population misses the field; refinement cannot start")
        order = np.argsort(scores, kind="stable")
        population, scores = population[order], scores[order]
        trace = [float(scores[0])]
        if history is not None:
            history.append(population.copy())
        for g in range(cfg.generations):
            off = make_offspring(population, g, cfg, rng)
            child_scores = evaluate(off.children)
            merged = np.vstack([population, off.children])
            merged_scores = np.concatenate([scores, child_scores])
            keep = np.argsort(merged_scores, kind="stable")[: cfg.mu]
            population, scores = merged[keep], merged_scores[keep]
            trace.append(float(scores[0]))
            if history is not None:
                history.append(population.copy())
    finally:
        evaluate.close()
    return RefinementReport(
        "es",
        Pose.from_vector(population[0]),
        float(scores[0]),
        trace,
        evaluate.count,
        time.perf_counter() - t0,
    )


def central_gradient(objective, x, steps) -> np.ndarray:
    """Central finite-difference gradient with per-component ``steps``.

    Falls back to a one-sided difference when one probe hits the sentinel,
    and to zero when both do.
    """
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    f0 = None
    grad = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = steps[k]
        fp, fm = _clean(objective(x + e)), _clean(objective(x - e))
        if math.isfinite(fp) and math.isfinite(fm):
            grad[k] = (fp - fm) / (2 * steps[k])
        elif math.isfinite(fp) or math.isfinite(fm):
            if f0 is None:
                f0 = _clean(objective(x))
            grad[k] = (fp - f0) / steps[k] if math.isfinite(fp) else (f0 - fm) / steps[k]
    return grad


def sgd_refine(
    objective,
    start,
    lr: float = 1e-4,
    momentum: float = 0.9,
    steps: int = 50,
    fd_step: tuple[float, float] = (1e-4, 2e-3),
) -> RefinementReport:
    """Momentum gradient descent on the fitness with finite-difference gradients.

    ``best_pose`` is the best pose seen along the trajectory; the last
    iterate is kept as ``final_pose``. ``fitness_trace`` holds the best
    fitness so far after each step.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    t0 = time.perf_counter()
    x = (start if isinstance(start, Pose) else Pose.from_vector(start)).vector
    h = np.array([fd_step[0]] * 3 + [fd_step[1]] * 3)
    calls = [0]

    def f(z):
        calls[0] += 1
        return _clean(objective(z))

    fx = f(x)
    best_x, best_f = x.copy(), fx
    trace = [fx]
    if math.isfinite(fx):
        velocity = np.zeros(6)
        for _ in range(steps):
            grad = central_gradient(f, x, h)
            velocity = momentum * velocity - lr * grad
            x = x + velocity
            fx = f(x)
            if fx < best_f:
                best_x, best_f = x.copy(), fx
            trace.append(best_f)
    return RefinementReport(
        "sgd",
        Pose.from_vector(best_x),
        float(best_f),
        trace,
        calls[0],
        time.perf_counter() - t0,
        final_pose=Pose.from_vector(x),
        final_fitness=float(fx),
    )
