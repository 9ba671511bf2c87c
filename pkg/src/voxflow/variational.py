"""Per-sample variational motion estimation.

Each altitude level is optimized independently: gradient descent with
momentum on the sequence-consistent total loss, coarse-to-fine over an
average-pooling pyramid (estimate at the coarsest grid, upsample the field
by 2 with vector rescaling, refine). Step sizes are expressed in grid cells
of maximum per-iteration displacement change, and a backtracking line search
guarantees the accepted-iterate loss sequence is non-increasing.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DivergedError, NoOverlapError
from .flow import LossConfig, SequenceObjective, _as_dbr, gradient_check
from .grid import DBR_FLOOR, MotionField, RainField, avg_pool2d, pool_mask_all, upsample2d


class Init(enum.Enum):
    """Optimization schedule: PYRAMID refines coarse-to-fine from the zero
    field at the coarsest grid; ZERO runs a single full-resolution stage."""

    ZERO = "zero"
    PYRAMID = "pyramid"


class LevelStatus(enum.Enum):
    OK = "ok"
    NO_SIGNAL = "no_signal"


@dataclass
class OptimizerConfig:
    """Knobs of the subgradient descent.

    step_size is the initial per-iteration displacement change in grid
    cells (the raw gradient is sup-norm normalized); it decays by step_decay
    every iteration and is additionally backtracked by miss_decay whenever a
    step fails to improve on the best iterate. After reset_after consecutive
    misses the search restarts from the best iterate with momentum cleared.
    max_iters applies per coarse-to-fine stage.
    """

    max_iters: int = 200
    step_size: float = 0.5
    momentum: float = 0.85
    coarse_to_fine_levels: int = 3
    init: Init = Init.PYRAMID
    grad_check: bool = False
    step_decay: float = 0.995
    miss_decay: float = 0.7
    reset_after: int = 6
    min_step: float = 5e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.coarse_to_fine_levels < 1:
            raise ValueError("coarse_to_fine_levels must be >= 1")
        if not (0.0 < self.step_decay <= 1.0) or not (0.0 < self.miss_decay <= 1.0):
            raise ValueError("decay factors must lie in (0, 1]")


#: One accepted iterate: (loss_total, data_term, divergence_term).
TraceRow = tuple[float, float, float]


@dataclass
class VariationalResult:
    motion: MotionField
    statuses: list[LevelStatus]
    traces: list[list[TraceRow]] = field(default_factory=list)


def default_threads() -> int:
    """Parallelism cap from the VOXFLOW_THREADS environment variable."""
    raw = os.environ.get("VOXFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _descend(obj: SequenceObjective, u: np.ndarray, opt: OptimizerConfig,
             trace: list[TraceRow] | None,
             global_only: bool = False) -> np.ndarray:
    """Momentum subgradient descent tracking the best iterate.

    With global_only the gradient is projected onto spatially constant
    fields (descent over one translation vector per level), the 2-dof
    extreme of the coarse-to-fine schedule. Trial steps that fail to improve
    on the best loss backtrack the working step size; the recorded trace
    holds accepted (improving) iterates only, so it is non-increasing by
    construction. NaN losses raise DivergedError; +inf (a pair lost all
    overlap) just rejects the trial.
    """
    best_total, data, div, grad = obj.evaluate(u, want_grad=True)
    if np.isnan(best_total):
        raise DivergedError(0)
    if not np.isfinite(best_total):
        raise NoOverlapError("frames share no valid cells at the initial iterate")
    if trace is not None:
        trace.append((best_total, data, div))
    u_best = u.copy()
    u_cur = u
    vel = np.zeros_like(u)
    step = opt.step_size
    misses = 0
    for it in range(1, opt.max_iters + 1):
        if global_only:
            grad = np.broadcast_to(grad.mean(axis=(2, 3), keepdims=True),
                                   grad.shape)
        gmax = float(np.abs(grad).max())
        if gmax < 1e-14:
            break
        vel = opt.momentum * vel - (step / gmax) * grad
        u_cur = u_cur + vel
        total, data, div, grad = obj.evaluate(u_cur, want_grad=True)
        if np.isnan(total):
            raise DivergedError(it)
        if total < best_total:
            best_total = total
            u_best = u_cur.copy()
            misses = 0
            if trace is not None:
                trace.append((total, data, div))
        else:
            misses += 1
            step *= opt.miss_decay
            vel *= 0.5
            if misses >= opt.reset_after:
                u_cur = u_best.copy()
                vel[:] = 0.0
                _, _, _, grad = obj.evaluate(u_cur, want_grad=True)
                misses = 0
        step *= opt.step_decay
        if step < opt.min_step:
            break
    return u_best


def _stage_scales(cfg: LossConfig, factor: int) -> tuple[int, ...]:
    """Loss scales used at one pyramid stage: the effective pooling
    (stage factor times loss scale) is capped at the configured maximum."""
    cap = max(cfg.scales)
    kept = tuple(k for k in cfg.scales if k * factor <= cap)
    return kept or (min(cfg.scales),)


def _optimize_level(frames: list[np.ndarray], masks: list[np.ndarray],
                    cfg: LossConfig, opt: OptimizerConfig):
    """Estimate one level's motion; returns (u (2,Y,X), status, trace).

    The schedule starts from the zero field at the coarsest stage, fits a
    global translation (gradient descent projected onto constant fields),
    then refines per cell, upsampling by 2 between stages. The trace covers
    the full-resolution stage only (coarser stages build the
    initialization).
    """
    ny, nx = frames[0].shape
    has_signal = any((f[m] > DBR_FLOOR + 1e-9).any() for f, m in zip(frames, masks))
    if not has_signal:
        return np.zeros((2, ny, nx)), LevelStatus.NO_SIGNAL, []

    n_pyr = 1 if opt.init is Init.ZERO else opt.coarse_to_fine_levels
    while n_pyr > 1 and min(ny, nx) // (2 ** (n_pyr - 1)) < 16:
        n_pyr -= 1

    trace: list[TraceRow] = []
    u = None
    for lev in range(n_pyr - 1, -1, -1):
        factor = 2 ** lev
        fr = [avg_pool2d(f, factor)[None] for f in frames]
        mk = [pool_mask_all(m, factor)[None] for m in masks]
        h, w = fr[0].shape[1:]
        stage_cfg = cfg if factor == 1 else replace(cfg,
                                                    scales=_stage_scales(cfg, factor))
        obj = SequenceObjective(fr, mk, stage_cfg)
        stage_trace = trace if factor == 1 else None
        if u is None:
            u = np.zeros((1, 2, h, w))
            u = _descend(obj, u, opt, stage_trace, global_only=True)
        else:
            u = (upsample2d(u, 2) * 2.0)[:, :, :h, :w]
        u = _descend(obj, u, opt, stage_trace)
    return u[0], LevelStatus.OK, trace


def estimate_variational(
    inputs: Sequence[RainField],
    future: Sequence[RainField] | None = None,
    cfg: LossConfig | None = None,
    opt: OptimizerConfig | None = None,
    threads: int | None = None,
) -> VariationalResult:
    """Estimate a per-level motion field minimizing the total loss.

    When ``future`` is omitted the objective covers only the observed input
    frames (inference mode); when given, the concatenated observed+future
    sequence is fit (diagnostic mode). Levels are processed independently;
    a level with no precipitation signal comes back as a zero field with
    status NO_SIGNAL.
    """
    cfg = cfg or LossConfig()
    opt = opt or OptimizerConfig()
    if len(inputs) < 2:
        raise ValueError("need at least 2 input frames")
    if opt.grad_check:
        err = gradient_check(cfg, n_instances=3, size=16, seed=0)
        if err >= 1e-4:
            raise AssertionError(
                f"analytic gradient check failed: max relative error {err:.3e}")

    phi = list(inputs) + (list(future) if future else [])
    fields = [_as_dbr(f) for f in phi]
    nz = fields[0].nz
    shape = fields[0].data.shape
    for f in fields:
        if f.data.shape != shape:
            raise ValueError("all frames must share one shape")

    def run(z: int):
        frames_z = [f.data[z] for f in fields]
        masks_z = [f.mask[z] for f in fields]
        return _optimize_level(frames_z, masks_z, cfg, opt)

    threads = threads if threads is not None else default_threads()
    if threads > 1 and nz > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(nz)))
    else:
        results = [run(z) for z in range(nz)]

    u = np.stack([r[0] for r in results])
    statuses = [r[1] for r in results]
    traces = [r[2] for r in results]
    return VariationalResult(motion=MotionField(u), statuses=statuses,
                             traces=traces)


def mean_endpoint_error(est: MotionField, truth: MotionField,
                        mask: np.ndarray | None = None) -> float:
    """Mean Euclidean distance between estimated and true displacement
    vectors, optionally restricted to a Z x Y x X (or Y x X) cell mask."""
    if est.u.shape != truth.u.shape:
        raise ValueError("motion fields must share one shape")
    d = np.sqrt(((est.u - truth.u) ** 2).sum(axis=1))
    if mask is None:
        return float(d.mean())
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = np.broadcast_to(mask[None], d.shape)
    if not mask.any():
        raise ValueError("empty evaluation mask")
    return float(d[mask].mean())
