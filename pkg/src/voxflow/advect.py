"""Backward semi-Lagrangian extrapolation under Lagrangian persistence.

Each output cell samples the input field at its upstream departure point
(x - u_x, y - u_y) with bilinear interpolation; intensity is conserved along
trajectories (no growth or decay). The validity mask is advected with
nearest-neighbor sampling, and cells whose departure point leaves the domain
are flagged invalid (inflow carries no information).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .grid import MotionField, OobPolicy, RainField, bilinear_sample_many


class Scheme(enum.Enum):
    BACKWARD_SEMI_LAGRANGIAN = "backward_semi_lagrangian"


@dataclass
class ExtrapolationConfig:
    steps: int = 1
    oob: OobPolicy = OobPolicy.ZERO
    scheme: Scheme = Scheme.BACKWARD_SEMI_LAGRANGIAN

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


def _departure_coords(ny: int, nx: int, ux: np.ndarray, uy: np.ndarray):
    ygrid, xgrid = np.mgrid[0:ny, 0:nx].astype(np.float64)
    return xgrid - ux, ygrid - uy


def warp_plane(plane: np.ndarray, mask: np.ndarray, ux: np.ndarray,
               uy: np.ndarray, fill: float,
               oob: OobPolicy = OobPolicy.ZERO) -> tuple[np.ndarray, np.ndarray]:
    """One backward warp of a single 2-D plane plus its validity mask."""
    ny, nx = plane.shape
    xs, ys = _departure_coords(ny, nx, ux, uy)
    out = bilinear_sample_many(plane, xs.ravel(), ys.ravel(), oob=oob, fill=fill)
    out = out.reshape(ny, nx)
    inside = (xs >= 0) & (xs <= nx - 1) & (ys >= 0) & (ys <= ny - 1)
    xi = np.clip(np.rint(xs).astype(np.int64), 0, nx - 1)
    yi = np.clip(np.rint(ys).astype(np.int64), 0, ny - 1)
    out_mask = inside & mask[yi, xi]
    if oob is OobPolicy.CLAMP:
        out_mask = mask[yi, xi]
    return out, out_mask


def advect_once(f: RainField, mf: MotionField,
                cfg: ExtrapolationConfig | None = None) -> RainField:
    """Advect a field by one time step with the per-level motion field."""
    cfg = cfg or ExtrapolationConfig()
    if f.data.shape[1:] != mf.grid_shape:
        raise ValueError(
            f"field grid {f.data.shape[1:]} != motion grid {mf.grid_shape}")
    if f.nz != mf.nz:
        raise ValueError(f"field has Z={f.nz} but motion has Z={mf.nz}")
    fill = f.fill_value
    out = np.empty_like(f.data)
    out_mask = np.empty_like(f.mask)
    for z in range(f.nz):
        ux, uy = mf.level(z)
        out[z], out_mask[z] = warp_plane(f.data[z], f.mask[z], ux, uy,
                                         fill=fill, oob=cfg.oob)
    return RainField(data=out, space=f.space, mask=out_mask)


def extrapolate(f: RainField, mf: MotionField, k: int,
                cfg: ExtrapolationConfig | None = None) -> list[RainField]:
    """k iterated one-step advections of the field; returns the k leads."""
    if k < 1:
        raise ValueError(f"lead count must be >= 1, got {k}")
    leads = []
    cur = f
    for _ in range(k):
        cur = advect_once(cur, mf, cfg)
        leads.append(cur)
    return leads
