"""Core tensor types and grid primitives shared by all modules.

Axis order is fixed as T x Z x Y x X, row-major, everywhere in the package.
Validity is carried as explicit boolean masks (True = valid observation);
sentinel values are never stored inside float arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DT_SECONDS = 300

#: Reflectivity value used to represent "no echo" (the lower bound of the
#: 8-bit storage mapping).
NO_ECHO_DBZ = -32.0


class Space(enum.Enum):
    """Unit space of a precipitation field."""

    MMH = "mmh"
    DBR = "dbr"


#: Fixed lower bound of the dBR space; rain rates at or below the dBR
#: threshold map to this value exactly.
DBR_FLOOR = -15.0


class OobPolicy(enum.Enum):
    """Out-of-bounds policy for interpolation."""

    ZERO = "zero"
    CLAMP = "clamp"


@dataclass
class RadarVolume:
    """A T x Z x Y x X reflectivity tensor (dBZ) with altitude metadata.

    mask is Z x Y x X, static over time; rho_hv (copolar correlation
    coefficient in [0, 1]) is optional and matches data's full shape.
    """

    data: np.ndarray
    z_levels: np.ndarray
    dt: float = DEFAULT_DT_SECONDS
    mask: np.ndarray | None = None
    rho_hv: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError(f"data must be 4-D T x Z x Y x X, got shape {self.data.shape}")
        t, z, y, x = self.data.shape
        self.z_levels = np.asarray(self.z_levels, dtype=np.float64)
        if self.z_levels.shape != (z,):
            raise ValueError(f"z_levels length {self.z_levels.size} != Z={z}")
        if z > 1 and not np.all(np.diff(self.z_levels) > 0):
            raise ValueError("z_levels must be strictly increasing")
        if self.mask is None:
            self.mask = np.ones((z, y, x), dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (z, y, x):
                raise ValueError(f"mask shape {self.mask.shape} != {(z, y, x)}")
        if self.rho_hv is not None:
            self.rho_hv = np.asarray(self.rho_hv, dtype=np.float64)
            if self.rho_hv.shape != self.data.shape:
                raise ValueError("rho_hv shape must match data shape")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def frame(self, t: int) -> np.ndarray:
        """Z x Y x X reflectivity slice at time index t."""
        return self.data[t]


@dataclass
class RainField:
    """A Z x Y x X field in mm/h or dBR space, tagged with its unit space.

    2-D input is promoted to Z=1. The mask may be given as 2-D (shared across
    levels) or 3-D.
    """

    data: np.ndarray
    space: Space
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[None, :, :]
        if self.data.ndim != 3:
            raise ValueError(f"data must be 2-D or 3-D, got shape {self.data.shape}")
        if self.mask is None:
            self.mask = np.ones(self.data.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.ndim == 2:
                self.mask = np.broadcast_to(self.mask[None], self.data.shape).copy()
            if self.mask.shape != self.data.shape:
                raise ValueError(f"mask shape {self.mask.shape} != {self.data.shape}")
        valid = self.data[self.mask]
        valid = valid[np.isfinite(valid)]
        if valid.size:
            if self.space is Space.MMH and valid.min() < 0:
                raise ValueError("MMH field has negative valid values")
            if self.space is Space.DBR and valid.min() < DBR_FLOOR - 1e-9:
                raise ValueError(f"DBR field has valid values below {DBR_FLOOR}")

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    @property
    def fill_value(self) -> float:
        """The no-echo value of this field's unit space."""
        return 0.0 if self.space is Space.MMH else DBR_FLOOR


@dataclass
class MotionField:
    """Per-altitude stack of 2-D horizontal displacement fields.

    u has shape Z x 2 x Y x X; channel 0 is x-displacement (east, +columns),
    channel 1 is y-displacement (+rows internally, which renders as south in
    the usual display orientation). Units are grid cells per time step. One
    field per sequence: there is no time axis.
    """

    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim == 3 and self.u.shape[0] == 2:
            self.u = self.u[None]
        if self.u.ndim != 4 or self.u.shape[1] != 2:
            raise ValueError(f"u must have shape Z x 2 x Y x X, got {self.u.shape}")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("motion field must be finite everywhere")

    @property
    def nz(self) -> int:
        return self.u.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.u.shape[2], self.u.shape[3]

    def level(self, z: int) -> tuple[np.ndarray, np.ndarray]:
        """(u_x, u_y) pair at altitude index z."""
        return self.u[z, 0], self.u[z, 1]

    @classmethod
    def zero(cls, nz: int, ny: int, nx: int) -> "MotionField":
        return cls(np.zeros((nz, 2, ny, nx)))


def _pad_to_multiple(field: np.ndarray, k: int, edge: bool) -> np.ndarray:
    """Pad the trailing two axes up to multiples of k.

    edge=True replicates the boundary (data); edge=False pads with zeros,
    which marks padded mask cells invalid.
    """
    ny, nx = field.shape[-2:]
    py = (-ny) % k
    px = (-nx) % k
    if py == 0 and px == 0:
        return field
    width = [(0, 0)] * (field.ndim - 2) + [(0, py), (0, px)]
    if edge:
        return np.pad(field, width, mode="edge")
    return np.pad(field, width, mode="constant", constant_values=False)


def avg_pool2d(field: np.ndarray, k: int) -> np.ndarray:
    """Block-average the trailing two axes by factor k.

    Non-divisible sizes are padded by edge replication before pooling; use
    pool_mask_all on the matching mask so padded blocks come out invalid.
    k=1 is the identity.
    """
    if k <= 0:
        raise ValueError(f"pooling factor must be >= 1, got {k}")
    field = np.asarray(field, dtype=np.float64)
    if k == 1:
        return field.copy()
    field = _pad_to_multiple(field, k, edge=True)
    ny, nx = field.shape[-2:]
    shape = field.shape[:-2] + (ny // k, k, nx // k, k)
    return field.reshape(shape).mean(axis=(-3, -1))


def pool_mask_all(mask: np.ndarray, k: int) -> np.ndarray:
    """Pool a boolean mask: a block is valid only if all its cells are valid.

    Padding introduced for non-divisible sizes is invalid by construction.
    """
    if k <= 0:
        raise ValueError(f"pooling factor must be >= 1, got {k}")
    mask = np.asarray(mask, dtype=bool)
    if k == 1:
        return mask.copy()
    mask = _pad_to_multiple(mask, k, edge=False)
    ny, nx = mask.shape[-2:]
    shape = mask.shape[:-2] + (ny // k, k, nx // k, k)
    return mask.reshape(shape).all(axis=(-3, -1))


def upsample2d(field: np.ndarray, k: int) -> np.ndarray:
    """Block-replicate the trailing two axes by factor k (adjoint layout of
    avg_pool2d)."""
    if k == 1:
        return np.asarray(field, dtype=np.float64).copy()
    return np.repeat(np.repeat(field, k, axis=-2), k, axis=-1)


def max_pool_vertical(vol: RadarVolume, factor: int) -> RadarVolume:
    """Max-pool adjacent altitude groups of size factor.

    Invalid cells are treated as -inf; an output cell is invalid only when
    every cell of its group is invalid. z_levels become the group maxima.
    factor = Z produces the column-maximum (CMAX) composite. rho_hv is
    dropped: the quality field has no defined pooling semantics.
    """
    t, z, ny, nx = vol.shape
    if factor <= 0 or z % factor != 0:
        raise ValueError(f"Z={z} not divisible by pooling factor {factor}")
    zp = z // factor
    data = np.where(vol.mask[None], vol.data, -np.inf)
    data = data.reshape(t, zp, factor, ny, nx).max(axis=2)
    mask = vol.mask.reshape(zp, factor, ny, nx).any(axis=1)
    # all-invalid groups hold -inf; replace with the no-echo sentinel
    data = np.where(mask[None], data, NO_ECHO_DBZ)
    levels = vol.z_levels.reshape(zp, factor).max(axis=1)
    return RadarVolume(data=data, z_levels=levels, dt=vol.dt, mask=mask)


def cmax(vol: RadarVolume) -> RadarVolume:
    """Column-maximum composite: max over all altitude levels (Z -> 1)."""
    return max_pool_vertical(vol, vol.shape[1])


def cmax_field(f: RainField) -> RainField:
    """Column maximum of a RainField over its valid cells (Z -> 1)."""
    fill = f.fill_value
    data = np.where(f.mask, f.data, -np.inf).max(axis=0, keepdims=True)
    mask = f.mask.any(axis=0, keepdims=True)
    data = np.where(mask, data, fill)
    return RainField(data=data, space=f.space, mask=mask)


def bilinear_sample(
    field: np.ndarray, x: float, y: float, oob: OobPolicy = OobPolicy.ZERO
) -> float:
    """Bilinear interpolation of a 2-D field at a single (x, y) point.

    ZERO treats everything outside [0, X-1] x [0, Y-1] as 0; CLAMP clamps the
    coordinates onto the boundary.
    """
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    out = bilinear_sample_many(
        np.asarray(field, dtype=np.float64),
        np.asarray([x], dtype=np.float64),
        np.asarray([y], dtype=np.float64),
        oob,
    )
    return float(out[0])


def bilinear_sample_many(
    field: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    oob: OobPolicy = OobPolicy.ZERO,
    fill: float = 0.0,
) -> np.ndarray:
    """Vectorized bilinear sampling of a 2-D field at arrays of coordinates.

    With ZERO policy, out-of-domain neighbor contributions take the value
    ``fill`` (0 by default); this keeps the convex-combination property in
    shifted spaces such as dBR, where fill is the space floor.
    """
    field = np.asarray(field, dtype=np.float64)
    if np.any(~np.isfinite(xs)) or np.any(~np.isfinite(ys)):
        raise ValueError("sample coordinates must be finite")
    ny, nx = field.shape
    if oob is OobPolicy.CLAMP:
        xs = np.clip(xs, 0.0, nx - 1.0)
        ys = np.clip(ys, 0.0, ny - 1.0)
        shifted = field
        offset = 0.0
    else:
        # sample field - fill with zero OOB, then add fill back
        shifted = field - fill
        offset = fill

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = xs - x0
    wy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    def gather(yi, xi):
        inside = (yi >= 0) & (yi < ny) & (xi >= 0) & (xi < nx)
        vals = shifted[np.clip(yi, 0, ny - 1), np.clip(xi, 0, nx - 1)]
        return np.where(inside, vals, 0.0)

    f00 = gather(y0, x0)
    f01 = gather(y0, x1)
    f10 = gather(y1, x0)
    f11 = gather(y1, x1)
    out = (1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11)
    return out + offset
