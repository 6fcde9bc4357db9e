"""Uniform-grid 2D field types and the geometric transforms used by the experiments.

Arrays are stored row-major with y as the outer (row) index and x as the
inner (column) index, so ``values[j, i]`` is the cell at column ``i``, row ``j``.
Row 0 is drawn at the top of a plot (north), which makes ``rotate90_ccw``
a counterclockwise turn on screen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def _frozen(a, shape=None):
    arr = np.array(a, dtype=np.float64, copy=True)
    if shape is not None:
        if arr.size != shape[0] * shape[1]:
            raise ContractError(f"expected {shape[0] * shape[1]} values, got {arr.size}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ContractError("field values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float = 2.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ContractError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ContractError("dx must be positive")

    @property
    def shape(self):
        return (self.ny, self.nx)

    def rotated(self):
        return GridSpec(self.ny, self.nx, self.dx, self.origin)

    def cell_centers(self):
        """Return (x, y) arrays of cell-center coordinates in meters, each of shape (ny, nx)."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = y0 + (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class ScalarField2D:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.spec.shape))

    @classmethod
    def from_array(cls, values, dx=2.0):
        values = np.asarray(values, dtype=np.float64)
        ny, nx = values.shape
        return cls(GridSpec(nx, ny, dx), values)


@dataclass(frozen=True)
class VectorField2D:
    spec: GridSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u, self.spec.shape))
        object.__setattr__(self, "v", _frozen(self.v, self.spec.shape))


@dataclass(frozen=True)
class FieldSeries:
    """A time series of scalar frames stored as one (T, ny, nx) array."""

    spec: GridSpec
    dt: float
    values: np.ndarray
    frames: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[1:] != self.spec.shape:
            raise ContractError(f"series must have shape (T, {self.spec.ny}, {self.spec.nx}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ContractError("series needs at least one frame")
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if not np.all(np.isfinite(arr)):
            raise ContractError("series values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "frames", [ScalarField2D(self.spec, f) for f in arr])

    def __len__(self):
        return self.values.shape[0]

    @classmethod
    def from_frames(cls, frames, dt):
        return cls(frames[0].spec, dt, np.stack([f.values for f in frames]))


def rotate90_ccw(field):
    """Quarter turn counterclockwise; a rectangular grid comes back with nx and ny swapped."""
    if isinstance(field, FieldSeries):
        return FieldSeries(field.spec.rotated(), field.dt, np.rot90(field.values, 1, axes=(1, 2)))
    return ScalarField2D(field.spec.rotated(), np.rot90(field.values))


def rotate90_cw(field):
    if isinstance(field, FieldSeries):
        return FieldSeries(field.spec.rotated(), field.dt, np.rot90(field.values, -1, axes=(1, 2)))
    return ScalarField2D(field.spec.rotated(), np.rot90(field.values, -1))


def flip_vertical(field):
    if isinstance(field, FieldSeries):
        return FieldSeries(field.spec, field.dt, field.values[:, ::-1, :])
    return ScalarField2D(field.spec, field.values[::-1, :])


def magnitude(vec):
    return ScalarField2D(vec.spec, np.hypot(vec.u, vec.v))
