"""Array manifolds: steering vectors, spatial frequencies, and sampled dictionaries.

Conventions used throughout the package:

* A spatial frequency is the per-element phase progression of a plane wave
  across a uniform array, ``w = 2*pi*spacing*sin(azimuth)`` (and the
  elevation analogue for the second axis of a rectangular array).
* Frequencies are always wrapped to ``(-pi, pi]``.
* Rectangular-array steering vectors factor as ``a_x(w1) kron a_y(w2)``,
  so the linear element index runs y-fastest. This single ordering is used
  everywhere (channels, dictionaries, grids).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Union

import numpy as np

__all__ = [
    "ArraySpec",
    "SpatialFreq",
    "FreqGrid",
    "wrap_freq",
    "ula_steering",
    "ura_steering",
    "steering",
    "steering_derivative",
    "freq_from_angles",
    "build_dictionary",
]


def wrap_freq(w):
    """Wrap frequencies to the interval (-pi, pi]."""
    w = np.asarray(w, dtype=float)
    r = np.mod(w + np.pi, 2.0 * np.pi) - np.pi
    r = np.where(r == -np.pi, np.pi, r)
    return r if r.ndim else float(r)


class SpatialFreq(NamedTuple):
    """A 1D or 2D spatial frequency in radians per element (w2 = 0 for ULAs)."""

    w1: float
    w2: float = 0.0

    def wrapped(self) -> "SpatialFreq":
        return SpatialFreq(wrap_freq(self.w1), wrap_freq(self.w2))


@dataclass(frozen=True)
class ArraySpec:
    """Geometry of a uniform linear (ULA) or rectangular (URA) array.

    ``count_y`` must be 1 for a ULA; spacings are in wavelengths.
    """

    kind: str
    count_x: int
    count_y: int = 1
    spacing_x: float = 0.5
    spacing_y: float = 0.5

    def __post_init__(self):
        if self.kind not in ("ULA", "URA"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.count_x < 1 or self.count_y < 1:
            raise ValueError("element counts must be >= 1")
        if self.kind == "ULA" and self.count_y != 1:
            raise ValueError("a ULA has count_y = 1")
        if self.spacing_x <= 0 or self.spacing_y <= 0:
            raise ValueError("spacings must be positive")

    @property
    def n_elements(self) -> int:
        return self.count_x * self.count_y

    @staticmethod
    def ula(count: int, spacing: float = 0.5) -> "ArraySpec":
        return ArraySpec("ULA", count, 1, spacing, spacing)

    @staticmethod
    def ura(count_x: int, count_y: int, spacing_x: float = 0.5,
            spacing_y: float = 0.5) -> "ArraySpec":
        return ArraySpec("URA", count_x, count_y, spacing_x, spacing_y)


def ula_steering(w1: float, count: int) -> np.ndarray:
    """Vandermonde steering vector [1, e^{jw}, ..., e^{j(count-1)w}]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return np.exp(1j * float(w1) * np.arange(count))


def ura_steering(w, spec: ArraySpec) -> np.ndarray:
    """URA steering vector a_x(w1) kron a_y(w2) for w = (w1, w2)."""
    if spec.kind != "URA":
        raise ValueError("ura_steering requires a URA spec")
    w1, w2 = np.asarray(w, dtype=float).reshape(2)
    return np.kron(ula_steering(w1, spec.count_x), ula_steering(w2, spec.count_y))


def steering(w, spec: ArraySpec) -> np.ndarray:
    """Steering vector for either array kind; w is scalar for a ULA, (w1, w2) for a URA."""
    if spec.kind == "ULA":
        w = np.asarray(w, dtype=float).reshape(-1)
        return ula_steering(w[0], spec.count_x)
    return ura_steering(w, spec)


def steering_derivative(w, spec: ArraySpec, axis: int = 0) -> np.ndarray:
    """Derivative of the steering vector with respect to one frequency axis."""
    a = steering(w, spec)
    if spec.kind == "ULA":
        if axis != 0:
            raise ValueError("a ULA has a single frequency axis")
        return 1j * np.arange(spec.count_x) * a
    ix, iy = np.divmod(np.arange(spec.n_elements), spec.count_y)
    idx = ix if axis == 0 else iy
    return 1j * idx * a


def freq_from_angles(azimuth: float, elevation: float, spec: ArraySpec) -> SpatialFreq:
    """Spatial frequency for given azimuth/elevation angles in degrees.

    ``w1 = 2*pi*spacing_x*sin(az)`` and, for a URA,
    ``w2 = 2*pi*spacing_y*sin(el)*cos(az)``; w2 is 0 for a ULA.
    Azimuth must lie in [-90, 90] and elevation in [0, 90].
    """
    if not -90.0 <= azimuth <= 90.0:
        raise ValueError(f"azimuth {azimuth} out of [-90, 90]")
    if not 0.0 <= elevation <= 90.0:
        raise ValueError(f"elevation {elevation} out of [0, 90]")
    az = np.deg2rad(azimuth)
    el = np.deg2rad(elevation)

    def clip_wrap(w):
        # raw values stay in [-pi, pi] for spacings <= 1/2 (injective there);
        # only genuinely aliased frequencies of wider arrays get wrapped
        return w if abs(w) <= np.pi else wrap_freq(w)

    w1 = clip_wrap(2.0 * np.pi * spec.spacing_x * np.sin(az))
    if spec.kind == "ULA":
        return SpatialFreq(w1, 0.0)
    w2 = clip_wrap(2.0 * np.pi * spec.spacing_y * np.sin(el) * np.cos(az))
    return SpatialFreq(w1, w2)


def _axis_points(resolution: int) -> np.ndarray:
    # uniform grid on (-pi, pi]; differences of grid points stay on the grid mod 2*pi
    step = 2.0 * np.pi / resolution
    return -np.pi + step * (np.arange(resolution) + 1)


@dataclass(frozen=True)
class FreqGrid:
    """An ordered sampling of spatial frequencies, 1D or 2D.

    Points are stored as an (G, 2) array in strictly increasing
    lexicographic (w1, w2) order; the w2 column is zero for 1D grids.
    """

    points: np.ndarray
    resolution: tuple = field(default=())

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] == 1:
            pts = np.column_stack([pts[:, 0], np.zeros(len(pts))])
        if pts.shape[0] == 0:
            raise ValueError("grid must be nonempty")
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        if not np.array_equal(order, np.arange(len(pts))):
            raise ValueError("grid points must be in increasing (w1, w2) order")
        if len(pts) > 1 and np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
            raise ValueError("grid contains duplicate points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def is_2d(self) -> bool:
        return len(self.resolution) == 2

    @staticmethod
    def uniform_1d(resolution: int = 256) -> "FreqGrid":
        """Uniform-in-frequency 1D grid (constant dictionary coherence)."""
        return FreqGrid(_axis_points(resolution)[:, None], (resolution,))

    @staticmethod
    def uniform_2d(res_x: int = 64, res_y: int = 64) -> "FreqGrid":
        """Uniform 2D grid, w1-major ordering."""
        ax, ay = _axis_points(res_x), _axis_points(res_y)
        pts = np.column_stack([np.repeat(ax, res_y), np.tile(ay, res_x)])
        return FreqGrid(pts, (res_x, res_y))

    @staticmethod
    def for_spec(spec: ArraySpec, res_1d: int = 256, res_2d: int = 64) -> "FreqGrid":
        if spec.kind == "ULA":
            return FreqGrid.uniform_1d(res_1d)
        return FreqGrid.uniform_2d(res_2d, res_2d)

    def cell_width(self) -> np.ndarray:
        """Grid step per axis (w1, w2)."""
        if self.is_2d:
            return np.array([2 * np.pi / self.resolution[0],
                             2 * np.pi / self.resolution[1]])
        res = self.resolution[0] if self.resolution else len(self.points)
        return np.array([2 * np.pi / res, 0.0])


ManifoldLike = Union[ArraySpec, Callable[[np.ndarray], np.ndarray]]


def build_dictionary(spec: ManifoldLike, grid: FreqGrid) -> np.ndarray:
    """Matrix whose column i is the steering vector at grid point i.

    ``spec`` may be an ArraySpec or a callable mapping an (G, 2) array of
    frequencies to an (elements, G) matrix.
    """
    if callable(spec) and not isinstance(spec, ArraySpec):
        return np.asarray(spec(grid.points))
    pts = grid.points
    if spec.kind == "ULA":
        return np.exp(1j * np.outer(np.arange(spec.count_x), pts[:, 0]))
    ax = np.exp(1j * np.outer(np.arange(spec.count_x), pts[:, 0]))
    ay = np.exp(1j * np.outer(np.arange(spec.count_y), pts[:, 1]))
    # rows ordered (ix, iy) with iy fastest, matching the kron in ura_steering
    return (ax[:, None, :] * ay[None, :, :]).reshape(spec.n_elements, len(grid))
