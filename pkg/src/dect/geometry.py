"""Image grids, parallel-beam scan geometry and the ray-traced system matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Segments shorter than this fraction of a pixel are treated as corner grazes.
_GRAZE_TOL = 1e-10

DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes


class CapacityError(MemoryError):
    """Raised when a system matrix would not fit the configured memory budget."""


@dataclass(frozen=True)
class ImageGrid:
    """Square-pixel image grid.

    Pixel ``k`` maps to ``(row, col) = divmod(k, nx)``; row increases with y
    and col with x. ``origin`` is the (x, y) position of the lower-left grid
    corner in cm; ``None`` centres the grid on the rotation axis.
    """

    nx: int
    ny: int
    pixel_size: float = 1.0
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one pixel, got {self.nx}x{self.ny}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if self.origin is None:
            object.__setattr__(
                self, "origin",
                (-0.5 * self.nx * self.pixel_size, -0.5 * self.ny * self.pixel_size),
            )

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) in cm."""
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.pixel_size, y0, y0 + self.ny * self.pixel_size)

    @property
    def center(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.extent
        return (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) arrays of pixel-centre coordinates, shape (ny, nx)."""
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.pixel_size
        ys = y0 + (np.arange(self.ny) + 0.5) * self.pixel_size
        return np.meshgrid(xs, ys)

    def index(self, row: int, col: int) -> int:
        return row * self.nx + col

    def row_col(self, k: int) -> tuple[int, int]:
        return divmod(k, self.nx)


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam geometry. Rays are ordered angle-major, detector-minor."""

    angles: np.ndarray
    n_detectors: int
    detector_spacing: float = 1.0
    detector_offset: float = 0.0

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float).reshape(-1)
        if angles.size < 1:
            raise ValueError("need at least one projection angle")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if angles[0] < 0 or angles[-1] >= math.pi:
            raise ValueError("angles must lie in [0, pi)")
        if self.n_detectors < 1:
            raise ValueError("need at least one detector")
        if not self.detector_spacing > 0:
            raise ValueError("detector_spacing must be positive")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def uniform(cls, n_angles: int, n_detectors: int, detector_spacing: float = 1.0,
                detector_offset: float = 0.0) -> "ScanGeometry":
        """Angles spread uniformly over [0, pi)."""
        if n_angles < 1:
            raise ValueError("n_angles must be >= 1")
        return cls(np.arange(n_angles) * (math.pi / n_angles), n_detectors,
                   detector_spacing, detector_offset)

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_detectors

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    def detector_positions(self) -> np.ndarray:
        """Signed detector coordinates in cm, centred on the rotation axis."""
        j = np.arange(self.n_detectors)
        return (j - 0.5 * (self.n_detectors - 1)) * self.detector_spacing + self.detector_offset

    def ray(self, i: int) -> tuple[float, float]:
        """(angle, detector position) of ray ``i``."""
        a, d = divmod(i, self.n_detectors)
        return float(self.angles[a]), float(self.detector_positions()[d])


def _slab_interval(p0, d, lo, hi):
    """Parametric interval for which p0 + t*d lies in [lo, hi] along one axis."""
    if abs(d) < 1e-15:
        if lo <= p0 <= hi:
            return -math.inf, math.inf
        return math.inf, -math.inf
    t_lo = (lo - p0) / d
    t_hi = (hi - p0) / d
    return (t_lo, t_hi) if t_lo <= t_hi else (t_hi, t_lo)


def trace_ray(grid: ImageGrid, angle: float, detector_pos: float):
    """Siddon traversal of one parallel-beam ray through ``grid``.

    The ray runs along ``(cos angle, sin angle)`` and is offset by
    ``detector_pos`` along ``(-sin angle, cos angle)`` from the grid centre.

    Returns
    -------
    pixels : int ndarray
        Flat pixel indices in the order the ray visits them.
    lengths : float ndarray
        Intersection lengths in cm, all strictly positive.
    """
    dx, dy = math.cos(angle), math.sin(angle)
    cx, cy = grid.center
    px = cx - detector_pos * dy
    py = cy + detector_pos * dx
    xmin, xmax, ymin, ymax = grid.extent

    tx0, tx1 = _slab_interval(px, dx, xmin, xmax)
    ty0, ty1 = _slab_interval(py, dy, ymin, ymax)
    t_in = max(tx0, ty0)
    t_out = min(tx1, ty1)
    empty = (np.empty(0, dtype=np.int64), np.empty(0))
    if not t_out > t_in:
        return empty

    h = grid.pixel_size
    ts = [np.array([t_in, t_out])]
    if abs(dx) >= 1e-15:
        ts.append((xmin + h * np.arange(grid.nx + 1) - px) / dx)
    if abs(dy) >= 1e-15:
        ts.append((ymin + h * np.arange(grid.ny + 1) - py) / dy)
    t = np.concatenate(ts)
    t = np.unique(t[(t >= t_in) & (t <= t_out)])

    seg = np.diff(t)
    keep = seg > _GRAZE_TOL * h
    if not np.any(keep):
        return empty
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    col = np.clip(np.floor((px + mid * dx - xmin) / h).astype(np.int64), 0, grid.nx - 1)
    row = np.clip(np.floor((py + mid * dy - ymin) / h).astype(np.int64), 0, grid.ny - 1)
    pix = row * grid.nx + col

    # Dropped graze segments can leave the same pixel on both sides.
    if pix.size > 1 and np.any(pix[1:] == pix[:-1]):
        starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
        seg = np.add.reduceat(seg, starts)
        pix = pix[starts]
    return pix, seg


def chord_length(grid: ImageGrid, angle: float, detector_pos: float) -> float:
    """Length of the ray segment inside the grid bounding box."""
    dx, dy = math.cos(angle), math.sin(angle)
    cx, cy = grid.center
    px, py = cx - detector_pos * dy, cy + detector_pos * dx
    xmin, xmax, ymin, ymax = grid.extent
    tx0, tx1 = _slab_interval(px, dx, xmin, xmax)
    ty0, ty1 = _slab_interval(py, dy, ymin, ymax)
    return max(0.0, min(tx1, ty1) - max(tx0, ty0))


@dataclass(frozen=True)
class SystemMatrix:
    """Sparse ray/pixel intersection lengths, stored row-compressed by ray.

    ``adjoint`` scatters through the CSR rows; no transposed copy is kept.
    """

    grid: ImageGrid
    geometry: ScanGeometry
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def n_rays(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_pixels:
            raise ValueError(f"image has {x.size} pixels, matrix expects {self.n_pixels}")
        return self.matrix @ x

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.n_rays:
            raise ValueError(f"sinogram has {y.size} rays, matrix expects {self.n_rays}")
        return self.matrix.T @ y

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def squared(self) -> sp.csr_matrix:
        """Elementwise square, used for Jacobian diagonals."""
        return self.matrix.multiply(self.matrix).tocsr()

    def take_rays(self, idx: np.ndarray, geometry: ScanGeometry) -> "SystemMatrix":
        return SystemMatrix(self.grid, geometry, self.matrix[idx].tocsr())


def assemble_system_matrix(grid: ImageGrid, geom: ScanGeometry,
                           memory_budget: int = DEFAULT_MEMORY_BUDGET) -> SystemMatrix:
    """Ray-trace every (angle, detector) pair into a CSR system matrix."""
    # Upper bound on pixels crossed per ray; 12 bytes per stored entry.
    worst = geom.n_rays * (grid.nx + grid.ny) * 12
    if worst > memory_budget:
        raise CapacityError(
            f"system matrix may need {worst / 2**20:.0f} MiB, budget is {memory_budget / 2**20:.0f} MiB")

    positions = geom.detector_positions()
    indptr = np.zeros(geom.n_rays + 1, dtype=np.int64)
    cols, vals = [], []
    i = 0
    for angle in geom.angles:
        for s in positions:
            pix, seg = trace_ray(grid, float(angle), float(s))
            cols.append(pix)
            vals.append(seg)
            indptr[i + 1] = indptr[i] + pix.size
            i += 1
    indices = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    data = np.concatenate(vals) if vals else np.empty(0)
    mat = sp.csr_matrix((data, indices, indptr), shape=(geom.n_rays, grid.n_pixels))
    return SystemMatrix(grid, geom, mat)


def subsample_angles(geom: ScanGeometry, sino, stride: int):
    """Keep every ``stride``-th projection angle (indices 0, stride, 2*stride, ...).

    ``sino`` is any object with a ``take_rays(ray_indices)`` method (e.g.
    :class:`dect.physics.DualSinogram`); ``None`` is passed through.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    keep = np.arange(0, geom.n_angles, stride)
    new_geom = ScanGeometry(geom.angles[keep], geom.n_detectors,
                            geom.detector_spacing, geom.detector_offset)
    new_sino = None if sino is None else sino.take_rays(angle_ray_indices(geom, stride))
    return new_geom, new_sino


def angle_ray_indices(geom: ScanGeometry, stride: int) -> np.ndarray:
    keep = np.arange(0, geom.n_angles, stride)
    return (keep[:, None] * geom.n_detectors + np.arange(geom.n_detectors)).reshape(-1)
