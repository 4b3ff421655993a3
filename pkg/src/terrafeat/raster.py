"""2D gridding: cell index, DSM construction, inpainting, per-cell stats.

Rasters use a lower-left origin with row 0 at the bottom; exporters flip
rows as their format requires.  Cells are square, nodata cells carry NaN
and are flagged in a boolean mask.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from terrafeat.cloud import BoundingBox, PointCloud
from terrafeat.errors import FileFormatError, NumericalError

logger = logging.getLogger(__name__)

NODATA_VALUE = -9999.0


@dataclass
class RasterGrid:
    """Georeferenced 2D grid of scalars with a nodata mask.

    Attributes:
        origin: (x0, y0) of the lower-left corner in meters.
        cell: cell edge length in meters.
        values: (height, width) float64, NaN where nodata.
        nodata: (height, width) bool, True where the cell holds no value.
    """

    origin: tuple[float, float]
    cell: float
    values: np.ndarray
    nodata: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.nodata = np.asarray(self.nodata, dtype=bool)
        if self.cell <= 0:
            raise ValueError("cell must be positive")
        if self.values.ndim != 2 or self.values.shape != self.nodata.shape:
            raise ValueError("values and nodata must be 2D arrays of equal shape")
        if not np.isfinite(self.values[~self.nodata]).all():
            raise ValueError("valid cells must hold finite values")
        self.values = self.values.copy()
        self.values[self.nodata] = np.nan

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def same_geometry(self, other: "RasterGrid", tol: float = 1e-9) -> bool:
        return (self.values.shape == other.values.shape
                and abs(self.cell - other.cell) <= tol * max(1.0, self.cell)
                and abs(self.origin[0] - other.origin[0]) <= tol
                and abs(self.origin[1] - other.origin[1]) <= tol)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) coordinates of cell centers, shapes (width,), (height,)."""
        x = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell
        y = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell
        return x, y

    def copy(self) -> "RasterGrid":
        return RasterGrid(self.origin, self.cell, self.values.copy(),
                          self.nodata.copy())


class CellIndexMap:
    """Maps every in-bounds point to its raster cell and each cell to its
    member point indices (CSR layout, members sorted by ascending z)."""

    def __init__(self, origin: tuple[float, float], cell: float,
                 width: int, height: int, rows: np.ndarray, cols: np.ndarray,
                 order: np.ndarray, offsets: np.ndarray) -> None:
        self.origin = origin
        self.cell = cell
        self.width = width
        self.height = height
        self.rows = rows
        self.cols = cols
        self.order = order
        self.offsets = offsets

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def flat_ids(self) -> np.ndarray:
        return self.rows.astype(np.int64) * self.width + self.cols

    def cell_members(self, row: int, col: int) -> np.ndarray:
        """Point indices whose positions fall in cell (row, col)."""
        flat = row * self.width + col
        return self.order[self.offsets[flat]:self.offsets[flat + 1]]

    def counts(self) -> np.ndarray:
        """(height, width) int64 number of member points per cell."""
        return np.diff(self.offsets).reshape(self.height, self.width)

    def grid_like(self, values: np.ndarray, nodata: np.ndarray | None = None) -> RasterGrid:
        if nodata is None:
            nodata = np.zeros_like(values, dtype=bool)
        return RasterGrid((self.origin[0], self.origin[1]), self.cell, values, nodata)


def build_cell_index(cloud: PointCloud, cell: float, bbox: BoundingBox) -> CellIndexMap:
    """Assign every point to a cell of a grid covering `bbox` in x, y.

    Grid dimensions are ``ceil(extent / cell)`` (at least 1); a point
    exactly on the max edge is clamped into the last row/column.
    """
    if cell <= 0:
        raise ValueError("cell must be positive")
    if len(cloud) == 0:
        raise ValueError("cannot index an empty cloud")
    x0, y0 = bbox.min[0], bbox.min[1]
    width = max(1, math.ceil((bbox.max[0] - x0) / cell))
    height = max(1, math.ceil((bbox.max[1] - y0) / cell))

    u = (cloud.x - x0) / cell
    v = (cloud.y - y0) / cell
    eps = 1e-9
    if (u.min() < -eps or v.min() < -eps
            or u.max() > width + eps or v.max() > height + eps):
        raise ValueError("bbox does not cover the cloud in x, y")
    cols = np.minimum(np.floor(u).astype(np.int64).clip(min=0), width - 1)
    rows = np.minimum(np.floor(v).astype(np.int64).clip(min=0), height - 1)

    flat = rows * width + cols
    order = np.lexsort((cloud.z, flat))
    counts = np.bincount(flat, minlength=height * width)
    offsets = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CellIndexMap((x0, y0), cell, width, height, rows, cols, order, offsets)


def rasterize_dsm(cloud: PointCloud, index: CellIndexMap, n_highest: int = 4) -> RasterGrid:
    """Surface model: per cell, the mean z of the at most `n_highest`
    highest member points; empty cells are nodata."""
    if n_highest < 1:
        raise ValueError("n_highest must be >= 1")
    if len(index) != len(cloud):
        raise ValueError("index does not match cloud")
    counts = np.diff(index.offsets)
    ends = index.offsets[1:]
    take = np.minimum(counts, n_highest)
    starts = ends - take

    zsorted = cloud.z[index.order]
    csum = np.concatenate(([0.0], np.cumsum(zsorted)))
    sums = csum[ends] - csum[starts]

    values = np.full(index.height * index.width, np.nan)
    occupied = counts > 0
    values[occupied] = sums[occupied] / take[occupied]
    values = values.reshape(index.height, index.width)
    return index.grid_like(values, nodata=~occupied.reshape(index.height, index.width))


def grid_feature_count(index: CellIndexMap) -> RasterGrid:
    """Points-per-cell raster; empty cells hold 0 (not nodata)."""
    return index.grid_like(index.counts().astype(np.float64))


def grid_feature_zvar(cloud: PointCloud, index: CellIndexMap) -> RasterGrid:
    """Per-cell population variance of member z values (two-pass).

    Cells with fewer than two points hold 0.
    """
    if len(index) != len(cloud):
        raise ValueError("index does not match cloud")
    flat = index.flat_ids
    ncells = index.height * index.width
    counts = np.bincount(flat, minlength=ncells)
    sums = np.bincount(flat, weights=cloud.z, minlength=ncells)
    means = np.zeros(ncells)
    occupied = counts > 0
    means[occupied] = sums[occupied] / counts[occupied]
    dev = cloud.z - means[flat]
    sq = np.bincount(flat, weights=dev * dev, minlength=ncells)
    var = np.zeros(ncells)
    var[occupied] = sq[occupied] / counts[occupied]
    return index.grid_like(var.reshape(index.height, index.width))


def assign_cell_values(cloud: PointCloud, index: CellIndexMap,
                       raster: RasterGrid, feature_name: str) -> PointCloud:
    """Append a feature column holding each point's cell value of `raster`."""
    if (raster.height, raster.width) != (index.height, index.width):
        raise ValueError("raster dimensions do not match the cell index")
    if len(index) != len(cloud):
        raise ValueError("index does not match cloud")
    if feature_name in cloud.features:
        logger.warning("overwriting existing feature column %r", feature_name)
    return cloud.with_feature(feature_name, raster.values[index.rows, index.cols])


# ---------------------------------------------------------------------------
# Heat-equation inpainting
# ---------------------------------------------------------------------------

def inpaint_heat(raster: RasterGrid, tol: float = 1e-4,
                 max_iter: int = 10_000) -> RasterGrid:
    """Fill nodata cells with the steady-state heat-equation interpolant.

    Valid cells act as Dirichlet boundary values of a 4-neighbor discrete
    Laplacian; the outer raster border is no-flux.  Iteration stops when
    the largest per-cell update falls below `tol` (meters) or after
    `max_iter` sweeps.  Valid cells are returned unchanged.
    """
    if raster.nodata.all():
        raise NumericalError("cannot inpaint an all-nodata raster")
    if not raster.nodata.any():
        return raster.copy()

    filled, iters, converged = harmonic_fill(raster.values, ~raster.nodata,
                                             tol, max_iter)
    if not converged:
        logger.warning("inpainting stopped at max_iter=%d before reaching tol=%g",
                       max_iter, tol)
    return RasterGrid(raster.origin, raster.cell, filled,
                      np.zeros_like(raster.nodata))


def harmonic_fill(values: np.ndarray, known: np.ndarray, tol: float,
                  max_iter: int) -> tuple[np.ndarray, int, bool]:
    """Red-black Gauss-Seidel solve of the discrete Laplace equation on
    the unknown cells of a 2D array.  Returns (filled, sweeps, converged)."""
    height, width = values.shape
    unknown = ~known
    # Work on the hole bounding box plus a 1-cell rim.  Every unknown cell
    # is interior to the crop unless the hole touches the raster border, in
    # which case the crop border is the raster border; either way the
    # in-crop neighbor count is correct for every updated cell, and the
    # crop always contains at least one known cell.
    rows = np.flatnonzero(unknown.any(axis=1))
    cols = np.flatnonzero(unknown.any(axis=0))
    r0, r1 = max(int(rows[0]) - 1, 0), min(int(rows[-1]) + 2, height)
    c0, c1 = max(int(cols[0]) - 1, 0), min(int(cols[-1]) + 2, width)

    v = values[r0:r1, c0:c1].copy()
    u = unknown[r0:r1, c0:c1]

    # Initial guess for unknowns: value of the nearest known cell.
    ind = ndimage.distance_transform_edt(u, return_distances=False,
                                         return_indices=True)
    v = v[tuple(ind)]

    ncount = np.zeros(v.shape)
    ncount[1:, :] += 1
    ncount[:-1, :] += 1
    ncount[:, 1:] += 1
    ncount[:, :-1] += 1

    ii, jj = np.indices(v.shape)
    red = ((ii + jj) % 2 == 0) & u
    black = ((ii + jj) % 2 == 1) & u

    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        delta = 0.0
        for mask in (red, black):
            if not mask.any():
                continue
            s = np.zeros_like(v)
            s[1:, :] += v[:-1, :]
            s[:-1, :] += v[1:, :]
            s[:, 1:] += v[:, :-1]
            s[:, :-1] += v[:, 1:]
            new = s[mask] / ncount[mask]
            d = np.abs(new - v[mask])
            if d.size:
                delta = max(delta, float(d.max()))
            v[mask] = new
        if delta < tol:
            converged = True
            break

    out = values.copy()
    out[r0:r1, c0:c1][u] = v[u]
    return out, sweeps, converged


# ---------------------------------------------------------------------------
# Raster file formats
# ---------------------------------------------------------------------------

def export_raster(raster: RasterGrid, path: str | os.PathLike,
                  format: str = "asc") -> None:
    """Write a raster as ESRI ASCII grid ("asc") or 16-bit PGM ("pgm")."""
    path = Path(path)
    if format == "asc":
        _write_asc(raster, path)
    elif format == "pgm":
        _write_pgm(raster, path)
    else:
        raise FileFormatError(f"unknown raster format {format!r}")


def _write_asc(raster: RasterGrid, path: Path) -> None:
    vals = raster.values.copy()
    vals[raster.nodata] = NODATA_VALUE
    with open(path, "w", encoding="ascii") as f:
        f.write(f"ncols {raster.width}\n")
        f.write(f"nrows {raster.height}\n")
        f.write(f"xllcorner {raster.origin[0]:.10g}\n")
        f.write(f"yllcorner {raster.origin[1]:.10g}\n")
        f.write(f"cellsize {raster.cell:.10g}\n")
        f.write(f"NODATA_value {NODATA_VALUE:.10g}\n")
        for r in range(raster.height - 1, -1, -1):
            f.write(" ".join(f"{x:.10g}" for x in vals[r]) + "\n")


def _write_pgm(raster: RasterGrid, path: Path) -> None:
    valid = ~raster.nodata
    pix = np.zeros(raster.values.shape, dtype=np.uint16)
    if valid.any():
        lo = raster.values[valid].min()
        hi = raster.values[valid].max()
        if hi > lo:
            scaled = (raster.values[valid] - lo) / (hi - lo) * 65534.0 + 1.0
        else:
            scaled = np.full(int(valid.sum()), 65535.0)
        pix[valid] = np.round(scaled).astype(np.uint16)
    with open(path, "wb") as f:
        f.write(f"P5\n{raster.width} {raster.height}\n65535\n".encode("ascii"))
        # PGM rows run top to bottom; 16-bit samples are big-endian.
        pix[::-1].astype(">u2").tofile(f)


def load_asc(path: str | os.PathLike) -> RasterGrid:
    """Read an ESRI ASCII grid written by :func:`export_raster`."""
    path = Path(path)
    header: dict[str, float] = {}
    with open(path, "r", encoding="ascii") as f:
        for _ in range(6):
            key, val = f.readline().split()
            header[key.lower()] = float(val)
        data = np.loadtxt(f, ndmin=2)
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if data.shape != (nrows, ncols):
        raise FileFormatError(f"{path}: expected {nrows}x{ncols} values")
    values = data[::-1].copy()
    nodata = values == header.get("nodata_value", NODATA_VALUE)
    values[nodata] = np.nan
    return RasterGrid((header["xllcorner"], header["yllcorner"]),
                      header["cellsize"], values, nodata)
