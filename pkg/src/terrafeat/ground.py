"""Ground-candidate extraction, robust DTM fitting, RANSAC plane fallback,
and per-point relative elevation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from terrafeat.cloud import PointCloud
from terrafeat.errors import NumericalError
from terrafeat.raster import RasterGrid
from terrafeat import spline

logger = logging.getLogger(__name__)

RELATIVE_ELEVATION_COLUMN = "h_r"


@dataclass
class SplineConfig:
    """Parameters of the robust DTM surface fit.

    Attributes:
        lam: smoothness weight in (0, 1); the data term gets 1 - lam.
        epsilon: small first-derivative penalty for numerical stability.
        node_cell: spline-node spacing in meters; None means 4x the
            raster cell of the fit domain.
        irls_iters: number of reweighting iterations.
        irls_delta: smoothing width of the absolute values, in meters.
        cg_tol: relative tolerance of the inner conjugate-gradient solves.
        cg_max_iter: iteration cap per solve.
    """

    lam: float = 0.7
    epsilon: float = 1e-3
    node_cell: float | None = None
    irls_iters: int = 20
    irls_delta: float = 1e-3
    cg_tol: float = 1e-6
    cg_max_iter: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.node_cell is not None and self.node_cell <= 0:
            raise ValueError("node_cell must be positive")
        if self.irls_delta <= 0:
            raise ValueError("irls_delta must be positive")


@dataclass
class GroundCandidates:
    """Cells of a surface raster flagged as bare ground, with samples at
    the cell centers."""

    mask: np.ndarray
    origin: tuple[float, float]
    cell: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def count(self) -> int:
        return len(self.z)

    def mask_raster(self) -> RasterGrid:
        """0/1 raster of the candidate flags (exportable as asc)."""
        return RasterGrid(self.origin, self.cell,
                          self.mask.astype(np.float64),
                          np.zeros_like(self.mask, dtype=bool))


@dataclass(frozen=True)
class Plane:
    """Ground plane z = a*x + b*y + c from a RANSAC consensus."""

    a: float
    b: float
    c: float
    inlier_count: int
    inlier_threshold: float

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.a * x + self.b * y + self.c


def extract_ground_candidates(dsm: RasterGrid, radius: float, tol: float = 0.25,
                              mask: RasterGrid | None = None) -> GroundCandidates:
    """Flag cells whose surface height is within `tol` of the minimum over
    a circular window of the given radius.

    The window radius should be on the order of the largest off-terrain
    object so the window always reaches true ground.  Masked cells
    (mask value > 0.5) contribute no candidates.
    """
    if dsm.nodata.any():
        raise ValueError("dsm must be inpainted (no nodata) before filtering")
    if radius < dsm.cell:
        raise ValueError("filter radius below one cell would flag every cell")
    if mask is not None and not dsm.same_geometry(mask):
        raise ValueError("mask geometry does not match the dsm")

    r_cells = radius / dsm.cell
    span = int(np.floor(r_cells))
    di, dj = np.mgrid[-span:span + 1, -span:span + 1]
    footprint = (di * di + dj * dj) <= r_cells * r_cells
    winmin = ndimage.minimum_filter(dsm.values, footprint=footprint,
                                    mode="constant", cval=np.inf)
    cand = dsm.values <= winmin + tol
    if mask is not None:
        cand &= ~((mask.values > 0.5) & ~mask.nodata)
    if not cand.any():
        raise NumericalError("minimum filter produced zero ground candidates")

    rows, cols = np.nonzero(cand)
    x = dsm.origin[0] + (cols + 0.5) * dsm.cell
    y = dsm.origin[1] + (rows + 0.5) * dsm.cell
    return GroundCandidates(cand, dsm.origin, dsm.cell, x, y,
                            dsm.values[rows, cols])


def fit_dtm_spline(candidates: GroundCandidates, domain: RasterGrid,
                   config: SplineConfig | None = None,
                   data_loss: str = "l1") -> RasterGrid:
    """Fit the robust spline to the ground candidates and evaluate it at
    every cell of `domain`'s geometry.

    `data_loss` selects the data term ("l1" robust default, "l2" for
    robustness comparisons); the derivative penalties are always L1.
    """
    config = config or SplineConfig()
    if candidates.count < 3:
        raise NumericalError("need at least 3 ground candidates")
    if candidates.mask.shape != (domain.height, domain.width):
        raise ValueError("candidate mask does not match the domain geometry")
    cx = np.var(candidates.x)
    cy = np.var(candidates.y)
    cxy = np.mean((candidates.x - candidates.x.mean())
                  * (candidates.y - candidates.y.mean()))
    det = cx * cy - cxy * cxy
    if det <= 1e-12 * max(1.0, cx + cy) ** 2:
        raise NumericalError("ground candidates are collinear; cannot fit a surface")

    node_cell = config.node_cell if config.node_cell is not None else 4.0 * domain.cell
    data = np.zeros((domain.height, domain.width))
    data[candidates.mask] = candidates.z
    values, result = spline.fit_surface(
        data, candidates.mask, domain.cell,
        lam=config.lam, epsilon=config.epsilon, node_cell=node_cell,
        irls_iters=config.irls_iters, irls_delta=config.irls_delta,
        cg_tol=config.cg_tol, cg_max_iter=config.cg_max_iter,
        data_loss=data_loss)
    if not result.converged:
        logger.warning("DTM fit did not fully converge; returning best iterate")
    return RasterGrid(domain.origin, domain.cell, values,
                      np.zeros((domain.height, domain.width), dtype=bool))


def ransac_ground_plane(cloud: PointCloud, inlier_threshold: float,
                        iterations: int = 500, seed: int = 0) -> Plane:
    """Best-of-N 3-point plane consensus, refit on the inlier set.

    Deterministic for a fixed seed.  Near-vertical hypotheses (unit
    normal with |z| < 0.5) are rejected; degenerate triples (triangle
    area below 1e-6 m^2) are resampled.
    """
    n = len(cloud)
    if n < 3:
        raise NumericalError("RANSAC needs at least 3 points")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    pos = cloud.positions
    rng = np.random.default_rng(seed)
    best_count = -1
    best = None
    for _ in range(iterations):
        tri = None
        for _ in range(100):
            pick = rng.choice(n, size=3, replace=False)
            p1, p2, p3 = pos[pick]
            normal = np.cross(p2 - p1, p3 - p1)
            norm = np.linalg.norm(normal)
            if norm / 2.0 >= 1e-6:
                tri = (p1, normal, norm)
                break
        if tri is None:
            continue
        p1, normal, norm = tri
        if abs(normal[2]) / norm < 0.5:
            continue
        a = -normal[0] / normal[2]
        b = -normal[1] / normal[2]
        c = p1[2] - a * p1[0] - b * p1[1]
        residual = np.abs(pos[:, 2] - (a * pos[:, 0] + b * pos[:, 1] + c))
        count = int((residual <= inlier_threshold).sum())
        if count > best_count:
            best_count = count
            best = (a, b, c)
    if best is None:
        raise NumericalError("RANSAC found no valid plane hypothesis")

    a, b, c = best
    residual = np.abs(pos[:, 2] - (a * pos[:, 0] + b * pos[:, 1] + c))
    inliers = residual <= inlier_threshold
    design = np.column_stack((pos[inliers, 0], pos[inliers, 1],
                              np.ones(int(inliers.sum()))))
    coef, *_ = np.linalg.lstsq(design, pos[inliers, 2], rcond=None)
    a, b, c = (float(coef[0]), float(coef[1]), float(coef[2]))
    residual = np.abs(pos[:, 2] - (a * pos[:, 0] + b * pos[:, 1] + c))
    count = int((residual <= inlier_threshold).sum())
    return Plane(a, b, c, count, inlier_threshold)


def relative_elevation(cloud: PointCloud, dtm: RasterGrid,
                       mode: str = "cell") -> PointCloud:
    """Append the "h_r" column: point z minus the terrain surface.

    mode "cell" subtracts the value of the point's cell; "bilinear"
    interpolates the four surrounding cell centers.  Points outside the
    raster extent are clamped to the edge (counted in a warning).
    """
    if dtm.nodata.any():
        raise ValueError("dtm must have no nodata cells")
    if mode not in ("cell", "bilinear"):
        raise ValueError("mode must be 'cell' or 'bilinear'")

    x0, y0 = dtm.origin
    u = (cloud.x - x0) / dtm.cell
    v = (cloud.y - y0) / dtm.cell
    outside = int(((u < 0) | (u > dtm.width) | (v < 0) | (v > dtm.height)).sum())
    if outside:
        logger.warning("%d point(s) outside the dtm extent were clamped to the edge",
                       outside)
    if mode == "cell":
        cols = np.clip(np.floor(u).astype(np.int64), 0, dtm.width - 1)
        rows = np.clip(np.floor(v).astype(np.int64), 0, dtm.height - 1)
        surf = dtm.values[rows, cols]
    else:
        gx = np.clip(u - 0.5, 0.0, dtm.width - 1.0)
        gy = np.clip(v - 0.5, 0.0, dtm.height - 1.0)
        i0 = np.minimum(np.floor(gx).astype(np.int64), dtm.width - 2) if dtm.width > 1 \
            else np.zeros(len(cloud), dtype=np.int64)
        j0 = np.minimum(np.floor(gy).astype(np.int64), dtm.height - 2) if dtm.height > 1 \
            else np.zeros(len(cloud), dtype=np.int64)
        tx = gx - i0 if dtm.width > 1 else np.zeros(len(cloud))
        ty = gy - j0 if dtm.height > 1 else np.zeros(len(cloud))
        i1 = np.minimum(i0 + 1, dtm.width - 1)
        j1 = np.minimum(j0 + 1, dtm.height - 1)
        surf = ((1 - ty) * ((1 - tx) * dtm.values[j0, i0] + tx * dtm.values[j0, i1])
                + ty * ((1 - tx) * dtm.values[j1, i0] + tx * dtm.values[j1, i1]))
    return cloud.with_feature(RELATIVE_ELEVATION_COLUMN, cloud.z - surf)


def relative_elevation_plane(cloud: PointCloud, plane: Plane) -> PointCloud:
    """Append "h_r" relative to a fitted ground plane."""
    return cloud.with_feature(RELATIVE_ELEVATION_COLUMN,
                              cloud.z - plane.evaluate(cloud.x, cloud.y))


def ndsm(dsm: RasterGrid, dtm: RasterGrid) -> RasterGrid:
    """Cellwise surface-minus-terrain raster."""
    if not dsm.same_geometry(dtm):
        raise ValueError("dsm and dtm geometries differ")
    mask = dsm.nodata | dtm.nodata
    values = dsm.values - dtm.values
    values[mask] = np.nan
    return RasterGrid(dsm.origin, dsm.cell, values, mask)
