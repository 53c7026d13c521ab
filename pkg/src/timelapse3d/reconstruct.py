"""Output frame reconstruction from projected color profile samples.

The reconstructed image is the least-squares solution of the sparse system
relating pixel colors to sample colors through bilinear interpolation
weights, solved per channel by conjugate gradient on the normal equations
(no damping: conditioning is guaranteed by sampling density, and a density
violation is an error, not something to regularize away). A Gaussian
splatting baseline and a sampling-density audit accompany it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, UnderConstrained

#: Minimum per-pixel sum of squared sample weights before reconstruction
#: refuses to proceed.
WEIGHT_MASS_FLOOR = 1e-6


@dataclass(frozen=True)
class ProjectedSample:
    """One profile sample: subpixel position, color, bilinear footprint."""

    position: np.ndarray  # (2,)
    color: np.ndarray  # (3,)
    neighbors: np.ndarray  # (4, 2) integer (x, y) of the enclosing cell
    weights: np.ndarray  # (4,) nonnegative, summing to 1

    @classmethod
    def from_position(cls, position, color, width: int, height: int):
        p = np.asarray(position, dtype=np.float64).reshape(2)
        ix, iy, w = bilinear_footprint(
            p[0:1], p[1:2], width, height
        )
        return cls(
            position=p,
            color=np.asarray(color, dtype=np.float64).reshape(-1),
            neighbors=np.stack([ix[0], iy[0]], axis=1),
            weights=w[0],
        )


@dataclass(frozen=True)
class Frame:
    """Reconstructed RGB raster, clamped to [0, 1]."""

    pixels: np.ndarray  # (H, W, 3)

    def __post_init__(self):
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("frame pixels must be finite")


def bilinear_footprint(x, y, width: int, height: int):
    """Enclosing 2x2 cells and weights for sample positions.

    Positions are clamped into [0, width-1] x [0, height-1] first (border
    samples from tracks may sit marginally outside). Returns
    (ix (N, 4), iy (N, 4), weights (N, 4)); weights are nonnegative and sum
    to 1.
    """
    xs = np.clip(np.asarray(x, dtype=np.float64), 0.0, width - 1.0)
    ys = np.clip(np.asarray(y, dtype=np.float64), 0.0, height - 1.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(width - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xs - x0
    fy = ys - y0
    ix = np.stack([x0, x1, x0, x1], axis=1)
    iy = np.stack([y0, y0, y1, y1], axis=1)
    w = np.stack(
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
        axis=1,
    )
    return ix, iy, w


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Accept either a list of ProjectedSample or (positions, colors)."""
    if isinstance(samples, tuple):
        positions, colors = samples
        return (
            np.asarray(positions, dtype=np.float64).reshape(-1, 2),
            np.asarray(colors, dtype=np.float64).reshape(-1, 3),
        )
    positions = np.array([s.position for s in samples], dtype=np.float64)
    colors = np.array([s.color for s in samples], dtype=np.float64)
    return positions.reshape(-1, 2), colors.reshape(-1, 3)


def reconstruct_frame(
    samples,
    width: int,
    height: int,
    cg_rtol: float = 1e-8,
) -> Frame:
    """Least-squares frame fitting the samples under bilinear interpolation.

    ``samples`` is a list of ProjectedSample or a (positions (N,2),
    colors (N,3)) tuple. Raises UnderConstrained when some pixel's total
    squared-weight mass falls below 1e-6 (a sampling-density violation).
    """
    positions, colors = _as_arrays(samples)
    n = positions.shape[0]
    ix, iy, w = bilinear_footprint(positions[:, 0], positions[:, 1], width, height)
    cols = (iy * width + ix).ravel()
    rows = np.repeat(np.arange(n), 4)
    a = sparse.csr_matrix(
        (w.ravel(), (rows, cols)), shape=(n, width * height)
    )
    mass = np.asarray(a.multiply(a).sum(axis=0)).ravel()
    if mass.min() < WEIGHT_MASS_FLOOR:
        bad = int(np.argmin(mass))
        raise UnderConstrained(
            f"pixel ({bad % width}, {bad // width}) has squared-weight mass "
            f"{mass.min():.3g} < {WEIGHT_MASS_FLOOR:g}"
        )
    at_a = (a.T @ a).tocsr()
    out = np.empty((height, width, 3))
    for c in range(3):
        rhs = a.T @ colors[:, c]
        solution, info = cg(at_a, rhs, rtol=cg_rtol, atol=0.0, maxiter=10000)
        if info != 0:
            raise RuntimeError(f"conjugate gradient did not converge (info={info})")
        out[:, :, c] = solution.reshape(height, width)
    return Frame(pixels=np.clip(out, 0.0, 1.0))


def splat_baseline(
    samples,
    width: int,
    height: int,
    sigma: float = 1.0,
) -> Frame:
    """Gaussian-weighted splatting baseline (normalized, truncated at 3 sigma).

    Pixels beyond 3 sigma of every sample stay 0.
    """
    positions, colors = _as_arrays(samples)
    if positions.shape[0] == 0:
        raise ValueError("need at least one sample")
    radius = int(math.ceil(3.0 * sigma))
    num = np.zeros((height * width, 3))
    den = np.zeros(height * width)
    x = positions[:, 0]
    y = positions[:, 1]
    bx = np.floor(x).astype(np.int64)
    by = np.floor(y).astype(np.int64)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for oy in range(-radius, radius + 2):
        for ox in range(-radius, radius + 2):
            cx = bx + ox
            cy = by + oy
            d2 = (cx - x) ** 2 + (cy - y) ** 2
            ok = (
                (cx >= 0)
                & (cx < width)
                & (cy >= 0)
                & (cy < height)
                & (d2 <= 9.0 * sigma * sigma)
            )
            if not np.any(ok):
                continue
            flat = (cy[ok] * width + cx[ok]).astype(np.int64)
            g = np.exp(-d2[ok] * inv2s2)
            den += np.bincount(flat, weights=g, minlength=den.size)
            for c in range(3):
                num[:, c] += np.bincount(
                    flat, weights=g * colors[ok, c], minlength=den.size
                )
    out = np.zeros((height * width, 3))
    hit = den > 0.0
    out[hit] = num[hit] / den[hit, None]
    return Frame(pixels=np.clip(out.reshape(height, width, 3), 0.0, 1.0))


@dataclass(frozen=True)
class DensityReport:
    """Sampling density audit against the coverage guarantees."""

    max_distance: float  # max over pixels of nearest-sample distance
    min_best_weight: float  # min over pixels of the best single weight
    min_weight_mass: float  # min over pixels of the squared-weight mass
    nearest_distance: np.ndarray  # (H, W)
    best_weight: np.ndarray  # (H, W)
    weight_mass: np.ndarray  # (H, W)
    distance_violations: np.ndarray  # (K, 2) pixel (x, y) beyond epsilon
    weight_violations: np.ndarray  # (K, 2) pixel (x, y) with best weight <= 0.5


def density_audit(samples, width: int, height: int, epsilon: float) -> DensityReport:
    """Nearest-sample distances and bilinear weight statistics per pixel."""
    positions, _ = (
        _as_arrays(samples)
        if not isinstance(samples, np.ndarray)
        else (np.asarray(samples, dtype=np.float64).reshape(-1, 2), None)
    )
    gx, gy = np.meshgrid(np.arange(width), np.arange(height))
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)

    if positions.shape[0] == 0:
        dist = np.full(height * width, np.inf)
        best = np.zeros(height * width)
        mass = np.zeros(height * width)
    else:
        tree = cKDTree(positions)
        dist, _ = tree.query(centers, k=1)
        ix, iy, w = bilinear_footprint(
            positions[:, 0], positions[:, 1], width, height
        )
        flat = (iy * width + ix).ravel()
        best = np.zeros(height * width)
        np.maximum.at(best, flat, w.ravel())
        mass = np.bincount(flat, weights=(w**2).ravel(), minlength=height * width)

    dviol = centers[dist > epsilon].astype(np.int64)
    wviol = centers[best <= 0.5].astype(np.int64)
    return DensityReport(
        max_distance=float(dist.max()),
        min_best_weight=float(best.min()),
        min_weight_mass=float(mass.min()),
        nearest_distance=dist.reshape(height, width),
        best_weight=best.reshape(height, width),
        weight_mass=mass.reshape(height, width),
        distance_violations=dviol,
        weight_violations=wviol,
    )
