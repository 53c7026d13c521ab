"""Photoconsistency data term: sweep planes, support sets, NCC cost volumes.

A cost volume holds, for every pixel of a synthesized view and every sweep
plane, the median-of-medians of pairwise 3x3 NCC matching costs between the
view's support photos warped onto that plane. A per-pixel natural cubic
spline over the plane axis turns the volume into a continuously
differentiable data term for the depth solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from ._sampling import bilinear_sample, grayscale
from .errors import (
    DegenerateRange,
    DimensionMismatch,
    MissingData,
    OutOfRange,
    TooFewImages,
)
from .geometry import Camera, PosedImage, SparsePoints
from .kernels import aggregate_plane

#: Window variance below which NCC is considered undefined (neutral cost 1).
VARIANCE_EPS = 1e-8


@dataclass(frozen=True)
class PlaneSet:
    """Fronto-parallel sweep planes, far to near, uniform in inverse depth."""

    depths: np.ndarray  # (L,) world-unit depths, strictly decreasing, > 0

    def __post_init__(self):
        d = np.array(self.depths, dtype=np.float64)
        if d.ndim != 1 or d.size < 2:
            raise ValueError("a plane set needs at least two depths")
        if d.min() <= 0:
            raise ValueError("plane depths must be positive")
        if not np.all(np.diff(d) < 0):
            raise ValueError("plane depths must be strictly decreasing (far to near)")
        inv = 1.0 / d
        step = (inv[-1] - inv[0]) / (d.size - 1)
        uniform = inv[0] + step * np.arange(d.size)
        if not np.allclose(inv, uniform, rtol=0, atol=1e-9 * abs(step) * d.size):
            raise ValueError("plane depths must be uniform in inverse depth")
        d.flags.writeable = False
        object.__setattr__(self, "depths", d)

    @classmethod
    def from_range(cls, z_far: float, z_near: float, count: int) -> "PlaneSet":
        if not 0 < z_near < z_far:
            raise ValueError("need 0 < z_near < z_far")
        inv = np.linspace(1.0 / z_far, 1.0 / z_near, count)
        return cls(depths=1.0 / inv)

    @property
    def count(self) -> int:
        return self.depths.size

    @property
    def _inv0(self) -> float:
        return 1.0 / self.depths[0]

    @property
    def _inv_step(self) -> float:
        return (1.0 / self.depths[-1] - 1.0 / self.depths[0]) / (self.count - 1)

    def depth_of_index(self, index):
        """Continuous plane index -> world-unit depth."""
        return 1.0 / (self._inv0 + np.asarray(index, dtype=np.float64) * self._inv_step)

    def index_of_depth(self, depth):
        """World-unit depth -> continuous plane index (may exceed [0, L-1])."""
        return (1.0 / np.asarray(depth, dtype=np.float64) - self._inv0) / self._inv_step

    def depth_derivative_of_index(self, index):
        """d(depth)/d(index) at a continuous index."""
        z = self.depth_of_index(index)
        return -self._inv_step * z * z

    def index_derivative_of_depth(self, depth):
        """d(index)/d(depth) at a world-unit depth."""
        z = np.asarray(depth, dtype=np.float64)
        return -1.0 / (self._inv_step * z * z)


@dataclass(frozen=True)
class SupportSet:
    """Chronological window of photo indices backing one view's data term."""

    indices: np.ndarray  # sorted photo indices into the selected sequence
    window_length: int  # nominal window length before any subsampling

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("support set must hold at least one index")
        if not np.all(np.diff(idx) > 0):
            raise ValueError("support indices must be strictly increasing")
        if idx.size > min(self.window_length, 100):
            raise ValueError("support set larger than min(window_length, 100)")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class CostVolume:
    """Aggregated matching costs per pixel and plane, all within [0, 2]."""

    costs: np.ndarray  # (H, W, L) float64
    valid_count: np.ndarray  # (H, W) int32: min over planes of pair counts
    plane_set: PlaneSet

    def __post_init__(self):
        c = np.array(self.costs, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != self.plane_set.count:
            raise DimensionMismatch("costs must be (H, W, L) matching the plane set")
        if not np.all(np.isfinite(c)):
            raise ValueError("costs must be finite")
        if c.min() < 0.0 or c.max() > 2.0:
            raise ValueError("costs must lie in [0, 2]")
        c.flags.writeable = False
        object.__setattr__(self, "costs", c)


@dataclass(frozen=True)
class SplineCost:
    """Per-pixel natural cubic spline through the cost volume's plane axis.

    ``coeffs`` holds the piecewise cubic coefficients as produced by the
    fit, shape (4, L-1, H, W): value = ((c0*t + c1)*t + c2)*t + c3 with
    t = d - floor(d) inside segment floor(d).
    """

    coeffs: np.ndarray
    plane_set: PlaneSet

    @property
    def count(self) -> int:
        return self.plane_set.count

    def evaluate(self, disparity: np.ndarray):
        """Spline value and first derivative at a full-grid disparity raster."""
        d = np.asarray(disparity, dtype=np.float64)
        lmax = self.count - 1.0
        if d.min() < -1e-9 or d.max() > lmax + 1e-9:
            raise OutOfRange(f"disparity outside [0, {lmax:g}]")
        d = np.clip(d, 0.0, lmax)
        seg = np.clip(np.floor(d).astype(np.int64), 0, self.count - 2)
        t = d - seg
        idx = np.broadcast_to(seg[None, None], (4, 1) + seg.shape)
        c = np.take_along_axis(self.coeffs, idx, axis=1)[:, 0]
        value = ((c[0] * t + c[1]) * t + c[2]) * t + c[3]
        deriv = (3.0 * c[0] * t + 2.0 * c[1]) * t + c[2]
        return value, deriv

    def second_derivative(self, disparity: np.ndarray) -> np.ndarray:
        d = np.clip(np.asarray(disparity, dtype=np.float64), 0.0, self.count - 1.0)
        seg = np.clip(np.floor(d).astype(np.int64), 0, self.count - 2)
        t = d - seg
        idx = np.broadcast_to(seg[None, None], (2, 1) + seg.shape)
        c = np.take_along_axis(self.coeffs[:2], idx, axis=1)[:, 0]
        return 6.0 * c[0] * t + 2.0 * c[1]


def fit_spline(volume: CostVolume) -> SplineCost:
    """Interpolating natural cubic splines along the plane axis, per pixel."""
    L = volume.plane_set.count
    y = np.moveaxis(volume.costs, 2, 0)  # (L, H, W)
    cs = CubicSpline(np.arange(L), y, axis=0, bc_type="natural")
    return SplineCost(coeffs=np.ascontiguousarray(cs.c), plane_set=volume.plane_set)


def eval_cost(spline: SplineCost, pixel, disparity: float):
    """Spline value and d/d(disparity) derivative at one pixel.

    ``pixel`` is (x, y) integer raster coordinates; ``disparity`` must lie
    within [0, L-1].
    """
    x, y = int(pixel[0]), int(pixel[1])
    lmax = spline.count - 1.0
    if not 0.0 <= disparity <= lmax:
        raise OutOfRange(f"disparity {disparity:g} outside [0, {lmax:g}]")
    seg = min(int(math.floor(disparity)), spline.count - 2)
    t = disparity - seg
    c = spline.coeffs[:, seg, y, x]
    value = ((c[0] * t + c[1]) * t + c[2]) * t + c[3]
    deriv = (3.0 * c[0] * t + 2.0 * c[1]) * t + c[2]
    return float(value), float(deriv)


# --- plane range from sparse geometry ---


def compute_depth_planes(
    points: SparsePoints,
    camera_centers: np.ndarray,
    view: Camera,
    count: int,
    min_triangulation_deg: float = 2.0,
    trim_fraction: float = 0.005,
) -> PlaneSet:
    """Sweep plane depths for a view, bracketed by reliable sparse points.

    Points whose maximum pairwise triangulation angle across their observing
    cameras stays below ``min_triangulation_deg`` are discarded, as are
    points behind the view. The nearest and farthest ``trim_fraction`` of
    the survivors are trimmed before placing ``count`` planes uniformly in
    inverse depth over the remaining range.
    """
    if len(points) == 0:
        raise DegenerateRange("no sparse points")
    if count < 2:
        raise ValueError("need at least two planes")
    centers = np.asarray(camera_centers, dtype=np.float64)
    cos_thresh = math.cos(math.radians(min_triangulation_deg))

    keep = np.zeros(len(points), dtype=bool)
    for i, obs in enumerate(points.observers):
        if obs.size < 2:
            continue
        rays = centers[obs] - points.positions[i]
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        gram = rays @ rays.T
        min_cos = gram[np.triu_indices(obs.size, k=1)].min()
        if min_cos < cos_thresh:  # max pairwise angle >= threshold
            keep[i] = True

    if not np.any(keep):
        raise DegenerateRange("all points below the triangulation angle threshold")
    pts = points.positions[keep]
    z = (pts - view.center) @ view.rotation[2]
    z = z[z > 0]
    if z.size < 2:
        raise DegenerateRange("fewer than two usable points in front of view")
    z.sort()
    trim = int(trim_fraction * z.size)
    z = z[trim : z.size - trim]
    if z.size < 2 or z[0] == z[-1]:
        raise DegenerateRange("depth range collapsed after trimming")
    return PlaneSet.from_range(z_far=float(z[-1]), z_near=float(z[0]), count=count)


# --- support sets ---


def support_set(
    view_index: int,
    photo_times: np.ndarray,
    view_times: np.ndarray,
    fraction: float = 0.15,
    max_size: int = 100,
) -> SupportSet:
    """Chronological photo window centered at the view's nearest timestamp.

    Window length is ``fraction`` of the photo count (rounded half up, at
    least 1), clamped into range; windows beyond ``max_size`` are uniformly
    subsampled to exactly ``max_size`` entries.
    """
    t = np.asarray(photo_times, dtype=np.float64)
    n = t.size
    if n < 1:
        raise ValueError("need at least one photo")
    length = max(1, int(math.floor(fraction * n + 0.5)))
    length = min(length, n)
    center = int(np.argmin(np.abs(t - view_times[view_index])))
    start = min(max(center - (length - 1) // 2, 0), n - length)
    if length > max_size:
        picks = np.rint(np.linspace(start, start + length - 1, max_size))
        indices = picks.astype(np.int64)
    else:
        indices = np.arange(start, start + length, dtype=np.int64)
    return SupportSet(indices=indices, window_length=length)


# --- pairwise matching cost (reference single-pixel implementation) ---


def pairwise_cost(
    photo_a: PosedImage,
    photo_b: PosedImage,
    view: Camera,
    plane_depth: float,
    pixel,
) -> float:
    """1 - NCC of the two photos warped onto the view's plane at one pixel.

    The 3x3 window around ``pixel`` (x, y) is backprojected onto the
    fronto-parallel plane at ``plane_depth`` and sampled bilinearly in both
    photos; raises MissingData when any sample falls outside either photo.
    """
    x, y = int(pixel[0]), int(pixel[1])
    if not (1 <= x <= view.width - 2 and 1 <= y <= view.height - 2):
        raise ValueError("pixel too close to the border for a 3x3 window")
    gx, gy = np.meshgrid(np.arange(x - 1, x + 2), np.arange(y - 1, y + 2))
    window = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    dirs = view.pixel_directions(window)
    pts = view.center + plane_depth * (dirs @ view.rotation)

    samples = []
    for photo in (photo_a, photo_b):
        xc = (pts - photo.camera.center) @ photo.camera.rotation.T
        if np.any(xc[:, 2] <= 0):
            raise MissingData("window projects behind a source camera")
        u = photo.camera.fx * xc[:, 0] / xc[:, 2] + photo.camera.cx
        v = photo.camera.fy * xc[:, 1] / xc[:, 2] + photo.camera.cy
        gray = grayscale(photo.image)
        values, ok = bilinear_sample(gray, u, v)
        if not np.all(ok):
            raise MissingData("window samples fall outside a source image")
        samples.append(values)

    a, b = samples
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean(a * a) - mu_a * mu_a
    var_b = np.mean(b * b) - mu_b * mu_b
    if var_a < VARIANCE_EPS or var_b < VARIANCE_EPS:
        return 1.0
    cov = np.mean(a * b) - mu_a * mu_b
    return float(np.clip(1.0 - cov / math.sqrt(var_a * var_b), 0.0, 2.0))


# --- volume construction ---


def aggregate(
    view: Camera,
    photos: Sequence[PosedImage],
    support: SupportSet,
    planes: PlaneSet,
) -> CostVolume:
    """Build the full cost volume for one view.

    For each plane, every support photo is warped onto the view grid and
    pairwise 3x3 NCC costs are reduced per pixel by a median over partners
    followed by a median over photos. Pixels where no pair produced a
    sample get the neutral cost 1.
    """
    if len(support) < 2:
        raise TooFewImages("cost aggregation needs at least two support images")
    chosen = [photos[i] for i in support.indices]
    grays = [grayscale(p.image) for p in chosen]
    rays = view.world_rays()
    h, w = view.height, view.width
    L = planes.count

    costs = np.empty((h, w, L))
    counts = np.empty((h, w, L), dtype=np.int32)
    n = len(chosen)
    warped = np.empty((n, h, w))
    valid = np.empty((n, h, w), dtype=bool)
    for li in range(L):
        pts = view.center + planes.depths[li] * rays
        for k, photo in enumerate(chosen):
            cam = photo.camera
            xc = (pts - cam.center) @ cam.rotation.T
            z = xc[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = cam.fx * xc[:, 0] / z + cam.cx
                v = cam.fy * xc[:, 1] / z + cam.cy
            front = z > 0
            u = np.where(front, u, -1.0)
            v = np.where(front, v, -1.0)
            values, ok = bilinear_sample(grays[k], u, v)
            warped[k] = values.reshape(h, w)
            valid[k] = (ok & front).reshape(h, w)
        costs[:, :, li], counts[:, :, li] = aggregate_plane(
            warped, valid, VARIANCE_EPS
        )
    return CostVolume(
        costs=costs, valid_count=counts.min(axis=2), plane_set=planes
    )
