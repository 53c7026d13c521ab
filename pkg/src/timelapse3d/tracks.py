"""3D track generation by chaining projections through consecutive views.

A track starts at a seed pixel of one view, lifts it onto that view's
depthmap, and alternates project / lift-onto-depthmap steps forward and
backward through the sequence, stopping when a projection leaves the frame.
Seeding covers every pixel of the middle, first and last views, then a
gap-fill pass guarantees that every pixel center of every view ends up
within ``epsilon`` pixels of some track projection.

Depthmaps may live on a coarser grid than the output views: ``views`` are
the depthmap-resolution cameras and ``proj_views`` (same poses, scaled
intrinsics) define the output pixel grid used for seeding, projections and
the stop rule. Depth lookups use bilinear interpolation with edge clamping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._sampling import EDGE_TOL, bilinear_sample_clamped
from .errors import DimensionMismatch
from .geometry import Camera, Depthmap, project_points


@dataclass(frozen=True)
class Track:
    """3D points over a contiguous view interval plus their projections."""

    start_view: int
    points: np.ndarray  # (n, 3) world points, one per covered view
    projections: np.ndarray  # (n, 2) pixel positions in the covered views

    def __post_init__(self):
        if self.points.shape[0] != self.projections.shape[0]:
            raise DimensionMismatch("points and projections must align")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def end_view(self) -> int:
        """One past the last covered view index."""
        return self.start_view + len(self)


@dataclass(frozen=True)
class TrackGenParams:
    epsilon: float = 0.4  # pixels; coverage radius, 0 < epsilon <= 1

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")


def _lift(
    pixels: np.ndarray,
    proj_cam: Camera,
    depth_cam: Camera,
    depthmap: Depthmap,
) -> np.ndarray:
    """Backproject output-grid pixels onto the view's depthmap surface."""
    dirs = proj_cam.pixel_directions(pixels)
    # Same pose, different intrinsics: re-express the ray in depthmap pixels.
    dx = depth_cam.fx * dirs[:, 0] + depth_cam.cx
    dy = depth_cam.fy * dirs[:, 1] + depth_cam.cy
    disp = bilinear_sample_clamped(depthmap.values, dx, dy)
    z = depthmap.plane_set.depth_of_index(disp)
    return proj_cam.center + z[:, None] * (dirs @ proj_cam.rotation)


def _in_frame(pixels: np.ndarray, cam: Camera) -> np.ndarray:
    return (
        (pixels[:, 0] >= -EDGE_TOL)
        & (pixels[:, 0] <= cam.width - 1.0 + EDGE_TOL)
        & (pixels[:, 1] >= -EDGE_TOL)
        & (pixels[:, 1] <= cam.height - 1.0 + EDGE_TOL)
    )


def _chain_batch(
    seed_view: int,
    seeds: np.ndarray,
    depthmaps: Sequence[Depthmap],
    views: Sequence[Camera],
    proj_views: Sequence[Camera],
):
    """Chain many seeds of one view at once.

    Returns (points (M, K, 3), projections (M, K, 2), alive (M, K)); the
    alive rows of each track form a contiguous interval containing
    seed_view.
    """
    m = len(views)
    k = seeds.shape[0]
    pts = np.zeros((m, k, 3))
    prj = np.zeros((m, k, 2))
    alive = np.zeros((m, k), dtype=bool)

    q = _lift(seeds, proj_views[seed_view], views[seed_view], depthmaps[seed_view])
    pts[seed_view], prj[seed_view], alive[seed_view] = q, seeds, True

    for direction in (1, -1):
        cur = q
        live = np.ones(k, dtype=bool)
        rng = (
            range(seed_view + 1, m) if direction == 1 else range(seed_view - 1, -1, -1)
        )
        for w in rng:
            pix, z = project_points(proj_views[w], cur)
            with np.errstate(invalid="ignore"):
                live = live & (z > 0.0) & _in_frame(pix, proj_views[w])
            if not live.any():
                break
            pix = np.where(live[:, None], pix, 0.0)  # keep dead lanes finite
            nxt = _lift(pix, proj_views[w], views[w], depthmaps[w])
            pts[w][live] = nxt[live]
            prj[w][live] = pix[live]
            alive[w][live] = True
            cur = np.where(live[:, None], nxt, cur)
    return pts, prj, alive


def chain_track(
    seed_view: int,
    seed_pixel,
    depthmaps: Sequence[Depthmap],
    views: Sequence[Camera],
    proj_views: Optional[Sequence[Camera]] = None,
) -> Track:
    """Chain a single track from a seed pixel (output-grid coordinates)."""
    if proj_views is None:
        proj_views = views
    seeds = np.asarray(seed_pixel, dtype=np.float64).reshape(1, 2)
    pts, prj, alive = _chain_batch(seed_view, seeds, depthmaps, views, proj_views)
    covered = np.flatnonzero(alive[:, 0])
    lo, hi = covered[0], covered[-1] + 1
    return Track(
        start_view=int(lo),
        points=pts[lo:hi, 0].copy(),
        projections=prj[lo:hi, 0].copy(),
    )


class _Coverage:
    """Per-view bitmap of pixel centers within epsilon of some projection."""

    def __init__(self, m: int, width: int, height: int, epsilon: float):
        self.grids = [np.zeros((height, width), dtype=bool) for _ in range(m)]
        self.eps = epsilon
        self.w = width
        self.h = height

    def mark(self, view: int, projections: np.ndarray):
        if projections.size == 0:
            return
        g = self.grids[view]
        x = projections[:, 0]
        y = projections[:, 1]
        bx = np.floor(x).astype(np.int64)
        by = np.floor(y).astype(np.int64)
        for oy in (-1, 0, 1, 2):
            for ox in (-1, 0, 1, 2):
                cx = bx + ox
                cy = by + oy
                ok = (cx >= 0) & (cx < self.w) & (cy >= 0) & (cy < self.h)
                ok &= (cx - x) ** 2 + (cy - y) ** 2 <= self.eps**2 + 1e-12
                g[cy[ok], cx[ok]] = True

    def mark_batch(self, projections: np.ndarray, alive: np.ndarray):
        for view in range(len(self.grids)):
            self.mark(view, projections[view][alive[view]])

    def uncovered(self, view: int) -> np.ndarray:
        """Row-major (K, 2) pixel centers not yet covered in a view."""
        iy, ix = np.nonzero(~self.grids[view])
        return np.stack([ix, iy], axis=1).astype(np.float64)


def _tracks_from_batch(pts, prj, alive) -> list[Track]:
    out = []
    m, k = alive.shape
    any_alive = alive.any(axis=0)
    lo = np.argmax(alive, axis=0)
    hi = m - np.argmax(alive[::-1], axis=0)
    for t in range(k):
        if not any_alive[t]:
            continue
        a, b = lo[t], hi[t]
        out.append(
            Track(
                start_view=int(a),
                points=pts[a:b, t].copy(),
                projections=prj[a:b, t].copy(),
            )
        )
    return out


def _grid_centers(cam: Camera) -> np.ndarray:
    gx, gy = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def generate_tracks(
    depthmaps: Sequence[Depthmap],
    views: Sequence[Camera],
    params: TrackGenParams = TrackGenParams(),
    proj_views: Optional[Sequence[Camera]] = None,
) -> list[Track]:
    """Seed and chain tracks until every pixel center of every view is
    within ``params.epsilon`` of a track projection.

    Seeding order: all pixels of the middle view, then the first and last
    views, then a gap-fill scan over views in order and pixels in row-major
    order. Output order follows seeding order (deterministic).
    """
    if proj_views is None:
        proj_views = views
    m = len(views)
    if m < 1 or len(depthmaps) != m or len(proj_views) != m:
        raise DimensionMismatch("need one depthmap and one camera pair per view")
    out_cam = proj_views[0]
    cov = _Coverage(m, out_cam.width, out_cam.height, params.epsilon)
    tracks: list[Track] = []

    seed_phases = []
    for j in (m // 2, 0, m - 1):
        if j not in seed_phases:
            seed_phases.append(j)
    for j in seed_phases:
        pts, prj, alive = _chain_batch(
            j, _grid_centers(proj_views[j]), depthmaps, views, proj_views
        )
        tracks.extend(_tracks_from_batch(pts, prj, alive))
        cov.mark_batch(prj, alive)

    for j in range(m):
        seeds = cov.uncovered(j)
        if seeds.shape[0] == 0:
            continue
        if params.epsilon < 1.0:
            # A gap-fill track's only projection into its own view is its
            # seed center, and other centers sit at distance >= 1 > epsilon,
            # so no seed in this view can cover another: batch == sequential.
            pts, prj, alive = _chain_batch(j, seeds, depthmaps, views, proj_views)
            tracks.extend(_tracks_from_batch(pts, prj, alive))
            cov.mark_batch(prj, alive)
        else:
            # At epsilon == 1 a seed covers its 4-neighbor centers, so honor
            # the row-major scan strictly.
            for s in seeds:
                iy, ix = int(s[1]), int(s[0])
                if cov.grids[j][iy, ix]:
                    continue
                pts, prj, alive = _chain_batch(
                    j, s.reshape(1, 2), depthmaps, views, proj_views
                )
                tracks.extend(_tracks_from_batch(pts, prj, alive))
                cov.mark_batch(prj, alive)
    return tracks


def projections_by_view(tracks: Sequence[Track], m: int):
    """Group track projections per view.

    Returns a list of (track_indices (K,), projections (K, 2)) pairs, one
    per view, in track order.
    """
    idx = [[] for _ in range(m)]
    prj = [[] for _ in range(m)]
    for t, track in enumerate(tracks):
        for k in range(len(track)):
            j = track.start_view + k
            idx[j].append(t)
            prj[j].append(track.projections[k])
    return [
        (
            np.array(i, dtype=np.int64),
            np.array(p, dtype=np.float64).reshape(len(p), 2),
        )
        for i, p in zip(idx, prj)
    ]
