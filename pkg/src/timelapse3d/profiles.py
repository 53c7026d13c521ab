"""Per-track color observation gathering and robust profile solving.

Each input photo is assigned to its nearest output view in time; the
resulting per-view photo sets partition the input sequence. For a track, the
3D point of each covered view is projected into that view's photos, tested
against a z-buffer rendered from the view's depthmap (so occluded samples
are dropped), and sampled bilinearly.

The profile objective per track and color channel is a 1D robust chain:

    sum_j sum_i huber_d(x_ij - y_j)  +  lambda * sum_j huber_t(y_{j+1} - y_j)

minimized by iteratively reweighted least squares on the tridiagonal normal
equations; the reweighting is a majorize-minimize scheme, so the objective
never increases. Views without observations are interpolated by the
temporal prior alone. Channels are solved independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from ._sampling import EDGE_TOL, bilinear_sample
from .depth_solver import HuberLoss, huber, huber_weight
from .errors import NoObservations
from .geometry import Camera, Depthmap, PosedImage, render_zbuffer, project_points
from .tracks import Track


@dataclass(frozen=True)
class ProfileParams:
    lam: float = 25.0  # temporal regularization weight
    huber_scale_data: float = 1e-4  # color units, about 1/40 of an 8-bit step
    huber_scale_temporal: float = 1e-4
    max_iters: int = 500
    grad_tol: float = 1e-8
    occlusion_tol: float = 0.01  # fractional depth slack for the z-buffer test

    def __post_init__(self):
        if min(self.lam, self.huber_scale_data, self.huber_scale_temporal) <= 0:
            raise ValueError("profile parameters must be positive")


@dataclass(frozen=True)
class ViewAssignment:
    """Disjoint per-view photo index sets whose union is all photos."""

    photo_indices: tuple  # one int array per view


@dataclass(frozen=True)
class Observation:
    photo: int
    view: int
    color: np.ndarray  # (3,) in [0, 1]
    visible: bool


@dataclass(frozen=True)
class ColorProfile:
    """Regularized per-view colors for one track, with its projections."""

    start_view: int
    values: np.ndarray  # (n, 3) in [0, 1]
    projections: np.ndarray  # (n, 2)


def assign_support(photo_times, view_times) -> ViewAssignment:
    """Assign each photo to the view nearest in time (ties to the lower j)."""
    t = np.asarray(photo_times, dtype=np.float64)
    vt = np.asarray(view_times, dtype=np.float64)
    nearest = np.argmin(np.abs(t[:, None] - vt[None, :]), axis=1)
    return ViewAssignment(
        photo_indices=tuple(
            np.flatnonzero(nearest == j) for j in range(vt.size)
        )
    )


class ObservationSampler:
    """Projects track points into the photos of each covered view.

    Z-buffers (one per photo, rendered from the photo's assigned view's
    depthmap) are built once and shared across tracks.
    """

    def __init__(
        self,
        photos: Sequence[PosedImage],
        assignment: ViewAssignment,
        depthmaps: Sequence[Depthmap],
        views: Sequence[Camera],
        occlusion_tol: float = 0.01,
    ):
        self.photos = list(photos)
        self.assignment = assignment
        self.tol = occlusion_tol
        self.view_of_photo = np.empty(len(self.photos), dtype=np.int64)
        for j, idx in enumerate(assignment.photo_indices):
            self.view_of_photo[idx] = j
        self.zbufs = [
            render_zbuffer(
                depthmaps[self.view_of_photo[i]],
                views[self.view_of_photo[i]],
                photo.camera,
            )
            for i, photo in enumerate(self.photos)
        ]

    def _observe(self, photo_index: int, points: np.ndarray):
        """Colors and visibility of world points seen from one photo."""
        photo = self.photos[photo_index]
        cam = photo.camera
        pix, z = project_points(cam, points)
        with np.errstate(invalid="ignore"):
            ok = (
                (z > 0.0)
                & (pix[:, 0] >= -EDGE_TOL)
                & (pix[:, 0] <= cam.width - 1.0 + EDGE_TOL)
                & (pix[:, 1] >= -EDGE_TOL)
                & (pix[:, 1] <= cam.height - 1.0 + EDGE_TOL)
            )
        pix = np.where(ok[:, None], pix, 0.0)
        zbuf = self.zbufs[photo_index]
        zb = zbuf[
            np.rint(pix[:, 1]).astype(np.int64), np.rint(pix[:, 0]).astype(np.int64)
        ]
        visible = ok & (z <= zb + self.tol * np.abs(z))
        colors, _ = bilinear_sample(photo.image, pix[:, 0], pix[:, 1])
        return colors, visible

    def sample(self, track: Track) -> list[Observation]:
        """All observations of one track, visible or not."""
        out = []
        for k in range(len(track)):
            j = track.start_view + k
            for i in self.assignment.photo_indices[j]:
                colors, visible = self._observe(int(i), track.points[k : k + 1])
                out.append(
                    Observation(
                        photo=int(i),
                        view=j,
                        color=colors[0],
                        visible=bool(visible[0]),
                    )
                )
        return out

    def observations_by_view(self, track: Track) -> list[np.ndarray]:
        """Visible observation colors grouped per covered view of a track."""
        groups = []
        for k in range(len(track)):
            j = track.start_view + k
            idx = self.assignment.photo_indices[j]
            cols = []
            for i in idx:
                colors, visible = self._observe(int(i), track.points[k : k + 1])
                if visible[0]:
                    cols.append(colors[0])
            groups.append(
                np.array(cols).reshape(len(cols), 3) if cols else np.empty((0, 3))
            )
        return groups

    def sample_batch(self, tracks: Sequence[Track]):
        """Flat observation arrays over all tracks, for the batched solver.

        Returns (lengths (T,), start_views (T,), obs_track, obs_view_local,
        obs_color) where the obs arrays cover visible observations only.
        """
        t_count = len(tracks)
        lengths = np.array([len(t) for t in tracks], dtype=np.int64)
        starts = np.array([t.start_view for t in tracks], dtype=np.int64)
        n_views = len(self.assignment.photo_indices)

        # Group (track, local view) pairs by absolute view index.
        rows_by_view = [[] for _ in range(n_views)]
        for t, track in enumerate(tracks):
            for k in range(len(track)):
                rows_by_view[track.start_view + k].append((t, k))

        obs_track, obs_local, obs_color = [], [], []
        for j in range(n_views):
            pairs = rows_by_view[j]
            if not pairs:
                continue
            tr = np.array([p[0] for p in pairs], dtype=np.int64)
            loc = np.array([p[1] for p in pairs], dtype=np.int64)
            pts = np.stack([tracks[t].points[k] for t, k in pairs])
            for i in self.assignment.photo_indices[j]:
                colors, visible = self._observe(int(i), pts)
                sel = np.flatnonzero(visible)
                if sel.size:
                    obs_track.append(tr[sel])
                    obs_local.append(loc[sel])
                    obs_color.append(colors[sel])
        if obs_track:
            return (
                lengths,
                starts,
                np.concatenate(obs_track),
                np.concatenate(obs_local),
                np.concatenate(obs_color),
            )
        return (
            lengths,
            starts,
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty((0, 3)),
        )


def sample_observations(
    track: Track,
    assignment: ViewAssignment,
    photos: Sequence[PosedImage],
    depthmaps: Sequence[Depthmap],
    views: Sequence[Camera],
    occlusion_tol: float = 0.01,
) -> list[Observation]:
    """One-shot observation sampling for a single track."""
    sampler = ObservationSampler(photos, assignment, depthmaps, views, occlusion_tol)
    return sampler.sample(track)


# --- robust chain solver ---


def _chain_objective(y, obs, lam, loss_d, loss_t):
    e = 0.0
    for j, x in enumerate(obs):
        if x.size:
            e += float(huber(loss_d, x - y[j])[0].sum())
    if y.size > 1:
        e += lam * float(huber(loss_t, np.diff(y))[0].sum())
    return e


def _solve_chain_channel(obs, lam, loss_d, loss_t, max_iters, grad_tol, on_iterate=None):
    """IRLS on one scalar chain; obs is a list of 1D observation arrays.

    ``on_iterate`` (if given) receives a copy of each accepted iterate;
    used by tests to audit the monotone-descent property.
    """
    n = len(obs)
    means = np.array([x.mean() if x.size else np.nan for x in obs])
    if np.all(np.isnan(means)):
        raise NoObservations("track has no visible observation")
    # Initialize empty views from the nearest observed view.
    filled = np.flatnonzero(~np.isnan(means))
    nearest = filled[np.argmin(np.abs(np.arange(n)[:, None] - filled[None, :]), axis=1)]
    y = np.where(np.isnan(means), means[nearest], means)
    if on_iterate is not None:
        on_iterate(y.copy())

    for _ in range(max_iters):
        diag = np.zeros(n)
        rhs = np.zeros(n)
        for j, x in enumerate(obs):
            if x.size:
                w = huber_weight(loss_d, x - y[j])
                diag[j] += w.sum()
                rhs[j] += float(w @ x)
        if n > 1:
            wt = lam * huber_weight(loss_t, np.diff(y))
            diag[:-1] += wt
            diag[1:] += wt
            ab = np.zeros((3, n))
            ab[0, 1:] = -wt
            ab[1] = diag
            ab[2, :-1] = -wt
            y_new = solve_banded((1, 1), ab, rhs)
        else:
            y_new = rhs / diag
        delta = float(np.max(np.abs(y_new - y)))
        y = y_new
        if on_iterate is not None:
            on_iterate(y.copy())
        if delta < 1e-14:
            break
        if _chain_gradient_norm(y, obs, lam, loss_d, loss_t) < grad_tol:
            break
    return y


def _chain_gradient_norm(y, obs, lam, loss_d, loss_t):
    g = np.zeros(y.size)
    for j, x in enumerate(obs):
        if x.size:
            g[j] -= float(huber(loss_d, x - y[j])[1].sum())
    if y.size > 1:
        dt = huber(loss_t, np.diff(y))[1]
        g[:-1] -= lam * dt
        g[1:] += lam * dt
    return float(np.max(np.abs(g)))


def solve_profile(
    observations_by_view: Sequence[np.ndarray],
    params: ProfileParams = ProfileParams(),
) -> np.ndarray:
    """Regularized (n, 3) profile for one track.

    ``observations_by_view`` holds, per covered view, a (k, 3) array of the
    visible observation colors (k may be 0). Raises NoObservations when
    every view is empty. The result is clamped to [0, 1].
    """
    n = len(observations_by_view)
    if n == 0 or all(np.asarray(o).size == 0 for o in observations_by_view):
        raise NoObservations("track has no visible observation")
    loss_d = HuberLoss(params.huber_scale_data)
    loss_t = HuberLoss(params.huber_scale_temporal)
    out = np.empty((n, 3))
    for c in range(3):
        obs = [np.asarray(o, dtype=np.float64).reshape(-1, 3)[:, c]
               for o in observations_by_view]
        out[:, c] = _solve_chain_channel(
            obs, params.lam, loss_d, loss_t, params.max_iters, params.grad_tol
        )
    return np.clip(out, 0.0, 1.0)


def solve_profiles_batch(
    lengths: np.ndarray,
    obs_track: np.ndarray,
    obs_local: np.ndarray,
    obs_color: np.ndarray,
    params: ProfileParams = ProfileParams(),
):
    """Solve all tracks' profiles at once (vectorized IRLS + Thomas solves).

    Matches solve_profile per track. Tracks without any observation get NaN
    profiles (callers decide how to handle them). Returns (T, n_max, 3),
    padded rows are NaN.
    """
    t_count = lengths.size
    n_max = int(lengths.max()) if t_count else 0
    loss_d = HuberLoss(params.huber_scale_data)
    loss_t = HuberLoss(params.huber_scale_temporal)
    lam = params.lam

    active = np.arange(n_max)[None, :] < lengths[:, None]  # (T, n_max)
    link = np.arange(n_max - 1)[None, :] < (lengths - 1)[:, None] if n_max > 1 else None
    flat_obs = obs_track * n_max + obs_local
    out = np.full((t_count, n_max, 3), np.nan)

    has_obs = np.zeros((t_count, n_max), dtype=bool)
    if flat_obs.size:
        has_obs.ravel()[flat_obs] = True
    track_has_obs = has_obs.any(axis=1)
    # Tracks with no observation anywhere stay NaN; keep their rows out of
    # the linear algebra entirely.
    active &= track_has_obs[:, None]
    if link is not None:
        link = link & track_has_obs[:, None]

    for c in range(3):
        x = obs_color[:, c]
        # Initialize with per-view means, empty views filled from the
        # nearest observed view of the same track.
        sums = np.bincount(flat_obs, weights=x, minlength=t_count * n_max)
        cnts = np.bincount(flat_obs, minlength=t_count * n_max)
        with np.errstate(invalid="ignore", divide="ignore"):
            y = (sums / cnts).reshape(t_count, n_max)
        y = _fill_nearest(y, has_obs, active)

        for _ in range(params.max_iters):
            r = x - y.ravel()[flat_obs]
            w = huber_weight(loss_d, r)
            diag = np.bincount(flat_obs, weights=w, minlength=t_count * n_max)
            rhs = np.bincount(flat_obs, weights=w * x, minlength=t_count * n_max)
            diag = diag.reshape(t_count, n_max)
            rhs = rhs.reshape(t_count, n_max)
            if n_max > 1:
                dt = np.diff(y, axis=1)
                wt = lam * huber_weight(loss_t, dt)
                wt = np.where(link, wt, 0.0)
                diag[:, :-1] += wt
                diag[:, 1:] += wt
                off = -wt
            else:
                off = None
            # Inactive/padded cells: identity rows keep them harmless.
            diag = np.where(active, diag, 1.0)
            rhs = np.where(active, rhs, 0.0)
            y_new = _thomas_batch(diag, off, rhs)
            delta = np.nanmax(np.abs(np.where(active, y_new - y, 0.0)))
            y = np.where(active, y_new, y)
            if delta < 1e-14:
                break
        out[:, :, c] = np.where(active, np.clip(y, 0.0, 1.0), np.nan)

    out[~track_has_obs] = np.nan
    return out


def _fill_nearest(y, has_obs, active):
    """Fill NaN views from the nearest observed view of the same track."""
    t_count, n_max = y.shape
    out = y.copy()
    for t in range(t_count):
        good = np.flatnonzero(has_obs[t])
        if good.size == 0:
            out[t] = 0.0
            continue
        bad = np.flatnonzero(active[t] & ~has_obs[t])
        if bad.size:
            nearest = good[np.argmin(np.abs(bad[:, None] - good[None, :]), axis=1)]
            out[t, bad] = y[t, nearest]
    return out


def _thomas_batch(diag, off, rhs):
    """Vectorized Thomas algorithm for symmetric tridiagonal systems.

    diag (T, n), off (T, n-1) or None, rhs (T, n). Padded cells must carry
    diag 1, off 0.
    """
    t_count, n = diag.shape
    if n == 1 or off is None:
        return rhs / diag
    cp = np.zeros((t_count, n - 1))
    dp = np.zeros((t_count, n))
    cp[:, 0] = off[:, 0] / diag[:, 0]
    dp[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        denom = diag[:, i] - off[:, i - 1] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = off[:, i] / denom
        dp[:, i] = (rhs[:, i] - off[:, i - 1] * dp[:, i - 1]) / denom
    y = np.zeros((t_count, n))
    y[:, -1] = dp[:, -1]
    for i in range(n - 2, -1, -1):
        y[:, i] = dp[:, i] - cp[:, i] * y[:, i + 1]
    return y
