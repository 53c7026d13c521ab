"""Joint optimization of the per-view depthmaps.

The objective couples, over all M views,

* a data term: the spline-interpolated matching cost at each pixel's
  disparity,
* a spatial term: Huber penalties on 4-neighbor disparity differences,
  weighted by ``alpha``, and
* a temporal term: Huber penalties between a view's disparity and the
  z-buffered projections of nearby views' depthmaps, weighted by
  ``k1 * max(1 - |j'-j| / k2, 0)`` and counted only where a projection
  landed.

Each depthmap is first initialized independently (winner-take-all plus a
spatial-only continuous refinement) and then revisited in Gauss-Seidel
coordinate-descent sweeps. The per-frame inner solver takes iteratively
reweighted Gauss-Newton steps with a backtracking line search whose
acceptance test evaluates the frame's full share of the joint energy
(including the terms where this frame's depthmap is rendered into its
neighbors), so the total energy never increases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .cost_volume import CostVolume, PlaneSet, SplineCost, fit_spline
from .errors import DimensionMismatch
from .geometry import Camera, Depthmap, reproject_disparity


@dataclass(frozen=True)
class HuberLoss:
    """Convex robust penalty: quadratic within |x| <= scale, linear beyond."""

    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("Huber scale must be positive")


def huber(loss: HuberLoss, x):
    """Value and derivative of the Huber penalty, elementwise."""
    s = loss.scale
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax <= s
    value = np.where(quad, x * x / (2.0 * s), ax - 0.5 * s)
    deriv = np.where(quad, x / s, np.sign(x))
    return value, deriv

def huber_weight(loss: HuberLoss, x):
    """Majorizer weight rho'(x)/x (continuous at 0), used by the IRLS steps."""
    s = loss.scale
    ax = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(ax <= s, 1.0 / s, 1.0 / np.maximum(ax, 1e-300))


@dataclass(frozen=True)
class DepthSolverParams:
    alpha: float = 0.4  # spatial weight
    k1: float = 30.0  # temporal weight scale
    k2: float = 8.0  # temporal neighborhood radius (views)
    huber_scale: float = 0.1  # disparity units, shared by spatial/temporal
    max_outer_iters: int = 2  # coordinate-descent sweeps
    tol: float = 1e-6  # relative per-frame descent tolerance
    max_inner_iters: int = 40
    curvature_floor: float = 1e-3  # lower bound on the data-term curvature

    def __post_init__(self):
        if min(self.alpha, self.k1, self.k2, self.huber_scale, self.tol) <= 0:
            raise ValueError("solver parameters must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("need at least one outer iteration")


def temporal_weight(j: int, jp: int, params: DepthSolverParams) -> float:
    """Pairwise coupling weight k1 * max(1 - |j'-j|/k2, 0)."""
    if j == jp:
        raise ValueError("temporal weight is defined for distinct views")
    return params.k1 * max(1.0 - abs(jp - j) / params.k2, 0.0)


def _cameras(views) -> list:
    if hasattr(views, "views"):
        return list(views.views)
    return list(views)


def _spatial_energy(d: np.ndarray, loss: HuberLoss, alpha: float) -> float:
    vh, _ = huber(loss, d[:, 1:] - d[:, :-1])
    vv, _ = huber(loss, d[1:, :] - d[:-1, :])
    return alpha * (float(vh.sum()) + float(vv.sum()))


@dataclass
class _ForwardLink:
    """A neighbor's depthmap already rendered into the frame being solved."""

    beta: float
    values: np.ndarray
    valid: np.ndarray


@dataclass
class _ReverseLink:
    """The frame being solved, to be rendered into a fixed neighbor."""

    beta: float
    other_values: np.ndarray
    other_planes: PlaneSet
    other_cam: Camera
    own_cam: Camera
    own_planes: PlaneSet


def _frame_energy(d, spline, loss, alpha, fwd_links, rev_links) -> float:
    value, _ = spline.evaluate(d)
    e = float(value.sum()) + _spatial_energy(d, loss, alpha)
    for link in fwd_links:
        r = d[link.valid] - link.values[link.valid]
        e += link.beta * float(huber(loss, r)[0].sum())
    for link in rev_links:
        proj = reproject_disparity(
            d, link.own_planes, link.own_cam, link.other_cam, link.other_planes
        )
        r = link.other_values[proj.valid] - proj.values[proj.valid]
        e += link.beta * float(huber(loss, r)[0].sum())
    return e


def _solve_frame(
    d0: np.ndarray,
    spline: SplineCost,
    params: DepthSolverParams,
    fwd_links: Sequence[_ForwardLink] = (),
    rev_links: Sequence[_ReverseLink] = (),
):
    """Minimize one frame's share of the joint energy, monotonically.

    Returns (disparity raster, final energy). Every accepted step decreases
    the frame energy, and iterates stay clamped to [0, L-1].
    """
    loss = HuberLoss(params.huber_scale)
    alpha = params.alpha
    lmax = spline.count - 1.0
    h, w = d0.shape
    n = d0.size
    idx = np.arange(n).reshape(h, w)
    ph, qh = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    pv, qv = idx[:-1, :].ravel(), idx[1:, :].ravel()
    diag_idx = np.arange(n)

    d = np.clip(d0.astype(np.float64), 0.0, lmax)
    e = _frame_energy(d, spline, loss, alpha, fwd_links, rev_links)

    for _ in range(params.max_inner_iters):
        g = np.zeros(n)
        diag = np.zeros(n)

        _, dval = spline.evaluate(d)
        g += dval.ravel()
        diag += np.maximum(
            spline.second_derivative(d).ravel(), params.curvature_floor
        )

        rh = (d[:, 1:] - d[:, :-1]).ravel()
        rv = (d[1:, :] - d[:-1, :]).ravel()
        gh = alpha * huber(loss, rh)[1]
        gv = alpha * huber(loss, rv)[1]
        wh = alpha * huber_weight(loss, rh)
        wv = alpha * huber_weight(loss, rv)
        np.add.at(g, qh, gh)
        np.add.at(g, ph, -gh)
        np.add.at(g, qv, gv)
        np.add.at(g, pv, -gv)
        np.add.at(diag, qh, wh)
        np.add.at(diag, ph, wh)
        np.add.at(diag, qv, wv)
        np.add.at(diag, pv, wv)

        flat = d.ravel()
        for link in fwd_links:
            m = link.valid.ravel()
            r = flat - link.values.ravel()
            g += link.beta * np.where(m, huber(loss, r)[1], 0.0)
            diag += link.beta * np.where(m, huber_weight(loss, r), 0.0)

        rows = np.concatenate([diag_idx, ph, qh, pv, qv])
        cols = np.concatenate([diag_idx, qh, ph, qv, pv])
        vals = np.concatenate([diag, -wh, -wh, -wv, -wv])
        normal = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        delta = spsolve(normal, -g).reshape(h, w)

        step = 1.0
        accepted = None
        for _ in range(12):
            cand = np.clip(d + step * delta, 0.0, lmax)
            ec = _frame_energy(cand, spline, loss, alpha, fwd_links, rev_links)
            if ec < e:
                accepted = (cand, ec)
                break
            step *= 0.5
        if accepted is None:
            break
        d, e_new = accepted
        gain = e - e_new
        e = e_new
        if gain <= params.tol * (abs(e) + 1.0):
            break
    return d, e


def init_depthmap(
    volume: CostVolume,
    params: DepthSolverParams,
    spline: Optional[SplineCost] = None,
) -> Depthmap:
    """Per-frame initialization: winner-take-all followed by a continuous
    refinement of the data + spatial energy (no temporal term)."""
    if spline is None:
        spline = fit_spline(volume)
    wta = np.argmin(volume.costs, axis=2).astype(np.float64)
    d, _ = _solve_frame(wta, spline, params)
    return Depthmap(values=d, plane_set=volume.plane_set)


def optimize_joint(
    depthmaps: Sequence[Depthmap],
    splines: Sequence[SplineCost],
    views,
    params: DepthSolverParams,
) -> list[Depthmap]:
    """Coordinate descent over frames: re-solve each depthmap in turn while
    the others are held fixed, refreshing neighbor projections per visit."""
    cams = _cameras(views)
    m = len(depthmaps)
    if len(splines) != m or len(cams) != m:
        raise DimensionMismatch("depthmaps, splines and views must align")
    planes = [dm.plane_set for dm in depthmaps]
    vals = [dm.values.copy() for dm in depthmaps]

    for _ in range(params.max_outer_iters):
        for j in range(m):
            fwd, rev = [], []
            for jp in range(m):
                if jp == j:
                    continue
                beta = temporal_weight(j, jp, params)
                if beta <= 0.0:
                    continue
                proj = reproject_disparity(
                    vals[jp], planes[jp], cams[jp], cams[j], planes[j]
                )
                fwd.append(_ForwardLink(beta, proj.values, proj.valid))
                rev.append(
                    _ReverseLink(
                        beta=temporal_weight(jp, j, params),
                        other_values=vals[jp],
                        other_planes=planes[jp],
                        other_cam=cams[jp],
                        own_cam=cams[j],
                        own_planes=planes[j],
                    )
                )
            vals[j], _ = _solve_frame(vals[j], splines[j], params, fwd, rev)
    return [Depthmap(values=v, plane_set=p) for v, p in zip(vals, planes)]


# --- whole-sequence energy (verification surface) ---


def energy(
    depthmaps: Sequence[Depthmap],
    splines: Sequence[SplineCost],
    views,
    params: DepthSolverParams,
) -> float:
    """Total joint energy of a depthmap sequence."""
    return _energy_impl(depthmaps, splines, views, params, want_gradient=False)[0]


def energy_and_gradient(
    depthmaps: Sequence[Depthmap],
    splines: Sequence[SplineCost],
    views,
    params: DepthSolverParams,
):
    """Total energy plus its analytic gradient per depthmap.

    The temporal term's gradient flows both into the compared depthmap and,
    through the z-buffer winner and the disparity re-expression chain, back
    into the projected depthmap.
    """
    return _energy_impl(depthmaps, splines, views, params, want_gradient=True)


def _energy_impl(depthmaps, splines, views, params, want_gradient):
    cams = _cameras(views)
    m = len(depthmaps)
    if len(splines) != m or len(cams) != m:
        raise DimensionMismatch("depthmaps, splines and views must align")
    loss = HuberLoss(params.huber_scale)
    total = 0.0
    grads = [np.zeros_like(dm.values) for dm in depthmaps]

    for j in range(m):
        d = depthmaps[j].values
        value, dval = splines[j].evaluate(d)
        total += float(value.sum()) + _spatial_energy(d, loss, params.alpha)
        if want_gradient:
            grads[j] += dval
            rh = d[:, 1:] - d[:, :-1]
            rv = d[1:, :] - d[:-1, :]
            gh = params.alpha * huber(loss, rh)[1]
            gv = params.alpha * huber(loss, rv)[1]
            grads[j][:, 1:] += gh
            grads[j][:, :-1] -= gh
            grads[j][1:, :] += gv
            grads[j][:-1, :] -= gv

    for j in range(m):
        for jp in range(m):
            if jp == j:
                continue
            beta = temporal_weight(j, jp, params)
            if beta <= 0.0:
                continue
            proj = reproject_disparity(
                depthmaps[jp].values,
                depthmaps[jp].plane_set,
                cams[jp],
                cams[j],
                depthmaps[j].plane_set,
                with_jacobian=want_gradient,
            )
            r = depthmaps[j].values - proj.values
            vals, derivs = huber(loss, r)
            total += beta * float(vals[proj.valid].sum())
            if want_gradient:
                grads[j] += beta * np.where(proj.valid, derivs, 0.0)
                sel = proj.valid
                np.add.at(
                    grads[jp].ravel(),
                    proj.winner[sel],
                    -beta * derivs[sel] * proj.dvalue[sel],
                )
    if want_gradient:
        return total, grads
    return total, None
