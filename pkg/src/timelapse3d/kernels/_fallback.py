"""Numpy implementations of the hot kernels.

Semantics (shared with the compiled module):

* 3x3 matching windows must be fully interior and fully valid in both
  images of a pair, otherwise the pair contributes no sample at that pixel.
* NCC uses population statistics over the 9 window pixels; a window whose
  variance falls below ``var_eps`` in either image yields the neutral cost
  1.0 (still a sample, not a missing one).
* Costs are clamped to [0, 2].
* Medians use the lower-middle order statistic for even counts; missing
  samples are skipped; a row with no samples is itself missing; a pixel
  with no pairs at all gets cost 1.0 and pair count 0.
* The z-buffer keeps the strictly smallest depth; exact ties keep the
  earliest entry in array order.
"""

import numpy as np


def _box3(img: np.ndarray) -> np.ndarray:
    """3x3 window sums over the trailing two axes; border entries are 0."""
    h, w = img.shape[-2:]
    ii = np.zeros(img.shape[:-2] + (h + 1, w + 1), dtype=np.float64)
    np.cumsum(img, axis=-2, out=ii[..., 1:, 1:])
    np.cumsum(ii[..., 1:, 1:], axis=-1, out=ii[..., 1:, 1:])
    out = np.zeros(img.shape, dtype=np.float64)
    out[..., 1:-1, 1:-1] = (
        ii[..., 3:, 3:] - ii[..., :-3, 3:] - ii[..., 3:, :-3] + ii[..., :-3, :-3]
    )
    return out


def _lower_median(values: np.ndarray, axis: int) -> np.ndarray:
    """NaN-skipping median taking the lower-middle order statistic.

    Returns NaN where no finite value exists along the axis.
    """
    filled = np.sort(values, axis=axis)  # NaNs sort to the end
    count = np.sum(~np.isnan(values), axis=axis)
    idx = np.expand_dims(np.maximum(count - 1, 0) // 2, axis)
    med = np.take_along_axis(filled, idx, axis=axis)
    med = np.squeeze(med, axis=axis)
    return np.where(count > 0, med, np.nan)


def aggregate_plane(warped, valid, var_eps: float = 1e-8):
    """Aggregate pairwise NCC costs for one sweep plane.

    Parameters
    ----------
    warped : (n, H, W) float64
        Support images warped onto the view grid at this plane's depth.
    valid : (n, H, W) bool or uint8
        True where the warp sampled inside the source image.
    var_eps : float
        Window variance below which a pair's cost is the neutral 1.0.

    Returns
    -------
    cost : (H, W) float64 in [0, 2]
    pair_count : (H, W) int32, number of unordered pairs that contributed
    """
    warped = np.asarray(warped, dtype=np.float64)
    n, h, w = warped.shape
    ok = np.asarray(valid, dtype=np.float64)
    masked = warped * ok

    s1 = _box3(masked)
    s2 = _box3(masked * masked)
    cnt = _box3(ok)
    win_ok = cnt > 8.5  # all nine window samples valid (borders stay 0)
    mu = s1 / 9.0
    var = np.maximum(s2 / 9.0 - mu * mu, 0.0)

    ia, ib = np.triu_indices(n, k=1)
    n_pairs = ia.size
    pair_costs = np.full((n_pairs, h, w), np.nan)
    for k in range(n_pairs):
        a, b = ia[k], ib[k]
        cov = _box3(masked[a] * masked[b]) / 9.0 - mu[a] * mu[b]
        usable = win_ok[a] & win_ok[b]
        degenerate = (var[a] < var_eps) | (var[b] < var_eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            cost = 1.0 - cov / np.sqrt(var[a] * var[b])
        cost = np.where(degenerate, 1.0, np.clip(cost, 0.0, 2.0))
        pair_costs[k, usable] = cost[usable]

    pair_count = np.sum(~np.isnan(pair_costs), axis=0).astype(np.int32)

    # Median over partners within each row, then median over rows. Chunked
    # over pixels to bound the (n, n, chunk) scratch matrix.
    flat = pair_costs.reshape(n_pairs, h * w)
    cost = np.empty(h * w)
    chunk = max(1, 4_000_000 // (n * n))
    for s in range(0, h * w, chunk):
        e = min(s + chunk, h * w)
        mat = np.full((n, n, e - s), np.nan)
        mat[ia, ib] = flat[:, s:e]
        mat[ib, ia] = flat[:, s:e]
        inner = _lower_median(mat, axis=1)
        cost[s:e] = _lower_median(inner, axis=0)
    cost = np.where(pair_count.reshape(-1) > 0, cost, 1.0)
    return cost.reshape(h, w), pair_count


def zbuffer_scatter(ix, iy, depth, value, deriv, src_index, width, height):
    """Scatter samples onto a grid keeping the smallest depth per pixel.

    All input arrays share one length; ix/iy must already be integer pixel
    coordinates inside the grid. Returns (zbuf, value, deriv, winner)
    rasters of shape (height, width); empty pixels hold +inf depth and
    winner -1.
    """
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    value = np.asarray(value, dtype=np.float64)
    deriv = np.asarray(deriv, dtype=np.float64)
    src_index = np.asarray(src_index, dtype=np.int64)

    size = height * width
    zbuf = np.full(size, np.inf)
    val = np.zeros(size)
    dval = np.zeros(size)
    winner = np.full(size, -1, dtype=np.int64)

    n = ix.size
    if n:
        flat = iy * width + ix
        order = np.lexsort((np.arange(n), depth, flat))
        f_sorted = flat[order]
        first = np.ones(n, dtype=bool)
        first[1:] = f_sorted[1:] != f_sorted[:-1]
        sel = order[first]
        fsel = flat[sel]
        zbuf[fsel] = depth[sel]
        val[fsel] = value[sel]
        dval[fsel] = deriv[sel]
        winner[fsel] = src_index[sel]

    shape = (height, width)
    return (
        zbuf.reshape(shape),
        val.reshape(shape),
        dval.reshape(shape),
        winner.reshape(shape),
    )
