"""Raster sampling helpers shared by the matching, tracking and profile code."""

import numpy as np

#: Rec. 601 luma weights used for all grayscale conversion.
_LUMA = np.array([0.299, 0.587, 0.114])

#: Slack on in-frame tests so exact-edge projections survive fp roundoff.
EDGE_TOL = 1e-9


def grayscale(image: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0,1] -> (H, W) luma."""
    return image @ _LUMA


def bilinear_sample(raster: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear lookup with validity mask.

    Valid where (x, y) lies inside [0, W-1] x [0, H-1] (to fp tolerance);
    invalid entries return 0. ``raster`` may be (H, W) or (H, W, C).
    """
    h, w = raster.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    valid = (
        (x >= -EDGE_TOL)
        & (x <= w - 1.0 + EDGE_TOL)
        & (y >= -EDGE_TOL)
        & (y <= h - 1.0 + EDGE_TOL)
    )
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    out = _bilinear_clamped(raster, xs, ys)
    if raster.ndim == 3:
        out = np.where(valid[..., None], out, 0.0)
    else:
        out = np.where(valid, out, 0.0)
    return out, valid


def bilinear_sample_clamped(raster: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear lookup with edge extension (coordinates clamped into range)."""
    h, w = raster.shape[:2]
    xs = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    ys = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    return _bilinear_clamped(raster, xs, ys)


def _bilinear_clamped(raster, xs, ys):
    h, w = raster.shape[:2]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if raster.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (
        raster[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + raster[y0, x1] * fx * (1.0 - fy)
        + raster[y1, x0] * (1.0 - fx) * fy
        + raster[y1, x1] * fx * fy
    )
