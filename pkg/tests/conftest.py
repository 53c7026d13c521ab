"""Shared fixtures and independent oracles used across the test suite."""

import numpy as np
import pytest

from timelapse3d.geometry import Camera


def make_camera(
    fx=100.0,
    fy=100.0,
    cx=50.0,
    cy=50.0,
    rotation=None,
    center=(0.0, 0.0, 0.0),
    width=101,
    height=101,
) -> Camera:
    return Camera(
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        rotation=np.eye(3) if rotation is None else rotation,
        center=np.asarray(center, dtype=np.float64),
        width=width,
        height=height,
    )


def rotation_about(axis, angle_rad):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def lower_median(values) -> float:
    """Reference lower-middle-order-statistic median."""
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def brute_median_of_medians(matrix: np.ndarray) -> float:
    """Reference aggregation of a symmetric pairwise cost matrix.

    NaN entries are missing samples; the diagonal is ignored. Returns 1.0
    when no pair contributed.
    """
    n = matrix.shape[0]
    row_medians = []
    any_pair = False
    for a in range(n):
        vals = [
            matrix[a, b]
            for b in range(n)
            if b != a and not np.isnan(matrix[a, b])
        ]
        if vals:
            row_medians.append(lower_median(vals))
            any_pair = True
    if not any_pair:
        return 1.0
    return lower_median(row_medians)


def huber_value(x, s):
    ax = abs(x)
    return x * x / (2.0 * s) if ax <= s else ax - 0.5 * s


def chain_objective_scalar(y, obs_per_view, lam, s_d, s_t):
    """Reference scalar chain objective (data + temporal Huber terms)."""
    e = 0.0
    for j, obs in enumerate(obs_per_view):
        for x in obs:
            e += huber_value(x - y[j], s_d)
    for j in range(len(y) - 1):
        e += lam * huber_value(y[j + 1] - y[j], s_t)
    return e


def grid_search_chain(obs_per_view, lam, s_d, s_t, step=1e-3):
    """Exact minimizer of the 3-view chain objective over a value grid.

    Exhaustive over the grid via the chain's distributive structure:
    identical result to enumerating all grid triples, feasible at 1e-3.
    """
    assert len(obs_per_view) == 3
    grid = np.arange(0.0, 1.0 + step / 2, step)
    g = grid.size

    def data_cost(obs):
        if len(obs) == 0:
            return np.zeros(g)
        x = np.asarray(obs, dtype=np.float64)
        r = x[None, :] - grid[:, None]
        ax = np.abs(r)
        v = np.where(ax <= s_d, r * r / (2 * s_d), ax - 0.5 * s_d)
        return v.sum(axis=1)

    d0, d1, d2 = (data_cost(o) for o in obs_per_view)
    diff = grid[None, :] - grid[:, None]
    ad = np.abs(diff)
    pen = lam * np.where(ad <= s_t, diff * diff / (2 * s_t), ad - 0.5 * s_t)

    # best y0 for each y1, then best y2 for each y1
    c0 = (d0[:, None] + pen).min(axis=0)
    best0 = (d0[:, None] + pen).argmin(axis=0)
    c2 = (d2[None, :] + pen.T).min(axis=1)
    best2 = (d2[None, :] + pen.T).argmin(axis=1)
    total = d1 + c0 + c2
    k1 = int(total.argmin())
    return np.array([grid[best0[k1]], grid[k1], grid[best2[k1]]]), float(total[k1])


def random_chain_instance(rng, n_views=3, max_per_view=3):
    """Random per-view scalar observations with a unique chain minimizer.

    An even total observation count creates flat valleys (the temporal
    weight dominates, making the problem a weighted median over all
    observations, which is non-unique for even counts), so totals are
    forced odd.
    """
    counts = rng.integers(0, max_per_view + 1, n_views)
    if counts.sum() == 0:
        counts[int(rng.integers(0, n_views))] = 1
    if counts.sum() % 2 == 0:
        counts[int(rng.integers(0, n_views))] += 1
    return [rng.uniform(0, 1, int(k)).tolist() for k in counts]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
