"""Backend cross-checks: the compiled and numpy kernels must agree."""

import numpy as np
import pytest

from timelapse3d.kernels import BACKEND, _fallback

try:
    from timelapse3d.kernels import _native
except ImportError:
    _native = None

needs_native = pytest.mark.skipif(_native is None, reason="extension not built")


class TestZbufferScatter:
    def test_min_depth_wins(self):
        ix = np.array([3, 3, 3])
        iy = np.array([2, 2, 2])
        depth = np.array([8.0, 5.0, 6.0])
        value = np.array([1.0, 2.0, 3.0])
        deriv = np.array([0.1, 0.2, 0.3])
        src = np.array([10, 11, 12])
        zbuf, val, dval, win = _fallback.zbuffer_scatter(
            ix, iy, depth, value, deriv, src, 5, 4
        )
        assert zbuf[2, 3] == 5.0
        assert val[2, 3] == 2.0
        assert dval[2, 3] == 0.2
        assert win[2, 3] == 11

    def test_tie_keeps_earliest(self):
        ix = np.array([0, 0])
        iy = np.array([0, 0])
        depth = np.array([5.0, 5.0])
        zbuf, val, _, win = _fallback.zbuffer_scatter(
            ix, iy, depth, np.array([1.0, 2.0]), np.zeros(2), np.array([7, 8]), 1, 1
        )
        assert val[0, 0] == 1.0 and win[0, 0] == 7

    def test_holes(self):
        zbuf, val, dval, win = _fallback.zbuffer_scatter(
            np.array([1]), np.array([1]), np.array([2.0]), np.array([9.0]),
            np.array([0.0]), np.array([0]), 3, 3,
        )
        assert np.isinf(zbuf[0, 0]) and win[0, 0] == -1
        assert zbuf[1, 1] == 2.0

    @needs_native
    def test_backends_agree(self, rng):
        n = 5000
        ix = rng.integers(0, 40, n)
        iy = rng.integers(0, 30, n)
        depth = rng.choice([1.0, 2.0, 3.0, 4.0], n)  # plenty of exact ties
        value = rng.normal(size=n)
        deriv = rng.normal(size=n)
        src = np.arange(n)
        a = _fallback.zbuffer_scatter(ix, iy, depth, value, deriv, src, 40, 30)
        b = _native.zbuffer_scatter(ix, iy, depth, value, deriv, src, 40, 30)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


class TestAggregatePlane:
    @needs_native
    def test_backends_agree(self, rng):
        for _ in range(4):
            n = int(rng.integers(2, 9))
            warped = rng.uniform(0, 1, (n, 10, 13))
            valid = rng.uniform(size=(n, 10, 13)) > 0.15
            c1, k1 = _fallback.aggregate_plane(warped, valid)
            c2, k2 = _native.aggregate_plane(warped, valid)
            assert np.array_equal(k1, k2)
            assert np.abs(c1 - c2).max() < 1e-9

    def test_selected_backend_exists(self):
        assert BACKEND in ("native", "fallback")
