"""Pinhole cameras, depthmap reprojection, camera paths and photo selection.

Conventions used throughout the package:

* World frame: right handed, arbitrary origin.
* Camera frame: x right, y down, z forward (optical axis). A camera holds a
  world-to-camera rotation ``R`` and a world-space center ``C`` so that
  ``x_cam = R @ (X - C)``.
* Pixels: ``u`` right, ``v`` down, origin at the center of the top-left
  pixel. ``u = fx * x/z + cx``, ``v = fy * y/z + cy``. "Depth" always means
  camera-frame ``z``.
* Disparity: continuous plane index into a far-to-near sweep plane set,
  uniform in inverse depth (index 0 = farthest plane).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import (
    BehindCamera,
    DimensionMismatch,
    EmptySelection,
    NonPositiveDepth,
    UnknownPathType,
)
from .kernels import zbuffer_scatter

if TYPE_CHECKING:
    from .cost_volume import PlaneSet

_ORTHO_TOL = 1e-9


def _as_array(x, shape, name: str) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.shape != shape:
        raise DimensionMismatch(f"{name} must have shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics plus a rigid world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3,3) world-to-camera, orthonormal, det +1
    center: np.ndarray  # (3,) camera center in world units
    width: int
    height: int

    def __post_init__(self):
        R = _as_array(self.rotation, (3, 3), "rotation")
        C = _as_array(self.center, (3,), "center")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err >= _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:g})")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation must have determinant +1")
        R.flags.writeable = False
        C.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", C)

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.rotation[2]

    def scaled(self, factor: float) -> "Camera":
        """Same pose and field of view at a resampled pixel grid.

        Pixel centers follow the usual half-pixel convention, so the
        principal point maps as ``c' = (c + 0.5) * factor - 0.5``.
        """
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        return Camera(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            rotation=self.rotation,
            center=self.center,
            width=w,
            height=h,
        )

    def pixel_directions(self, pixels: np.ndarray) -> np.ndarray:
        """Camera-frame ray directions (unit z component) for (N,2) pixels."""
        p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d = np.empty((p.shape[0], 3))
        d[:, 0] = (p[:, 0] - self.cx) / self.fx
        d[:, 1] = (p[:, 1] - self.cy) / self.fy
        d[:, 2] = 1.0
        return d

    def grid_directions(self) -> np.ndarray:
        """Camera-frame ray directions for the full pixel grid, (H, W, 3)."""
        cached = self.__dict__.get("_grid_dirs")
        if cached is not None:
            return cached
        u = (np.arange(self.width) - self.cx) / self.fx
        v = (np.arange(self.height) - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[:, :, 0] = u[None, :]
        d[:, :, 1] = v[:, None]
        d[:, :, 2] = 1.0
        d.flags.writeable = False
        object.__setattr__(self, "_grid_dirs", d)
        return d

    def world_rays(self) -> np.ndarray:
        """World-frame ray directions (unit camera-frame z) for the grid.

        Shape (H*W, 3); a grid point at depth z sits at center + z * ray.
        """
        cached = self.__dict__.get("_world_rays")
        if cached is not None:
            return cached
        rays = self.grid_directions().reshape(-1, 3) @ self.rotation
        rays.flags.writeable = False
        object.__setattr__(self, "_world_rays", rays)
        return rays


@dataclass(frozen=True)
class PosedImage:
    """An input photo: RGB raster in [0,1], its camera and its timestamp."""

    camera: Camera
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    timestamp: float

    def __post_init__(self):
        img = np.array(self.image, dtype=np.float64)
        if img.shape != (self.camera.height, self.camera.width, 3):
            raise DimensionMismatch(
                f"image shape {img.shape} does not match camera "
                f"({self.camera.height}, {self.camera.width}, 3)"
            )
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("image channel values must lie in [0, 1]")
        img.flags.writeable = False
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class ViewSequence:
    """The M output views, equally spaced along the path and in time."""

    views: tuple
    times: np.ndarray  # (M,) strictly increasing

    def __post_init__(self):
        views = tuple(self.views)
        t = np.array(self.times, dtype=np.float64)
        if len(views) < 2:
            raise ValueError("a view sequence needs at least two views")
        if t.shape != (len(views),):
            raise DimensionMismatch("times length must match view count")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class Depthmap:
    """Continuous disparity raster in plane-index units (0 = farthest)."""

    values: np.ndarray  # (H, W) float64 in [0, L-1]
    plane_set: "PlaneSet"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionMismatch("depthmap values must be 2D")
        if not np.all(np.isfinite(v)):
            raise ValueError("depthmap values must be finite")
        lo, hi = v.min(), v.max()
        if lo < 0.0 or hi > self.plane_set.count - 1:
            raise ValueError(
                f"disparity out of [0, {self.plane_set.count - 1}]: "
                f"min {lo:g}, max {hi:g}"
            )
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ReprojectedDepthmap:
    """A depthmap rendered into another view; holes are marked invalid.

    ``winner`` and ``dvalue`` support the energy gradient: per target pixel,
    the flat source-pixel index that won the z-buffer and the derivative of
    the projected disparity with respect to that source pixel's disparity.
    """

    values: np.ndarray  # (H, W) disparity in target plane-index units
    valid: np.ndarray  # (H, W) bool
    winner: Optional[np.ndarray] = None  # (H, W) int64, -1 where invalid
    dvalue: Optional[np.ndarray] = None  # (H, W) float64

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise DimensionMismatch("values and valid must share a shape")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError("projected values must be finite where valid")


@dataclass(frozen=True)
class SparsePoints:
    """Sparse 3D scene points with the indices of the cameras seeing them."""

    positions: np.ndarray  # (P, 3)
    observers: tuple  # P int arrays of photo indices

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DimensionMismatch("positions must have shape (P, 3)")
        obs = tuple(np.asarray(o, dtype=np.int64) for o in self.observers)
        if len(obs) != pos.shape[0]:
            raise DimensionMismatch("one observer list per point required")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "observers", obs)

    def __len__(self) -> int:
        return self.positions.shape[0]


# --- projection ---


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, depth).

    Raises BehindCamera when the camera-frame z is <= 0.
    """
    p = _as_array(point, (3,), "point")
    xc = camera.rotation @ (p - camera.center)
    z = xc[2]
    if z <= 0.0:
        raise BehindCamera(f"point has non-positive depth {z:g}")
    pixel = np.array(
        [camera.fx * xc[0] / z + camera.cx, camera.fy * xc[1] / z + camera.cy]
    )
    return pixel, float(z)


def project_points(camera: Camera, points: np.ndarray):
    """Vectorized projection of (N,3) world points.

    Returns (pixels (N,2), depths (N,)); entries with depth <= 0 hold
    unusable pixel values and must be masked by the caller.
    """
    pts = np.asarray(points, dtype=np.float64)
    xc = (pts - camera.center) @ camera.rotation.T
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * xc[:, 0] / z + camera.cx
        v = camera.fy * xc[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1), z


def backproject(camera: Camera, pixel, depth: float) -> np.ndarray:
    """World point at the given pixel and camera-frame depth.

    Inverse of project: project(camera, backproject(camera, p, z)) == (p, z).
    """
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth must be positive, got {depth:g}")
    px = _as_array(np.asarray(pixel, dtype=np.float64), (2,), "pixel")
    d = np.array(
        [(px[0] - camera.cx) / camera.fx, (px[1] - camera.cy) / camera.fy, 1.0]
    )
    return camera.center + depth * (camera.rotation.T @ d)


def backproject_points(camera: Camera, pixels: np.ndarray, depths: np.ndarray):
    """Vectorized backprojection of (N,2) pixels at (N,) positive depths."""
    d = camera.pixel_directions(pixels)
    return camera.center + np.asarray(depths)[:, None] * (d @ camera.rotation)


# --- depthmap reprojection ---


def reproject_depthmap(
    source: Depthmap,
    source_view: Camera,
    target_view: Camera,
    target_planes: Optional["PlaneSet"] = None,
    with_jacobian: bool = False,
) -> ReprojectedDepthmap:
    """Render a depthmap into another view with a single-pixel z-buffer splat.

    Each source pixel's 3D point is projected into the target view and
    written to the nearest integer pixel; on collisions the smallest
    target-frame depth wins (ties keep the earlier source pixel). The output
    disparity is expressed in ``target_planes`` index units (defaults to the
    source's plane set). Pixels nothing landed on are marked invalid.
    """
    planes_t = target_planes if target_planes is not None else source.plane_set
    return reproject_disparity(
        source.values,
        source.plane_set,
        source_view,
        target_view,
        planes_t,
        with_jacobian=with_jacobian,
    )


def reproject_disparity(
    values: np.ndarray,
    source_planes: "PlaneSet",
    source_view: Camera,
    target_view: Camera,
    target_planes: "PlaneSet",
    with_jacobian: bool = False,
) -> ReprojectedDepthmap:
    """Array-level reprojection core; see reproject_depthmap."""
    h, w = values.shape
    if (w, h) != (source_view.width, source_view.height):
        raise DimensionMismatch("depthmap dimensions must match the source view")

    disp = values.ravel()
    z_src = source_planes.depth_of_index(disp)
    rays = source_view.world_rays()
    pts = source_view.center + z_src[:, None] * rays

    pixels, z_tgt = project_points(target_view, pts)
    ok = z_tgt > 0.0
    ix = np.full(disp.shape, -1, dtype=np.int64)
    iy = np.full(disp.shape, -1, dtype=np.int64)
    ix[ok] = np.rint(pixels[ok, 0]).astype(np.int64)
    iy[ok] = np.rint(pixels[ok, 1]).astype(np.int64)
    ok &= (ix >= 0) & (ix < target_view.width) & (iy >= 0) & (iy < target_view.height)

    value = np.zeros_like(disp)
    value[ok] = target_planes.index_of_depth(z_tgt[ok])

    if with_jacobian:
        # d(target index)/d(source index) through the fixed landing pixel:
        # source index -> source z -> target z (linear along the ray) ->
        # target index.
        dz_s = source_planes.depth_derivative_of_index(disp)
        gamma = rays @ target_view.rotation[2]
        didx_t = np.zeros_like(disp)
        didx_t[ok] = target_planes.index_derivative_of_depth(z_tgt[ok])
        deriv = dz_s * gamma * didx_t
    else:
        deriv = np.zeros_like(disp)

    zbuf, val, dval, winner = zbuffer_scatter(
        ix[ok],
        iy[ok],
        z_tgt[ok],
        value[ok],
        deriv[ok],
        np.flatnonzero(ok),
        target_view.width,
        target_view.height,
    )
    valid = winner >= 0
    return ReprojectedDepthmap(
        values=val,
        valid=valid,
        winner=winner if with_jacobian else None,
        dvalue=dval if with_jacobian else None,
    )


def render_zbuffer(
    source: Depthmap, source_view: Camera, target_view: Camera
) -> np.ndarray:
    """Target-frame depth buffer of a depthmap seen from another camera.

    Returns an (H, W) float64 raster of camera-frame z; +inf where nothing
    landed.
    """
    h, w = source.values.shape
    if (w, h) != (source_view.width, source_view.height):
        raise DimensionMismatch("depthmap dimensions must match the source view")
    disp = source.values.ravel()
    z_src = source.plane_set.depth_of_index(disp)
    pts = source_view.center + z_src[:, None] * source_view.world_rays()
    pixels, z_tgt = project_points(target_view, pts)
    ok = z_tgt > 0.0
    ix = np.full(disp.shape, -1, dtype=np.int64)
    iy = np.full(disp.shape, -1, dtype=np.int64)
    ix[ok] = np.rint(pixels[ok, 0]).astype(np.int64)
    iy[ok] = np.rint(pixels[ok, 1]).astype(np.int64)
    ok &= (ix >= 0) & (ix < target_view.width) & (iy >= 0) & (iy < target_view.height)
    zeros = np.zeros(int(ok.sum()))
    zbuf, _, _, _ = zbuffer_scatter(
        ix[ok], iy[ok], z_tgt[ok], zeros, zeros, np.flatnonzero(ok),
        target_view.width, target_view.height,
    )
    return zbuf


# --- camera paths ---


@dataclass(frozen=True)
class StaticPath:
    """Degenerate path: every view equals the reference camera."""


@dataclass(frozen=True)
class OrbitPath:
    """Rotate the camera rig about a vertical axis through a pivot point."""

    pivot: np.ndarray  # (3,) world point
    angle_deg: float  # total swept angle

    def __post_init__(self):
        object.__setattr__(
            self, "pivot", _as_array(self.pivot, (3,), "pivot")
        )


@dataclass(frozen=True)
class PushPath:
    """Translate the camera along its optical axis (negative = pull)."""

    distance: float


def parse_path_spec(spec: dict):
    """Build a path object from a config dict ({"type": ..., ...})."""
    kind = spec.get("type")
    if kind == "static":
        return StaticPath()
    if kind == "orbit":
        return OrbitPath(pivot=np.asarray(spec["pivot"], dtype=np.float64),
                         angle_deg=float(spec["angle_deg"]))
    if kind in ("push", "pull"):
        d = float(spec["distance"])
        return PushPath(distance=-d if kind == "pull" else d)
    raise UnknownPathType(f"unknown camera path type: {kind!r}")


def _axis_angle_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    k = np.array(
        [[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def generate_camera_path(
    reference: Camera, spec, count: int, t_range: tuple[float, float]
) -> ViewSequence:
    """Equally spaced views along a declared motion path, with linear times.

    View 0 is the reference camera; view k interpolates the motion at
    fraction k/(count-1). Times are exactly t_min + k*(t_max-t_min)/(count-1).
    """
    if count < 2:
        raise ValueError("need at least two output views")
    t_min, t_max = float(t_range[0]), float(t_range[1])
    times = t_min + np.arange(count) * ((t_max - t_min) / (count - 1))

    views = []
    for k in range(count):
        f = k / (count - 1)
        if isinstance(spec, StaticPath):
            views.append(reference)
        elif isinstance(spec, OrbitPath):
            # Orbit axis: world-space "up" of the reference camera (y points
            # down in the camera frame) through the pivot.
            up = -reference.rotation[1]
            rot = _axis_angle_rotation(up, math.radians(spec.angle_deg) * f)
            center = spec.pivot + rot @ (reference.center - spec.pivot)
            views.append(
                Camera(
                    fx=reference.fx,
                    fy=reference.fy,
                    cx=reference.cx,
                    cy=reference.cy,
                    rotation=reference.rotation @ rot.T,
                    center=center,
                    width=reference.width,
                    height=reference.height,
                )
            )
        elif isinstance(spec, PushPath):
            center = reference.center + f * spec.distance * reference.forward
            views.append(
                Camera(
                    fx=reference.fx,
                    fy=reference.fy,
                    cx=reference.cx,
                    cy=reference.cy,
                    rotation=reference.rotation,
                    center=center,
                    width=reference.width,
                    height=reference.height,
                )
            )
        else:
            raise UnknownPathType(f"unknown camera path spec: {type(spec).__name__}")
    return ViewSequence(views=tuple(views), times=times)


# --- photo selection ---


def select_image_indices(
    cameras: Sequence[Camera],
    timestamps: Sequence[float],
    reference: Camera,
    scene_scale: float,
    max_axis_angle_deg: float = 15.0,
    max_center_distance_frac: float = 0.1,
) -> np.ndarray:
    """Indices of photos shot close to the reference, sorted by timestamp.

    A photo passes when the angle between its optical axis and the
    reference's is at most ``max_axis_angle_deg`` and its center lies within
    ``max_center_distance_frac * scene_scale`` of the reference center.
    """
    if scene_scale <= 0:
        raise ValueError("scene_scale must be positive")
    cos_max = math.cos(math.radians(max_axis_angle_deg))
    max_dist = max_center_distance_frac * scene_scale
    kept = []
    for i, cam in enumerate(cameras):
        if float(cam.forward @ reference.forward) < cos_max - 1e-12:
            continue
        if np.linalg.norm(cam.center - reference.center) > max_dist + 1e-12:
            continue
        kept.append(i)
    if not kept:
        raise EmptySelection("no photo passed the selection criteria")
    kept.sort(key=lambda i: (timestamps[i], i))
    return np.array(kept, dtype=np.int64)


def select_images(
    photos: Sequence[PosedImage],
    reference: Camera,
    scene_scale: float,
    max_axis_angle_deg: float = 15.0,
    max_center_distance_frac: float = 0.1,
) -> list[PosedImage]:
    """select_image_indices applied to posed images, returning the photos."""
    idx = select_image_indices(
        [p.camera for p in photos],
        [p.timestamp for p in photos],
        reference,
        scene_scale,
        max_axis_angle_deg,
        max_center_distance_frac,
    )
    return [photos[i] for i in idx]
