"""Procedural test scenes with exact ground truth.

The scene is a tilted, infinitely extended textured background plane plus an
optional axis-aligned textured box that pops into existence at a chosen
fraction of the time span (geometry change). Photos are rendered from
jittered copies of a base camera at evenly spaced timestamps, then
perturbed by per-photo gain/bias and occasional opaque outlier patches.
Ground-truth images and depth can be rendered for any camera at any time,
and sparse surface points with physically consistent observer lists stand
in for a structure-from-motion reconstruction.

Everything is driven by a single integer seed; a fixed seed yields
byte-identical datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidSpec
from .geometry import Camera, PosedImage, SparsePoints, project_points
from .io import Manifest, PhotoRecord, _camera_to_dict, camera_from_dict

# Texture octaves: (lattice cell size in world units, amplitude).
_PLANE_OCTAVES = ((1.8, 0.16), (0.6, 0.10), (0.22, 0.05), (0.1, 0.05))
_BOX_OCTAVES = ((0.5, 0.18), (0.16, 0.08), (0.07, 0.045))


def default_camera(width: int = 160, height: int = 120, focal: float = 250.0) -> Camera:
    return Camera(
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        rotation=np.eye(3),
        center=np.zeros(3),
        width=width,
        height=height,
    )


@dataclass(frozen=True)
class SyntheticSceneSpec:
    plane_depth: float = 7.0  # along the base camera's optical axis
    plane_tilt_deg: float = 50.0  # tilt about the vertical axis (depth varies left/right)
    box_center: Optional[tuple] = (0.25, 0.35, 3.6)
    box_size: tuple = (1.5, 1.1, 1.2)
    box_appear_frac: float = 0.5  # tau, as a fraction of the time span
    texture_seed: int = 7
    n_photos: int = 60
    jitter_rotation_deg: float = 1.0
    jitter_translation: float = 0.45  # uniform per-axis lateral jitter bound
    gain_range: tuple = (0.9, 1.1)
    bias_range: tuple = (-0.04, 0.04)
    outlier_prob: float = 0.15
    time_span: tuple = (0.0, 600.0)
    photo_focal_scale: float = 0.85  # photos see slightly wider than the views
    n_sparse_points: int = 1500
    base_camera: Optional[Camera] = None

    def __post_init__(self):
        if not 0.0 <= self.box_appear_frac <= 1.0:
            raise InvalidSpec("box appearance fraction must lie in [0, 1]")
        if self.n_photos < 4:
            raise InvalidSpec("need at least four photos")
        g0, g1 = self.gain_range
        if not (0.0 < g0 <= g1 < 2.0):
            raise InvalidSpec("gain range must be inside (0, 2)")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise InvalidSpec("outlier probability must lie in [0, 1]")
        if self.plane_depth <= 0:
            raise InvalidSpec("plane depth must be positive")
        if self.time_span[1] <= self.time_span[0]:
            raise InvalidSpec("time span must be increasing")

    def to_dict(self) -> dict:
        d = {
            "plane_depth": self.plane_depth,
            "plane_tilt_deg": self.plane_tilt_deg,
            "box_center": list(self.box_center) if self.box_center else None,
            "box_size": list(self.box_size),
            "box_appear_frac": self.box_appear_frac,
            "texture_seed": self.texture_seed,
            "n_photos": self.n_photos,
            "jitter_rotation_deg": self.jitter_rotation_deg,
            "jitter_translation": self.jitter_translation,
            "gain_range": list(self.gain_range),
            "bias_range": list(self.bias_range),
            "outlier_prob": self.outlier_prob,
            "time_span": list(self.time_span),
            "photo_focal_scale": self.photo_focal_scale,
            "n_sparse_points": self.n_sparse_points,
            "base_camera": _camera_to_dict(self.base_camera)
            if self.base_camera
            else None,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        return cls(
            plane_depth=float(d["plane_depth"]),
            plane_tilt_deg=float(d["plane_tilt_deg"]),
            box_center=tuple(d["box_center"]) if d.get("box_center") else None,
            box_size=tuple(d["box_size"]),
            box_appear_frac=float(d["box_appear_frac"]),
            texture_seed=int(d["texture_seed"]),
            n_photos=int(d["n_photos"]),
            jitter_rotation_deg=float(d["jitter_rotation_deg"]),
            jitter_translation=float(d["jitter_translation"]),
            gain_range=tuple(d["gain_range"]),
            bias_range=tuple(d["bias_range"]),
            outlier_prob=float(d["outlier_prob"]),
            time_span=tuple(d["time_span"]),
            photo_focal_scale=float(d["photo_focal_scale"]),
            n_sparse_points=int(d["n_sparse_points"]),
            base_camera=camera_from_dict(d["base_camera"])
            if d.get("base_camera")
            else None,
        )


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash -> uniform [0, 1)."""
    seed_mix = np.uint64(((seed & 0xFFFFFFFF) * 0xD6E8FEB86659FD93) % 2**64)
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        + iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        + seed_mix
    )
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h.astype(np.float64) / float(2**64)


def _value_noise(u: np.ndarray, v: np.ndarray, seed: int, cell: float) -> np.ndarray:
    fu = u / cell
    fv = v / cell
    iu = np.floor(fu).astype(np.int64)
    iv = np.floor(fv).astype(np.int64)
    du = fu - iu
    dv = fv - iv
    su = du * du * du * (du * (du * 6.0 - 15.0) + 10.0)
    sv = dv * dv * dv * (dv * (dv * 6.0 - 15.0) + 10.0)
    n00 = _hash01(iu, iv, seed)
    n10 = _hash01(iu + 1, iv, seed)
    n01 = _hash01(iu, iv + 1, seed)
    n11 = _hash01(iu + 1, iv + 1, seed)
    top = n00 + (n10 - n00) * su
    bot = n01 + (n11 - n01) * su
    return top + (bot - top) * sv


def _surface_color(u, v, seed: int, octaves) -> np.ndarray:
    """(..., 3) RGB from banded value noise, channel seeds decorrelated.

    A small quasi-periodic ripple keeps every window textured (pure value
    noise has locally flat patches that starve window-based matching).
    """
    out = np.empty(u.shape + (3,))
    two_pi = 2.0 * np.pi
    for c in range(3):
        val = np.full(u.shape, 0.5)
        for k, (cell, amp) in enumerate(octaves):
            val += amp * (_value_noise(u, v, seed + 97 * c + 1013 * k, cell) - 0.5)
        phase = two_pi * float(
            _hash01(np.array([seed + 7 * c]), np.array([c + 3]), seed)[0]
        )
        val += 0.035 * np.sin(two_pi * (4.7 * u + 1.3 * v) + phase)
        val += 0.035 * np.sin(two_pi * (1.9 * u - 5.9 * v) + 1.7 * phase)
        out[..., c] = val
    return np.clip(out, 0.02, 0.98)


class SyntheticScene:
    """A fully specified scene with exact render and ground-truth queries."""

    def __init__(self, spec: SyntheticSceneSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        base = spec.base_camera if spec.base_camera is not None else default_camera()
        self.base_camera = base

        tilt = math.radians(spec.plane_tilt_deg)
        fwd = base.forward
        down = base.rotation[1]
        # Tilt the plane normal about the camera's vertical axis.
        axis = -down
        self.plane_point = base.center + spec.plane_depth * fwd
        n0 = -fwd
        self.plane_normal = self._rotate(n0, axis, tilt)
        # Texture basis of the plane (fixed, scene-intrinsic).
        e1 = np.cross(down, self.plane_normal)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(self.plane_normal, e1)
        self.plane_basis = (e1, e2)

        if spec.box_center is not None:
            c = np.asarray(spec.box_center, dtype=np.float64)
            s = 0.5 * np.asarray(spec.box_size, dtype=np.float64)
            self.box_lo = c - s
            self.box_hi = c + s
        else:
            self.box_lo = None
            self.box_hi = None
        t0, t1 = spec.time_span
        self.box_appear_time = t0 + spec.box_appear_frac * (t1 - t0)

        rng = np.random.default_rng(seed)
        n = spec.n_photos
        self.timestamps = np.linspace(t0, t1, n)
        jt = spec.jitter_translation
        trans = rng.uniform(-jt, jt, size=(n, 3))
        trans[:, 2] *= 0.25  # mostly lateral jitter: parallax, not zoom
        rot_axes = rng.normal(size=(n, 3))
        rot_axes /= np.linalg.norm(rot_axes, axis=1, keepdims=True)
        rot_angles = rng.uniform(
            -math.radians(spec.jitter_rotation_deg),
            math.radians(spec.jitter_rotation_deg),
            size=n,
        )
        self.gains = rng.uniform(*spec.gain_range, size=n)
        self.biases = rng.uniform(*spec.bias_range, size=n)
        self.outlier_mask = rng.uniform(size=n) < spec.outlier_prob
        self.outlier_rects = rng.uniform(size=(n, 4))  # x, y, w, h fractions
        self.outlier_colors = rng.uniform(size=(n, 3))

        photo_base = Camera(
            fx=base.fx * spec.photo_focal_scale,
            fy=base.fy * spec.photo_focal_scale,
            cx=base.cx,
            cy=base.cy,
            rotation=base.rotation,
            center=base.center,
            width=base.width,
            height=base.height,
        )
        self.photo_cameras = []
        for i in range(n):
            rot = self._rotation_matrix(rot_axes[i], rot_angles[i])
            cam_r = photo_base.rotation @ rot.T
            offset = (
                trans[i, 0] * photo_base.rotation[0]
                + trans[i, 1] * photo_base.rotation[1]
                + trans[i, 2] * photo_base.rotation[2]
            )
            self.photo_cameras.append(
                Camera(
                    fx=photo_base.fx,
                    fy=photo_base.fy,
                    cx=photo_base.cx,
                    cy=photo_base.cy,
                    rotation=cam_r,
                    center=photo_base.center + offset,
                    width=photo_base.width,
                    height=photo_base.height,
                )
            )
        self._sparse = self._build_sparse_points(rng)
        self._photo_cache: dict[int, PosedImage] = {}

    @staticmethod
    def _rotate(vec, axis, angle):
        return SyntheticScene._rotation_matrix(axis, angle) @ vec

    @staticmethod
    def _rotation_matrix(axis, angle):
        a = np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)

    def box_active(self, t: float) -> bool:
        return self.box_lo is not None and t >= self.box_appear_time

    # --- ray casting ---

    def _cast_plane(self, origin, dirs):
        denom = dirs @ self.plane_normal
        num = (self.plane_point - origin) @ self.plane_normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where((denom < 0) & (t > 0), t, np.inf)

    def _cast_box(self, origin, dirs):
        if self.box_lo is None:
            return np.full(dirs.shape[0], np.inf), np.zeros(dirs.shape[0], np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (self.box_lo - origin) / dirs
            t_hi = (self.box_hi - origin) / dirs
        t_near = np.minimum(t_lo, t_hi)
        t_far = np.maximum(t_lo, t_hi)
        t_entry = t_near.max(axis=1)
        t_exit = t_far.min(axis=1)
        axis = np.argmax(t_near, axis=1)
        hit = (t_exit >= t_entry) & (t_entry > 1e-9)
        return np.where(hit, t_entry, np.inf), axis

    def _shade(self, origin, dirs, t):
        """RGB at scene hits. dirs carry unit camera-z scale; t is depth."""
        z_plane = self._cast_plane(origin, dirs)
        if self.box_lo is not None:
            z_box, axis = self._cast_box(origin, dirs)
        else:
            z_box = np.full(dirs.shape[0], np.inf)
            axis = np.zeros(dirs.shape[0], np.int64)
        active = self.box_active(t)
        if not active:
            z_box = np.full_like(z_box, np.inf)
        use_box = z_box < z_plane
        z = np.where(use_box, z_box, z_plane)
        pts = origin + np.where(np.isfinite(z), z, 0.0)[:, None] * dirs

        colors = np.zeros((dirs.shape[0], 3))
        pl = ~use_box & np.isfinite(z)
        if np.any(pl):
            rel = pts[pl] - self.plane_point
            u = rel @ self.plane_basis[0]
            v = rel @ self.plane_basis[1]
            colors[pl] = _surface_color(u, v, self.spec.texture_seed, _PLANE_OCTAVES)
        if np.any(use_box):
            ax = axis[use_box]
            a1 = (ax + 1) % 3
            a2 = (ax + 2) % 3
            p = pts[use_box]
            u = p[np.arange(p.shape[0]), a1]
            v = p[np.arange(p.shape[0]), a2]
            colors[use_box] = _surface_color(
                u, v, self.spec.texture_seed + 7777 + 31 * 0, _BOX_OCTAVES
            )
        return colors, z

    def render_image(self, camera: Camera, t: float) -> np.ndarray:
        """Clean ground-truth RGB render, (H, W, 3) in [0, 1]."""
        colors, _ = self._shade(camera.center, camera.world_rays(), t)
        return colors.reshape(camera.height, camera.width, 3)

    def render_depth(self, camera: Camera, t: float) -> np.ndarray:
        """Ground-truth camera-frame depth, (H, W); +inf where nothing hit."""
        _, z = self._shade(camera.center, camera.world_rays(), t)
        return z.reshape(camera.height, camera.width)

    # --- photos ---

    def photo(self, i: int) -> PosedImage:
        if i in self._photo_cache:
            return self._photo_cache[i]
        cam = self.photo_cameras[i]
        t = self.timestamps[i]
        img = self.render_image(cam, t)
        img = np.clip(img * self.gains[i] + self.biases[i], 0.0, 1.0)
        if self.outlier_mask[i]:
            fx, fy, fw, fh = self.outlier_rects[i]
            w = int(cam.width * (0.25 + 0.15 * fw))
            h = int(cam.height * (0.25 + 0.15 * fh))
            x0 = int(fx * (cam.width - w))
            y0 = int(fy * (cam.height - h))
            img[y0 : y0 + h, x0 : x0 + w] = self.outlier_colors[i]
        posed = PosedImage(camera=cam, image=img, timestamp=float(t))
        self._photo_cache[i] = posed
        return posed

    def photos(self) -> list[PosedImage]:
        return [self.photo(i) for i in range(self.spec.n_photos)]

    def sparse_points(self) -> SparsePoints:
        return self._sparse

    def _build_sparse_points(self, rng) -> SparsePoints:
        spec = self.spec
        n = spec.n_photos
        k = spec.n_sparse_points
        cam_idx = rng.integers(0, n, size=k)
        px = rng.uniform(0, self.base_camera.width - 1, size=k)
        py = rng.uniform(0, self.base_camera.height - 1, size=k)

        centers = np.stack([c.center for c in self.photo_cameras])
        positions = []
        observers = []
        for s in range(k):
            cam = self.photo_cameras[cam_idx[s]]
            t = self.timestamps[cam_idx[s]]
            d = cam.pixel_directions(np.array([[px[s], py[s]]]))
            ray = (d @ cam.rotation)[0]
            z_plane = self._cast_plane(cam.center, ray[None, :])[0]
            z_box, _ = self._cast_box(cam.center, ray[None, :])
            z_box = z_box[0] if self.box_active(t) else np.inf
            z = min(z_plane, z_box)
            if not np.isfinite(z):
                continue
            point = cam.center + z * ray
            obs = self._visible_from(point)
            if obs.size >= 2:
                positions.append(point)
                observers.append(obs)
        return SparsePoints(
            positions=np.array(positions).reshape(len(positions), 3),
            observers=tuple(observers),
        )

    def _visible_from(self, point: np.ndarray) -> np.ndarray:
        """Indices of photos that actually see a surface point."""
        out = []
        for i, cam in enumerate(self.photo_cameras):
            rel = point - cam.center
            z = float(cam.rotation[2] @ rel)
            if z <= 1e-6:
                continue
            pix, _ = project_points(cam, point[None, :])
            x, y = pix[0]
            if not (0 <= x <= cam.width - 1 and 0 <= y <= cam.height - 1):
                continue
            ray = (rel / z)[None, :]
            z_plane = self._cast_plane(cam.center, ray)[0]
            z_box, _ = self._cast_box(cam.center, ray)
            z_hit = min(
                z_plane, z_box[0] if self.box_active(self.timestamps[i]) else np.inf
            )
            if abs(z_hit - z) <= 1e-6 * z + 1e-9:
                out.append(i)
        return np.array(out, dtype=np.int64)


def generate_synthetic_scene(spec: SyntheticSceneSpec, seed: int = 0) -> SyntheticScene:
    """Build the scene (photos render lazily, everything seed-determined)."""
    return SyntheticScene(spec, seed)


def write_scene(scene: SyntheticScene, out_dir) -> Manifest:
    """Materialize manifest, photo PNGs and the scene spec under out_dir."""
    from .io import save_image, save_manifest, write_json

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(scene.spec.n_photos):
        posed = scene.photo(i)
        rel = f"images/photo_{i:04d}.png"
        save_image(out / rel, posed.image)
        records.append(
            PhotoRecord(camera=posed.camera, image_path=rel, timestamp=posed.timestamp)
        )
    manifest = Manifest(photos=tuple(records), points=scene.sparse_points())
    save_manifest(out / "manifest.json", manifest)
    write_json(
        out / "scene_spec.json",
        {"spec": scene.spec.to_dict(), "seed": scene.seed},
    )
    return manifest


def load_scene(scene_dir) -> SyntheticScene:
    """Rebuild the scene object from a written scene_spec.json."""
    from .io import read_json

    doc = read_json(Path(scene_dir) / "scene_spec.json")
    return SyntheticScene(SyntheticSceneSpec.from_dict(doc["spec"]), doc["seed"])
