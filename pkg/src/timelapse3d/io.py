"""File formats: PFM depthmaps, PNG images, the scene manifest and the
debug dumps (cost volumes, tracks, profiles).

All binary formats are little-endian. The scene manifest is a JSON document
listing photos (image path, intrinsics, row-major rotation, center,
timestamp) and sparse 3D points (position plus observing photo indices).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DimensionMismatch
from .geometry import Camera, PosedImage, SparsePoints

# --- images ---


def load_image(path) -> np.ndarray:
    """8-bit RGB PNG -> (H, W, 3) float64 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image: np.ndarray) -> None:
    """(H, W, 3) floats in [0, 1] -> 8-bit RGB PNG, rounding half up."""
    q = np.clip(np.floor(np.asarray(image) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


# --- PFM (portable float map, grayscale, scale -1.0 = little-endian) ---


def write_pfm(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionMismatch("PFM writer expects a 2D raster")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())  # rows bottom to top


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype)
    return data.reshape(h, w)[::-1].astype(np.float64)


# --- scene manifest ---


@dataclass(frozen=True)
class PhotoRecord:
    camera: Camera
    image_path: str
    timestamp: float


@dataclass(frozen=True)
class Manifest:
    photos: tuple
    points: SparsePoints


def _camera_to_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "rotation": [float(x) for x in cam.rotation.ravel()],
        "center": [float(x) for x in cam.center],
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
        center=np.array(d["center"], dtype=np.float64),
        width=int(d["width"]),
        height=int(d["height"]),
    )


def save_manifest(path, manifest: Manifest) -> None:
    doc = {
        "photos": [
            dict(
                _camera_to_dict(p.camera),
                image=p.image_path,
                timestamp=p.timestamp,
            )
            for p in manifest.photos
        ],
        "points": [
            {
                "position": [float(x) for x in manifest.points.positions[i]],
                "observers": [int(x) for x in manifest.points.observers[i]],
            }
            for i in range(len(manifest.points))
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_manifest(path) -> Manifest:
    doc = json.loads(Path(path).read_text())
    photos = tuple(
        PhotoRecord(
            camera=camera_from_dict(p),
            image_path=p["image"],
            timestamp=float(p["timestamp"]),
        )
        for p in doc["photos"]
    )
    pts = doc["points"]
    points = SparsePoints(
        positions=np.array([p["position"] for p in pts], dtype=np.float64).reshape(
            len(pts), 3
        ),
        observers=tuple(np.array(p["observers"], dtype=np.int64) for p in pts),
    )
    return Manifest(photos=photos, points=points)


def load_posed_images(manifest: Manifest, base_dir) -> list[PosedImage]:
    base = Path(base_dir)
    return [
        PosedImage(
            camera=rec.camera,
            image=load_image(base / rec.image_path),
            timestamp=rec.timestamp,
        )
        for rec in manifest.photos
    ]


# --- cost volume dump: "CVOL" magic, u32 W, H, L, then f32 (row, col, plane) ---

_CVOL_MAGIC = b"CVOL"


def write_cost_volume(path, costs: np.ndarray) -> None:
    h, w, L = costs.shape
    with open(path, "wb") as f:
        f.write(_CVOL_MAGIC)
        f.write(struct.pack("<III", w, h, L))
        f.write(np.ascontiguousarray(costs, dtype="<f4").tobytes())


def read_cost_volume(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != _CVOL_MAGIC:
            raise ValueError("bad cost volume magic")
        w, h, L = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * w * h * L), dtype="<f4")
    return data.reshape(h, w, L).astype(np.float64)


# --- track dump: per track u32 start_view, u32 length, then per covered
#     view 3 f64 point + 2 f64 projection ---


def write_tracks(path, tracks) -> None:
    with open(path, "wb") as f:
        for t in tracks:
            n = t.points.shape[0]
            f.write(struct.pack("<II", t.start_view, n))
            rec = np.empty((n, 5))
            rec[:, :3] = t.points
            rec[:, 3:] = t.projections
            f.write(rec.astype("<f8").tobytes())


def read_tracks(path):
    from .tracks import Track

    out = []
    with open(path, "rb") as f:
        while True:
            head = f.read(8)
            if not head:
                break
            start_view, n = struct.unpack("<II", head)
            rec = np.frombuffer(f.read(40 * n), dtype="<f8").reshape(n, 5)
            out.append(
                Track(
                    start_view=start_view,
                    points=rec[:, :3].copy(),
                    projections=rec[:, 3:].copy(),
                )
            )
    return out


# --- profile dump: flat records (u32 view, 2 f64 projection, 3 f32 color,
#     u32 observation count), tracks stored consecutively ---

PROFILE_RECORD = np.dtype(
    [
        ("view", "<u4"),
        ("projection", "<f8", (2,)),
        ("color", "<f4", (3,)),
        ("n_obs", "<u4"),
    ]
)


def write_profiles(path, views, projections, colors, obs_counts) -> None:
    """Write flat per-(track, view) profile records.

    All arguments are flat arrays over covered (track, view) entries.
    """
    n = len(views)
    rec = np.empty(n, dtype=PROFILE_RECORD)
    rec["view"] = views
    rec["projection"] = projections
    rec["color"] = colors
    rec["n_obs"] = obs_counts
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def read_profiles(path):
    data = np.fromfile(path, dtype=PROFILE_RECORD)
    return (
        data["view"].astype(np.int64),
        data["projection"].astype(np.float64),
        data["color"].astype(np.float64),
        data["n_obs"].astype(np.int64),
    )


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def read_json(path):
    return json.loads(Path(path).read_text())
