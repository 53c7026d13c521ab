"""Pipeline orchestration: disk-to-disk stages with persisted artifacts.

Every stage reads its inputs from the output directory (or the manifest)
and writes its results back there, so any suffix of the pipeline can be
re-run or resumed and produces artifacts identical to an uninterrupted run.

Stage order and artifacts:

* depth    -> views.json, depth_%04d.pfm, depth_meta.json
              (optional cost_%04d.cvol dumps)
* tracks   -> tracks.bin, tracks_meta.json
* profiles -> profiles.bin
* render   -> frame_%04d.png (and splat_%04d.png with the baseline on)
* metrics  -> metrics.json (requires a synthetic scene_spec.json next to
              the manifest for ground-truth comparisons)
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .cost_volume import PlaneSet, aggregate, compute_depth_planes, fit_spline, support_set
from .depth_solver import DepthSolverParams, init_depthmap, optimize_joint
from .errors import DimensionMismatch, PipelineStageError
from .geometry import (
    Camera,
    Depthmap,
    generate_camera_path,
    parse_path_spec,
    select_image_indices,
)
from .kernels import BACKEND
from .profiles import (
    ObservationSampler,
    ProfileParams,
    assign_support,
    solve_profiles_batch,
)
from .reconstruct import density_audit, reconstruct_frame, splat_baseline
from .tracks import TrackGenParams, generate_tracks, projections_by_view

log = logging.getLogger("timelapse3d")

STAGES = ("depth", "tracks", "profiles", "render", "metrics")


@dataclass
class PipelineConfig:
    manifest: str
    out_dir: str
    reference_camera: dict | None = None  # explicit camera dict
    reference_photo: int | None = None  # or an index into the manifest
    path: dict = field(default_factory=lambda: {"type": "static"})
    n_views: int = 20
    plane_count: int = 64
    depth_scale: float = 0.5
    support_fraction: float = 0.15
    support_max: int = 100
    selection_max_angle_deg: float = 15.0
    selection_max_dist_frac: float = 0.1
    alpha: float = 0.4
    k1: float = 30.0
    k2: float = 8.0
    huber_scale: float = 0.1
    outer_iters: int = 2
    epsilon: float = 0.4
    lam: float = 25.0
    huber_data: float = 1e-4
    huber_temporal: float = 1e-4
    occlusion_tol: float = 0.01
    seed: int = 0
    threads: int | None = None
    stages: tuple = STAGES
    dump_cost_volume: bool = False
    dump_tracks: bool = True  # tracks.bin doubles as the stage artifact
    baseline: bool = False
    baseline_sigma: float = 1.0

    def depth_params(self) -> DepthSolverParams:
        return DepthSolverParams(
            alpha=self.alpha,
            k1=self.k1,
            k2=self.k2,
            huber_scale=self.huber_scale,
            max_outer_iters=self.outer_iters,
        )

    def profile_params(self) -> ProfileParams:
        return ProfileParams(
            lam=self.lam,
            huber_scale_data=self.huber_data,
            huber_scale_temporal=self.huber_temporal,
            occlusion_tol=self.occlusion_tol,
        )

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "stages" in known:
            known["stages"] = tuple(known["stages"])
        return cls(**known)

    @property
    def worker_count(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        return max(1, min(8, os.cpu_count() or 1))


def _out(cfg: PipelineConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _manifest_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.manifest).parent


def _resolve_reference(cfg: PipelineConfig, manifest: io.Manifest) -> Camera:
    if cfg.reference_camera is not None:
        return io.camera_from_dict(cfg.reference_camera)
    idx = cfg.reference_photo if cfg.reference_photo is not None else 0
    return manifest.photos[idx].camera


def _load_views(out: Path):
    doc = io.read_json(out / "views.json")
    cams = [io.camera_from_dict(c) for c in doc["cameras"]]
    times = np.array(doc["times"], dtype=np.float64)
    selected = np.array(doc["selected_photos"], dtype=np.int64)
    return cams, times, selected, doc


def _load_depthmaps(out: Path):
    meta = io.read_json(out / "depth_meta.json")
    planes = [PlaneSet(depths=np.array(p)) for p in meta["plane_depths"]]
    maps = []
    for j in range(len(planes)):
        values = io.read_pfm(out / f"depth_{j:04d}.pfm")
        lmax = planes[j].count - 1
        maps.append(
            Depthmap(values=np.clip(values, 0.0, lmax), plane_set=planes[j])
        )
    return maps, meta


# --- stages ---


def stage_depth(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    manifest = io.load_manifest(cfg.manifest)
    photos = io.load_posed_images(manifest, _manifest_dir(cfg))
    reference = _resolve_reference(cfg, manifest)

    pts = manifest.points.positions
    z_ref = (pts - reference.center) @ reference.rotation[2]
    scene_scale = float(np.median(z_ref[z_ref > 0]))
    selected_idx = select_image_indices(
        [p.camera for p in photos],
        [p.timestamp for p in photos],
        reference,
        scene_scale,
        cfg.selection_max_angle_deg,
        cfg.selection_max_dist_frac,
    )
    selected = [photos[i] for i in selected_idx]
    photo_times = np.array([p.timestamp for p in selected])

    views = generate_camera_path(
        reference,
        parse_path_spec(cfg.path),
        cfg.n_views,
        (float(photo_times[0]), float(photo_times[-1])),
    )
    depth_cams = [cam.scaled(cfg.depth_scale) for cam in views.views]
    io.write_json(
        out / "views.json",
        {
            "cameras": [io._camera_to_dict(c) for c in views.views],
            "times": [float(t) for t in views.times],
            "selected_photos": [int(i) for i in selected_idx],
            "depth_scale": cfg.depth_scale,
            "scene_scale": scene_scale,
        },
    )

    all_centers = np.stack([p.camera.center for p in manifest.photos])
    params = cfg.depth_params()

    def build(j: int):
        planes = compute_depth_planes(
            manifest.points, all_centers, depth_cams[j], cfg.plane_count
        )
        support = support_set(
            j, photo_times, views.times, cfg.support_fraction, cfg.support_max
        )
        volume = aggregate(depth_cams[j], selected, support, planes)
        if cfg.dump_cost_volume:
            io.write_cost_volume(out / f"cost_{j:04d}.cvol", volume.costs)
        spline = fit_spline(volume)
        init = init_depthmap(volume, params, spline)
        return planes, spline, init

    with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
        results = list(pool.map(build, range(cfg.n_views)))
    planes = [r[0] for r in results]
    splines = [r[1] for r in results]
    inits = [r[2] for r in results]

    log.info("depth: %d views initialized, starting joint optimization", cfg.n_views)
    solved = optimize_joint(inits, splines, depth_cams, params)

    for j, dm in enumerate(solved):
        io.write_pfm(out / f"depth_{j:04d}.pfm", dm.values)
    io.write_json(
        out / "depth_meta.json",
        {
            "plane_depths": [[float(z) for z in p.depths] for p in planes],
            "plane_count": cfg.plane_count,
            "params": {
                "alpha": cfg.alpha,
                "k1": cfg.k1,
                "k2": cfg.k2,
                "huber_scale": cfg.huber_scale,
                "outer_iters": cfg.outer_iters,
            },
            "backend": BACKEND,
        },
    )


def stage_tracks(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    cams, _, _, viewdoc = _load_views(out)
    depthmaps, _ = _load_depthmaps(out)
    depth_cams = [cam.scaled(viewdoc["depth_scale"]) for cam in cams]
    tracks = generate_tracks(
        depthmaps, depth_cams, TrackGenParams(cfg.epsilon), proj_views=cams
    )
    io.write_tracks(out / "tracks.bin", tracks)

    per_view = projections_by_view(tracks, len(cams))
    worst_dist = 0.0
    worst_weight = 1.0
    for j, (_, prj) in enumerate(per_view):
        report = density_audit(
            (prj, np.zeros((prj.shape[0], 3))), cams[j].width, cams[j].height,
            cfg.epsilon,
        )
        worst_dist = max(worst_dist, report.max_distance)
        worst_weight = min(worst_weight, report.min_best_weight)
    io.write_json(
        out / "tracks_meta.json",
        {
            "count": len(tracks),
            "epsilon": cfg.epsilon,
            "coverage_max_distance": worst_dist,
            "coverage_min_best_weight": worst_weight,
        },
    )
    log.info(
        "tracks: %d tracks, max uncovered distance %.3f px", len(tracks), worst_dist
    )


def stage_profiles(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    manifest = io.load_manifest(cfg.manifest)
    photos = io.load_posed_images(manifest, _manifest_dir(cfg))
    cams, times, selected_idx, viewdoc = _load_views(out)
    depthmaps, _ = _load_depthmaps(out)
    depth_cams = [cam.scaled(viewdoc["depth_scale"]) for cam in cams]
    selected = [photos[i] for i in selected_idx]
    photo_times = np.array([p.timestamp for p in selected])
    tracks = io.read_tracks(out / "tracks.bin")

    assignment = assign_support(photo_times, times)
    sampler = ObservationSampler(
        selected, assignment, depthmaps, depth_cams, cfg.occlusion_tol
    )
    lengths, starts, obs_track, obs_local, obs_color = sampler.sample_batch(tracks)
    profiles = solve_profiles_batch(
        lengths, obs_track, obs_local, obs_color, cfg.profile_params()
    )

    n_max = profiles.shape[1] if profiles.size else 0
    obs_counts = np.bincount(
        obs_track * max(n_max, 1) + obs_local, minlength=len(tracks) * max(n_max, 1)
    ).reshape(len(tracks), max(n_max, 1))

    unobserved = 0
    rec_view, rec_prj, rec_col, rec_cnt = [], [], [], []
    for t, track in enumerate(tracks):
        n = lengths[t]
        vals = profiles[t, :n]
        if np.isnan(vals).any():
            # No visible observation anywhere: neutral gray, flagged in logs.
            vals = np.full((n, 3), 0.5)
            unobserved += 1
        rec_view.append(np.arange(starts[t], starts[t] + n, dtype=np.int64))
        rec_prj.append(track.projections)
        rec_col.append(vals)
        rec_cnt.append(obs_counts[t, :n])
    io.write_profiles(
        out / "profiles.bin",
        np.concatenate(rec_view),
        np.concatenate(rec_prj),
        np.concatenate(rec_col),
        np.concatenate(rec_cnt),
    )
    if unobserved:
        log.warning("profiles: %d tracks had no visible observation", unobserved)


def stage_render(cfg: PipelineConfig) -> None:
    out = _out(cfg)
    cams, _, _, _ = _load_views(out)
    views, prj, col, _ = io.read_profiles(out / "profiles.bin")

    def render(j: int):
        sel = views == j
        frame = reconstruct_frame(
            (prj[sel], col[sel]), cams[j].width, cams[j].height
        )
        io.save_image(out / f"frame_{j:04d}.png", frame.pixels)
        if cfg.baseline:
            splat = splat_baseline(
                (prj[sel], col[sel]),
                cams[j].width,
                cams[j].height,
                cfg.baseline_sigma,
            )
            io.save_image(out / f"splat_{j:04d}.png", splat.pixels)

    with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
        list(pool.map(render, range(len(cams))))


def stage_metrics(cfg: PipelineConfig) -> dict:
    out = _out(cfg)
    cams, times, _, viewdoc = _load_views(out)
    report: dict = {"views": len(cams)}

    meta_path = out / "tracks_meta.json"
    if meta_path.exists():
        report["coverage"] = io.read_json(meta_path)

    scene_spec = _manifest_dir(cfg) / "scene_spec.json"
    if scene_spec.exists():
        from .synthetic import load_scene

        scene = load_scene(_manifest_dir(cfg))
        frame_psnr = []
        for j, cam in enumerate(cams):
            path = out / f"frame_{j:04d}.png"
            if not path.exists():
                frame_psnr = None
                break
            got = io.load_image(path)
            want = scene.render_image(cam, float(times[j]))
            frame_psnr.append(psnr(got, want))
        if frame_psnr is not None:
            report["frame_psnr"] = frame_psnr
            report["mean_frame_psnr"] = float(np.mean(frame_psnr))

        if (out / "depth_meta.json").exists():
            depthmaps, _ = _load_depthmaps(out)
            depth_cams = [c.scaled(viewdoc["depth_scale"]) for c in cams]
            rmse = []
            for j, dm in enumerate(depthmaps):
                z = scene.render_depth(depth_cams[j], float(times[j]))
                gt = dm.plane_set.index_of_depth(z)
                rmse.append(depth_rmse(dm.values, gt))
            report["depth_rmse"] = rmse
            report["mean_depth_rmse"] = float(np.mean(rmse))
    io.write_json(out / "metrics.json", report)
    return report


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] rasters, capped at 99 dB for MSE < 1e-10."""
    if image.shape != reference.shape:
        raise DimensionMismatch("PSNR inputs must share a shape")
    mse = float(np.mean((image - reference) ** 2))
    if mse < 1e-10:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))


def depth_rmse(values: np.ndarray, reference: np.ndarray) -> float:
    """RMSE in plane-index units over pixels with finite reference depth."""
    if values.shape != reference.shape:
        raise DimensionMismatch("depth RMSE inputs must share a shape")
    ok = np.isfinite(reference)
    return float(np.sqrt(np.mean((values[ok] - reference[ok]) ** 2)))


def metrics(frames, gt_frames) -> dict:
    """Per-frame PSNR report for in-memory frame lists."""
    if len(frames) != len(gt_frames):
        raise DimensionMismatch("frame counts differ")
    vals = [psnr(a, b) for a, b in zip(frames, gt_frames)]
    return {"frame_psnr": vals, "mean_frame_psnr": float(np.mean(vals))}


_STAGE_FUNCS = {
    "depth": stage_depth,
    "tracks": stage_tracks,
    "profiles": stage_profiles,
    "render": stage_render,
    "metrics": stage_metrics,
}


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run the configured stages in order; stage errors carry the stage name."""
    result: dict = {}
    for stage in STAGES:
        if stage not in cfg.stages:
            continue
        log.info("stage %s", stage)
        try:
            out = _STAGE_FUNCS[stage](cfg)
        except PipelineStageError:
            raise
        except Exception as exc:
            raise PipelineStageError(stage, exc) from exc
        if isinstance(out, dict):
            result = out
    return result
