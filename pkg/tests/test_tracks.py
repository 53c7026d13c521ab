import numpy as np
import pytest

from conftest import make_camera

from timelapse3d.cost_volume import PlaneSet
from timelapse3d.geometry import Depthmap, OrbitPath, generate_camera_path, project
from timelapse3d.reconstruct import density_audit
from timelapse3d.synthetic import SyntheticScene, SyntheticSceneSpec, default_camera
from timelapse3d.tracks import (
    Track,
    TrackGenParams,
    chain_track,
    generate_tracks,
    projections_by_view,
)


def _gt_depthmaps(scene, cams, planes_list, t=0.0):
    out = []
    for cam, planes in zip(cams, planes_list):
        z = scene.render_depth(cam, t)
        disp = np.clip(planes.index_of_depth(z), 0.0, planes.count - 1)
        out.append(Depthmap(values=disp, plane_set=planes))
    return out


def _orbit_scene(tilt=40.0, width=48, height=36, focal=110.0):
    spec = SyntheticSceneSpec(
        plane_depth=7.0,
        plane_tilt_deg=tilt,
        box_center=None,
        n_photos=4,
        jitter_translation=0.1,
        gain_range=(1.0, 1.0),
        bias_range=(0.0, 0.0),
        outlier_prob=0.0,
        base_camera=default_camera(width, height, focal=focal),
        n_sparse_points=20,
    )
    return SyntheticScene(spec, seed=5)


class TestChainTrack:
    def test_static_fixed_point_on_planar_scene(self):
        # Consistent depthmaps of a planar scene: disparity is affine in the
        # pixel, bilinear interpolation is exact, and chained points agree.
        scene = _orbit_scene()
        seq = generate_camera_path(
            scene.base_camera,
            OrbitPath(pivot=np.array([0.0, 0.0, 7.0]), angle_deg=8.0),
            5,
            (0.0, 1.0),
        )
        cams = list(seq.views)
        planes = [PlaneSet.from_range(12.0, 4.0, 32) for _ in cams]
        maps = _gt_depthmaps(scene, cams, planes)
        track = chain_track(2, (20.0, 17.0), maps, cams)
        assert len(track) == 5
        spread = np.linalg.norm(track.points - track.points.mean(axis=0), axis=1)
        assert spread.max() < 1e-6 * np.linalg.norm(track.points.mean(axis=0))

    def test_projection_consistency(self):
        scene = _orbit_scene()
        seq = generate_camera_path(
            scene.base_camera,
            OrbitPath(pivot=np.array([0.0, 0.0, 7.0]), angle_deg=8.0),
            5,
            (0.0, 1.0),
        )
        cams = list(seq.views)
        planes = [PlaneSet.from_range(12.0, 4.0, 32) for _ in cams]
        maps = _gt_depthmaps(scene, cams, planes)
        track = chain_track(2, (20.0, 17.0), maps, cams)
        for k in range(len(track)):
            j = track.start_view + k
            pix, _ = project(cams[j], track.points[k])
            assert np.allclose(pix, track.projections[k], atol=1e-9)

    def test_track_stops_out_of_frame(self):
        scene = _orbit_scene()
        seq = generate_camera_path(
            scene.base_camera,
            OrbitPath(pivot=np.array([0.0, 0.0, 7.0]), angle_deg=60.0),
            8,
            (0.0, 1.0),
        )
        cams = list(seq.views)
        planes = [PlaneSet.from_range(12.0, 4.0, 32) for _ in cams]
        maps = _gt_depthmaps(scene, cams, planes)
        track = chain_track(0, (2.0, 18.0), maps, cams)
        assert track.start_view == 0
        assert len(track) < 8  # strong orbit pushes the point off frame

    def test_depth_step_gap_hand_computed(self):
        # Two views with different constant-depth maps: the second point is
        # the first's projection re-lifted onto the second surface.
        cam0 = make_camera(width=21, height=21, cx=10, cy=10, fx=30, fy=30)
        cam1 = make_camera(
            width=21, height=21, cx=10, cy=10, fx=30, fy=30, center=(0.5, 0.0, 0.0)
        )
        planes = PlaneSet.from_range(10.0, 2.0, 9)
        d5 = float(planes.index_of_depth(5.0))
        d8 = float(planes.index_of_depth(8.0))
        maps = [
            Depthmap(values=np.full((21, 21), d5), plane_set=planes),
            Depthmap(values=np.full((21, 21), d8), plane_set=planes),
        ]
        track = chain_track(0, (13.0, 9.0), maps, [cam0, cam1])
        q0 = np.array([(13 - 10) / 30 * 5.0, (9 - 10) / 30 * 5.0, 5.0])
        assert np.allclose(track.points[0], q0)
        # project q0 into cam1, lift at depth 8
        rel = q0 - np.array([0.5, 0.0, 0.0])
        p1 = np.array([30 * rel[0] / rel[2] + 10, 30 * rel[1] / rel[2] + 10])
        q1 = np.array([0.5, 0.0, 0.0]) + 8.0 / 5.0 * rel
        assert np.allclose(track.projections[1], p1, atol=1e-12)
        assert np.allclose(track.points[1], q1, atol=1e-12)
        expected_gap = np.linalg.norm(q1 - q0)
        got_gap = np.linalg.norm(track.points[1] - track.points[0])
        assert np.isclose(got_gap, expected_gap)


class TestGenerateTracks:
    def test_single_view_one_track_per_pixel(self):
        cam = make_camera(width=8, height=6, cx=3.5, cy=2.5, fx=20, fy=20)
        planes = PlaneSet.from_range(10.0, 2.0, 8)
        maps = [Depthmap(values=np.full((6, 8), 3.0), plane_set=planes)]
        tracks = generate_tracks(maps, [cam])
        assert len(tracks) == 48
        prj = np.array([t.projections[0] for t in tracks])
        gx, gy = np.meshgrid(np.arange(8), np.arange(6))
        centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        assert np.allclose(np.sort(prj.view("f8,f8"), axis=0).view(np.float64),
                           np.sort(centers.astype(np.float64).view("f8,f8"), axis=0).view(np.float64))

    def test_static_no_gap_fill(self):
        cam = make_camera(width=10, height=8, cx=4.5, cy=3.5, fx=25, fy=25)
        planes = PlaneSet.from_range(10.0, 2.0, 8)
        maps = [Depthmap(values=np.full((8, 10), 3.0), plane_set=planes)] * 4
        cams = [cam] * 4
        tracks = generate_tracks(maps, cams)
        # three full-frame seedings, no gap fill needed
        assert len(tracks) == 3 * 80
        for t in tracks:
            assert len(t) == 4

    def test_orbit_coverage_audited(self):
        scene = _orbit_scene()
        m = 6
        seq = generate_camera_path(
            scene.base_camera,
            OrbitPath(pivot=np.array([0.0, 0.0, 7.0]), angle_deg=10.0),
            m,
            (0.0, 1.0),
        )
        cams = list(seq.views)
        planes = [PlaneSet.from_range(12.0, 4.0, 32) for _ in cams]
        maps = _gt_depthmaps(scene, cams, planes)
        params = TrackGenParams(epsilon=0.4)
        tracks = generate_tracks(maps, cams, params)
        assert len(tracks) > 3 * 48 * 36  # gap-fill tracks were needed
        per_view = projections_by_view(tracks, m)
        for j, (_, prj) in enumerate(per_view):
            report = density_audit(
                (prj, np.zeros((len(prj), 3))), cams[j].width, cams[j].height, 0.4
            )
            assert report.max_distance <= 0.4 + 1e-9
            assert report.min_best_weight > 0.5

    def test_chain_determinism_from_interior_point(self):
        scene = _orbit_scene()
        m = 5
        seq = generate_camera_path(
            scene.base_camera,
            OrbitPath(pivot=np.array([0.0, 0.0, 7.0]), angle_deg=10.0),
            m,
            (0.0, 1.0),
        )
        cams = list(seq.views)
        planes = [PlaneSet.from_range(12.0, 4.0, 32) for _ in cams]
        maps = _gt_depthmaps(scene, cams, planes)
        track = chain_track(2, (11.25, 7.5), maps, cams)
        k = 1  # re-seed from the second covered view
        j = track.start_view + k
        again = chain_track(j, tuple(track.projections[k]), maps, cams)
        # the forward sub-chains coincide
        overlap = len(track) - k
        a = track.points[k : k + overlap]
        start = j - again.start_view
        b = again.points[start : start + overlap]
        assert np.allclose(a, b, atol=1e-9)

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            TrackGenParams(epsilon=1.5)
        with pytest.raises(ValueError):
            TrackGenParams(epsilon=0.0)

    def test_worst_case_weight_bound(self):
        # A sample at the epsilon=0.4 diagonal worst case still dominates
        # the bilinear cell: (1 - 0.4/sqrt(2))^2 > 0.5.
        off = 0.4 / np.sqrt(2.0)
        w = (1.0 - off) ** 2
        assert w > 0.5
        assert np.isclose(w, 0.5143, atol=2e-4)
