import numpy as np
import pytest

from timelapse3d.errors import InvalidSpec
from timelapse3d.geometry import select_image_indices
from timelapse3d.synthetic import (
    SyntheticScene,
    SyntheticSceneSpec,
    default_camera,
    generate_synthetic_scene,
)


def _small_spec(**kw):
    base = dict(
        n_photos=8,
        base_camera=default_camera(40, 30, focal=60.0),
        n_sparse_points=120,
    )
    base.update(kw)
    return SyntheticSceneSpec(**base)


class TestSpecValidation:
    def test_bad_tau(self):
        with pytest.raises(InvalidSpec):
            _small_spec(box_appear_frac=1.5)

    def test_too_few_photos(self):
        with pytest.raises(InvalidSpec):
            _small_spec(n_photos=2)

    def test_bad_gain_range(self):
        with pytest.raises(InvalidSpec):
            _small_spec(gain_range=(0.5, 2.5))

    def test_round_trip_dict(self):
        spec = _small_spec()
        again = SyntheticSceneSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()


class TestDeterminism:
    def test_same_seed_identical_photos(self):
        a = SyntheticScene(_small_spec(), seed=7)
        b = SyntheticScene(_small_spec(), seed=7)
        for i in range(4):
            assert np.array_equal(a.photo(i).image, b.photo(i).image)
            assert np.array_equal(
                a.photo(i).camera.rotation, b.photo(i).camera.rotation
            )
        assert np.array_equal(a.sparse_points().positions, b.sparse_points().positions)

    def test_different_seed_differs(self):
        a = SyntheticScene(_small_spec(), seed=7)
        b = SyntheticScene(_small_spec(), seed=8)
        assert not np.array_equal(a.photo(0).image, b.photo(0).image)

    def test_zero_jitter_zero_noise_identical_renders(self):
        spec = _small_spec(
            jitter_rotation_deg=0.0,
            jitter_translation=0.0,
            gain_range=(1.0, 1.0),
            bias_range=(0.0, 0.0),
            outlier_prob=0.0,
            box_center=None,
        )
        scene = SyntheticScene(spec, seed=3)
        imgs = [scene.photo(i).image for i in range(spec.n_photos)]
        for img in imgs[1:]:
            assert np.array_equal(img, imgs[0])


class TestGroundTruth:
    def test_box_appears_at_tau(self):
        spec = _small_spec(box_appear_frac=0.5, time_span=(0.0, 100.0))
        scene = SyntheticScene(spec, seed=1)
        cam = scene.base_camera
        pre = scene.render_depth(cam, 25.0)
        post = scene.render_depth(cam, 75.0)
        diff = np.abs(pre - post) > 1e-9
        assert diff.any()  # box footprint
        assert not diff.all()  # background unchanged
        # pre-change depth equals the no-box scene everywhere
        nobox = SyntheticScene(_small_spec(box_center=None), seed=1)
        assert np.allclose(pre, nobox.render_depth(cam, 25.0))
        # at exactly tau the box exists
        at_tau = scene.render_depth(cam, 50.0)
        assert np.array_equal(at_tau, post)

    def test_depth_positive_and_finite(self):
        scene = SyntheticScene(_small_spec(), seed=2)
        z = scene.render_depth(scene.base_camera, 10.0)
        assert np.isfinite(z).all()
        assert z.min() > 0

    def test_tilted_plane_depth_profile(self):
        spec = _small_spec(box_center=None, plane_tilt_deg=40.0)
        scene = SyntheticScene(spec, seed=2)
        z = scene.render_depth(scene.base_camera, 0.0)
        # depth varies along x (tilt about the vertical axis), constant in y
        assert np.abs(np.diff(z, axis=0)).max() < 1e-9
        assert np.abs(np.diff(z, axis=1)).max() > 0

    def test_photos_pass_selection(self):
        scene = SyntheticScene(_small_spec(), seed=4)
        pts = scene.sparse_points().positions
        ref = scene.base_camera
        z = (pts - ref.center) @ ref.rotation[2]
        idx = select_image_indices(
            scene.photo_cameras,
            scene.timestamps,
            ref,
            scene_scale=float(np.median(z[z > 0])),
        )
        assert len(idx) == scene.spec.n_photos

    def test_sparse_points_lie_on_surfaces(self):
        scene = SyntheticScene(_small_spec(), seed=5)
        pts = scene.sparse_points()
        assert len(pts) > 50
        for i in range(0, len(pts), 17):
            p = pts.positions[i]
            obs = pts.observers[i]
            assert obs.size >= 2
            # visible means the first scene hit is the point itself
            cam = scene.photo_cameras[obs[0]]
            t = scene.timestamps[obs[0]]
            rel = p - cam.center
            z = float(cam.rotation[2] @ rel)
            ray = (rel / z)[None, :]
            z_plane = scene._cast_plane(cam.center, ray)[0]
            z_box, _ = scene._cast_box(cam.center, ray)
            z_hit = min(z_plane, z_box[0] if scene.box_active(t) else np.inf)
            assert abs(z_hit - z) <= 1e-6 * z + 1e-9

    def test_outlier_patches_applied(self):
        spec = _small_spec(outlier_prob=1.0)
        scene = SyntheticScene(spec, seed=6)
        clean = scene.render_image(scene.photo_cameras[0], scene.timestamps[0])
        clean = np.clip(clean * scene.gains[0] + scene.biases[0], 0, 1)
        img = scene.photo(0).image
        frac = np.mean(np.any(img != clean, axis=2))
        assert 0.04 < frac < 0.25  # an opaque rectangle covers 5-15%


class TestSceneIo:
    def test_write_and_reload(self, tmp_path):
        from timelapse3d.io import load_manifest, load_posed_images
        from timelapse3d.synthetic import load_scene, write_scene

        scene = generate_synthetic_scene(_small_spec(), seed=9)
        manifest = write_scene(scene, tmp_path)
        assert (tmp_path / "manifest.json").exists()
        again = load_manifest(tmp_path / "manifest.json")
        assert len(again.photos) == scene.spec.n_photos
        photos = load_posed_images(again, tmp_path)
        # 8-bit quantization: within half a step of the rendered photo
        assert np.abs(photos[0].image - scene.photo(0).image).max() <= 0.5 / 255 + 1e-9
        rebuilt = load_scene(tmp_path)
        assert np.array_equal(rebuilt.photo(0).image, scene.photo(0).image)

    def test_manifest_round_trip_bytes(self, tmp_path):
        from timelapse3d.io import load_manifest, save_manifest
        from timelapse3d.synthetic import write_scene

        scene = generate_synthetic_scene(_small_spec(), seed=9)
        write_scene(scene, tmp_path)
        raw = (tmp_path / "manifest.json").read_bytes()
        manifest = load_manifest(tmp_path / "manifest.json")
        save_manifest(tmp_path / "again.json", manifest)
        assert (tmp_path / "again.json").read_bytes() == raw
