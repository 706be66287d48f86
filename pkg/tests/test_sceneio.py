"""Dataset loading, binary asset round trips, bundles, synthetic generator
determinism, and metrics."""

import json

import numpy as np
import pytest

from mpifield.errors import DataError
from mpifield.geometry import disparity_depths
from mpifield.io import (
    load_mpi,
    load_scene,
    mpi_file_size,
    save_mpi,
    save_scene,
    split_ids,
)
from mpifield.io.bundle import composite_premultiplied
from mpifield.metrics import metrics
from mpifield.mpi import MultiplaneImage
from mpifield.synthetic import (
    SceneModel,
    SyntheticSceneSpec,
    generate_synthetic,
    reference_camera,
    shadow_centroids,
)


def small_dataset(seed=0, n=5, ts=0.5):
    spec = SyntheticSceneSpec(width=32, height=24, focal=30.0, seed=seed)
    return generate_synthetic(spec, n, ts=ts)


class TestSceneRoundTrip:
    def test_minimal_single_photo_scene(self, tmp_path):
        ds, _ = small_dataset(n=1)
        save_scene(ds, tmp_path / "scene")
        loaded = load_scene(tmp_path / "scene")
        assert len(loaded) == 1
        assert loaded.train_ids == ["ref"]
        assert loaded.test_ids == []

    def test_round_trip_preserves_everything(self, tmp_path):
        ds, _ = small_dataset(n=6)
        save_scene(ds, tmp_path / "scene")
        loaded = load_scene(tmp_path / "scene")
        assert [p.id for p in loaded.photos] == [p.id for p in ds.photos]
        assert loaded.reference_id == ds.reference_id
        assert loaded.near == pytest.approx(ds.near)
        assert loaded.far == pytest.approx(ds.far)
        assert loaded.train_ids == ds.train_ids
        assert loaded.test_ids == ds.test_ids
        for a, b in zip(loaded.photos, ds.photos):
            # images go through 8-bit PNG: exact to within quantization
            assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-6
            err = np.abs(a.cam.rotation @ a.cam.rotation.T - np.eye(3)).max()
            assert err < 1e-9
            np.testing.assert_allclose(a.cam.rotation, b.cam.rotation, atol=1e-9)

    def test_corrupt_rotation_names_the_image(self, tmp_path):
        ds, _ = small_dataset(n=3)
        save_scene(ds, tmp_path / "scene")
        meta = json.loads((tmp_path / "scene" / "cameras.json").read_text())
        meta["images"][1]["R"][0] = 2.0
        (tmp_path / "scene" / "cameras.json").write_text(json.dumps(meta))
        with pytest.raises(DataError, match=meta["images"][1]["id"]):
            load_scene(tmp_path / "scene")

    def test_missing_field_reported(self, tmp_path):
        ds, _ = small_dataset(n=2)
        save_scene(ds, tmp_path / "scene")
        meta = json.loads((tmp_path / "scene" / "cameras.json").read_text())
        del meta["images"][0]["fx"]
        (tmp_path / "scene" / "cameras.json").write_text(json.dumps(meta))
        with pytest.raises(DataError, match="fx"):
            load_scene(tmp_path / "scene")

    def test_split_ratio_default(self):
        ids = [f"v{i}" for i in range(40)]
        train, test = split_ids(ids, seed=1)
        assert len(train) == 34 and len(test) == 6
        assert not set(train) & set(test)

    def test_missing_mask_means_all_static(self, tmp_path):
        ds, _ = small_dataset(n=2)
        save_scene(ds, tmp_path / "scene")
        loaded = load_scene(tmp_path / "scene")
        assert all(np.all(p.mask == 1.0) for p in loaded.photos)


class TestMpiAsset:
    def _mpi(self, with_features=True, seed=0):
        rng = np.random.default_rng(seed)
        ds, _ = small_dataset()
        planes = disparity_depths(1.0, 6.0, 5)
        feats = rng.standard_normal((5, 8, 24, 32)).astype(np.float32) if with_features else None
        return MultiplaneImage(ds.ref_cam, planes,
                               rng.random((5, 3, 24, 32)).astype(np.float32),
                               rng.random((5, 1, 24, 32)).astype(np.float32),
                               feats)

    @pytest.mark.parametrize("with_features", [False, True])
    def test_round_trip_bit_identical(self, tmp_path, with_features):
        mpi = self._mpi(with_features)
        path = tmp_path / "model.mpi"
        save_mpi(path, mpi)
        loaded = load_mpi(path)
        assert np.array_equal(loaded.base_color, mpi.base_color)
        assert np.array_equal(loaded.alpha, mpi.alpha)
        if with_features:
            assert np.array_equal(loaded.features, mpi.features)
        else:
            assert loaded.features is None
        np.testing.assert_array_equal(loaded.planes.depths.astype(np.float32),
                                      mpi.planes.depths.astype(np.float32))
        assert loaded.ref_cam.same_view(mpi.ref_cam)

    def test_flipped_byte_fails_crc(self, tmp_path):
        mpi = self._mpi(False)
        path = tmp_path / "model.mpi"
        save_mpi(path, mpi)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="CRC"):
            load_mpi(path)

    def test_truncated_file_rejected(self, tmp_path):
        mpi = self._mpi(True)
        path = tmp_path / "model.mpi"
        save_mpi(path, mpi)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 9])
        with pytest.raises(DataError):
            load_mpi(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.mpi"
        body = b"NOPE" + bytes(100)
        import zlib
        path.write_bytes(body + np.uint32(zlib.crc32(body)).tobytes())
        with pytest.raises(DataError, match="magic"):
            load_mpi(path)

    @pytest.mark.parametrize("with_features", [False, True])
    def test_file_size_matches_layout_formula(self, tmp_path, with_features):
        mpi = self._mpi(with_features)
        path = tmp_path / "model.mpi"
        save_mpi(path, mpi)
        expected = mpi_file_size(32, 24, 5, 8 if with_features else 0)
        assert path.stat().st_size == expected


class TestSyntheticGenerator:
    def test_pure_function_of_spec_and_seed(self):
        a, _ = small_dataset(seed=3, ts=None)
        b, _ = small_dataset(seed=3, ts=None)
        for pa, pb in zip(a.photos, b.photos):
            assert np.array_equal(pa.image, pb.image)
            assert np.array_equal(pa.cam.rotation, pb.cam.rotation)

    def test_depth_equals_nearest_opaque_layer(self):
        spec = SyntheticSceneSpec(width=32, height=24, focal=30.0)
        model = SceneModel(spec)
        depth, hit = model.depth_map(reference_camera(spec))
        layer_depths = set(float(l.depth) for l in model.layers)
        assert set(np.unique(depth[hit])) <= layer_depths

    def test_shadow_centroid_monotone_in_t(self):
        spec = SyntheticSceneSpec(width=64, height=40, focal=55.0)
        model = SceneModel(spec)
        cam = reference_camera(spec)
        frames = [model.render(cam, t) for t in np.linspace(0.1, 0.9, 9)]
        cents = shadow_centroids(frames)
        assert np.all(np.diff(cents) > 0)


class TestBundleCompositor:
    def test_premultiplied_over_matches_weights(self):
        rng = np.random.default_rng(0)
        D, H, W = 4, 6, 8
        colors = rng.random((D, 3, H, W)).astype(np.float32)
        alphas = rng.random((D, 1, H, W)).astype(np.float32)
        rgba = np.concatenate([colors * alphas, alphas], axis=1)
        from mpifield.mpi import composite
        np.testing.assert_allclose(composite_premultiplied(rgba),
                                   composite(colors, alphas), atol=1e-5)


class TestMetrics:
    def test_identical_images_cap(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        m = metrics(img, img)
        assert m["l1"] == 0.0
        assert m["psnr"] == 99.0

    def test_known_mse_20db(self):
        pred = np.zeros((1, 10, 10))
        target = np.full((1, 10, 10), 0.1)
        m = metrics(pred, target)
        assert m["psnr"] == pytest.approx(20.0, abs=1e-9)

    def test_empty_mask_rejected(self):
        img = np.zeros((3, 4, 4))
        with pytest.raises(DataError):
            metrics(img, img, np.zeros((4, 4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_straight_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.random((3, 6, 7))
        target = rng.random((3, 6, 7))
        mask = (rng.random((6, 7)) > 0.3).astype(float)
        m = metrics(pred, target, mask)
        total_abs, total_sq, n = 0.0, 0.0, 0
        for c in range(3):
            for i in range(6):
                for j in range(7):
                    if mask[i, j] > 0:
                        d = pred[c, i, j] - target[c, i, j]
                        total_abs += abs(d)
                        total_sq += d * d
                        n += 1
        assert m["l1"] == pytest.approx(total_abs / n, abs=1e-9)
        assert m["psnr"] == pytest.approx(10 * np.log10(1.0 / (total_sq / n)), abs=1e-9)
