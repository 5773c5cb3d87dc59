import json
from pathlib import Path

import numpy as np
import pytest

from depth_splat.conftest import tiny_dataset
from depth_splat.errors import DatasetFormatError
from depth_splat.render.buffers import DepthMap, ImageBuffer
import depth_splat.dataset.files as module


@pytest.fixture(scope="module")
def dataset():
    return tiny_dataset()[0]


@pytest.fixture
def saved(tmpdir, dataset):
    path = str(tmpdir.join("scene"))
    module.save_dataset(dataset, path)
    return path


class TestPng:
    def test_round_trip_within_quantization(self, tmpdir):
        rgb = np.random.default_rng(0).uniform(size=(5, 7, 3))
        path = str(tmpdir.join("image.png"))

        module.write_png(path, ImageBuffer(rgb))
        image = module.read_png(path)

        assert (image.height, image.width) == (5, 7)
        np.testing.assert_allclose(image.rgb, rgb, atol=0.5 / 255 + 1e-12)

    def test_out_of_range_values_are_clipped(self, tmpdir):
        path = str(tmpdir.join("image.png"))

        module.write_png(path, np.array([[[-1.0, 0.5, 2.0]]]))

        np.testing.assert_allclose(module.read_png(path).rgb, [[[0.0, 128 / 255, 1.0]]])

    def test_missing_file(self, tmpdir):
        with pytest.raises(DatasetFormatError, match="does not exist"):
            module.read_png(str(tmpdir.join("missing.png")))

    def test_not_an_image(self, tmpdir):
        path = tmpdir.join("image.png")
        path.write("hello")

        with pytest.raises(DatasetFormatError, match="not a readable image"):
            module.read_png(str(path))


class TestPfm:
    def test_round_trip_is_exact_in_float32(self, tmpdir):
        depth = np.random.default_rng(1).uniform(0.5, 5.0, size=(4, 6)).astype(np.float32).astype(float)
        path = str(tmpdir.join("depth.pfm"))

        module.write_pfm(path, DepthMap(depth))

        np.testing.assert_array_equal(module.read_pfm(path), depth)

    def test_rows_are_stored_bottom_to_top(self, tmpdir):
        path = tmpdir.join("depth.pfm")

        module.write_pfm(str(path), np.array([[1.0], [2.0]]))

        contents = path.read_binary()
        assert contents.startswith(b"Pf\n1 2\n-1.0\n")
        np.testing.assert_array_equal(np.frombuffer(contents[-8:], dtype="<f4"), [2.0, 1.0])

    def test_non_2d_depth_raises(self, tmpdir):
        with pytest.raises(DatasetFormatError):
            module.write_pfm(str(tmpdir.join("depth.pfm")), np.ones((2, 2, 2)))

    @pytest.mark.parametrize(
        "name,contents,message",
        [
            ("color pfm", b"PF\n1 1\n-1.0\n" + bytes(12), "single-channel"),
            ("big endian", b"Pf\n1 1\n1.0\n" + bytes(4), "big-endian"),
            ("zero scale", b"Pf\n1 1\n0\n" + bytes(4), "zero"),
            ("malformed size", b"Pf\none one\n-1.0\n" + bytes(4), "malformed"),
            ("truncated header", b"Pf\n1 1", "truncated"),
            ("short data", b"Pf\n2 2\n-1.0\n" + bytes(8), "expected 16 bytes"),
        ],
    )
    def test_bad_file_raises(self, tmpdir, name, contents, message):
        path = tmpdir.join("depth.pfm")
        path.write_binary(contents)

        with pytest.raises(DatasetFormatError, match=message):
            module.read_pfm(str(path))

    def test_missing_file(self, tmpdir):
        with pytest.raises(DatasetFormatError, match="does not exist"):
            module.read_pfm(str(tmpdir.join("missing.pfm")))


class TestDatasetRoundTrip:
    def test_cameras_are_exact(self, saved, dataset):
        loaded = module.load_dataset(saved)

        for original, view in zip(dataset.train + dataset.test, loaded.train + loaded.test):
            assert view.name == original.name
            assert view.camera.to_dict() == original.camera.to_dict()

    def test_images_within_quantization_and_depths_within_float32(self, saved, dataset):
        loaded = module.load_dataset(saved, require_mono_depth=True)

        for original, view in zip(dataset.train, loaded.train):
            np.testing.assert_allclose(view.image.rgb, original.image.rgb, atol=0.5 / 255 + 1e-12)
            np.testing.assert_allclose(view.mono_depth.depth, original.mono_depth.depth, rtol=1e-6)
            np.testing.assert_allclose(view.gt_depth.depth, original.gt_depth.depth, rtol=1e-6)
            np.testing.assert_allclose(view.gt_depth.accum_alpha, original.gt_depth.accum_alpha, atol=1e-7)

    def test_splits_and_box(self, saved, dataset):
        loaded = module.load_dataset(saved)

        assert (len(loaded.train), len(loaded.test)) == (len(dataset.train), len(dataset.test))
        assert all(view.mono_depth is None for view in loaded.test)
        for corner, expected in zip(loaded.box, dataset.box):
            np.testing.assert_array_equal(corner, expected)


class TestLoadDatasetErrors:
    def test_missing_directory(self, tmpdir):
        with pytest.raises(DatasetFormatError, match="does not exist"):
            module.load_dataset(str(tmpdir.join("nowhere")))

    def test_missing_cameras_file(self, tmpdir):
        with pytest.raises(DatasetFormatError, match="cameras.json"):
            module.load_dataset(str(tmpdir))

    @pytest.mark.parametrize(
        "name,contents,message",
        [
            ("malformed json", "{", "not valid JSON"),
            ("no views", '{"box": [[0, 0, 0], [1, 1, 1]]}', "must be an object"),
            ("bad box", '{"box": [1, 2], "views": []}', "two 3-vectors"),
            ("entry without camera", '{"box": [[0, 0, 0], [1, 1, 1]], "views": [{"name": "a"}]}', "missing key"),
        ],
    )
    def test_bad_cameras_file(self, tmpdir, name, contents, message):
        tmpdir.join(module.CAMERAS_FILENAME).write(contents)

        with pytest.raises(DatasetFormatError, match=message):
            module.load_dataset(str(tmpdir))

    def test_unknown_split(self, saved):
        cameras_path = f"{saved}/{module.CAMERAS_FILENAME}"
        with open(cameras_path) as cameras_file:
            cameras = json.load(cameras_file)
        cameras["views"][0]["split"] = "validation"
        with open(cameras_path, "w") as cameras_file:
            json.dump(cameras, cameras_file)

        with pytest.raises(DatasetFormatError, match="unknown split"):
            module.load_dataset(saved)

    def test_missing_mono_depth_only_fails_when_required(self, saved):
        mono_dir = Path(saved) / module.MONO_DEPTH_DIRECTORY
        for name in ("train_000", "train_001"):
            (mono_dir / f"{name}.pfm").unlink()

        assert not module.load_dataset(saved).has_mono_depth
        with pytest.raises(DatasetFormatError, match="required for depth regularization"):
            module.load_dataset(saved, require_mono_depth=True)
