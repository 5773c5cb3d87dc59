import json

import pandas as pd
import pytest

from depth_splat.conftest import TINY_SCENE, tiny_config
from depth_splat.dataset.files import CAMERAS_FILENAME, read_pfm, read_png
from depth_splat.errors import NonFiniteLossError
from depth_splat.export import read_ply
from depth_splat.train.config import config_to_dict
import depth_splat.cli as module


def _write_json(path, contents):
    path.write(json.dumps(contents))
    return str(path)


@pytest.fixture(scope="module")
def trained_run(tmpdir_factory):
    """synth + train on a tiny scene; (dataset directory, run directory)"""
    root = tmpdir_factory.mktemp("cli")
    spec = _write_json(
        root.join("scene.json"),
        {"primitives": 30, "width": 16, "height": 16, "focal": 16.0, "train_views": 2, "test_views": 1},
    )
    config = _write_json(root.join("config.json"), config_to_dict(tiny_config()))
    data, run = str(root.join("scene")), str(root.join("run"))

    assert module.main(["synth", "--spec", spec, "--seed", "1", "--out", data]) == module.EXIT_OK
    assert module.main(["train", "--data", data, "--config", config, "--out", run, "--quiet"]) == module.EXIT_OK
    return data, run


class TestSynth:
    def test_writes_dataset_and_ground_truth(self, tmpdir, capsys):
        spec = _write_json(tmpdir.join("scene.json"), {"primitives": 10, "width": 12, "height": 12})
        out = tmpdir.join("scene")

        assert module.main(["synth", "--spec", spec, "--out", str(out)]) == module.EXIT_OK

        assert out.join(CAMERAS_FILENAME).check(file=True)
        assert len(read_ply(str(out.join(module.GROUND_TRUTH_FILENAME)))) == 10
        assert "3 train and 2 test views" in capsys.readouterr().out

    def test_bad_spec_exits_with_validation_error(self, tmpdir):
        spec = _write_json(tmpdir.join("scene.json"), {"kind": "cubes"})

        code = module.main(["synth", "--spec", spec, "--out", str(tmpdir.join("scene"))])

        assert code == module.EXIT_VALIDATION_ERROR


class TestTrain:
    def test_print_config_applies_overrides(self, capsys):
        argv = ["train", "--print-config", "--iters", "10", "--seed", "4", "--no-soft", "--color-mode", "sh:1"]
        argv.append("--no-depth-freeze")

        code = module.main(argv)

        printed = json.loads(capsys.readouterr().out)
        assert code == module.EXIT_OK
        assert (printed["total_iters"], printed["soft_start_iter"], printed["seed"]) == (10, 10, 4)
        assert (printed["use_soft"], printed["use_hard"], printed["color_mode"]) == (False, True, "sh:1")
        assert printed["depth_freeze"] is False

    def test_writes_run_outputs(self, trained_run):
        _, run = trained_run

        log = pd.read_csv(f"{run}/{module.METRICS_FILENAME}", index_col=0)
        assert list(log.index) == [2, 4]
        with open(f"{run}/{module.CONFIG_FILENAME}") as config_file:
            assert json.load(config_file) == json.loads(json.dumps(config_to_dict(tiny_config())))
        assert len(read_ply(f"{run}/{module.FIELD_FILENAME}")) > 0

    @pytest.mark.parametrize(
        "name,argv",
        [
            ("no data or out", ["train"]),
            ("unknown color mode", ["train", "--print-config", "--color-mode", "rgb"]),
            ("iterations below zero", ["train", "--print-config", "--iters", "-3"]),
        ],
    )
    def test_invalid_input_exits_with_2(self, name, argv):
        assert module.main(argv) == module.EXIT_VALIDATION_ERROR

    def test_bad_config_file_exits_with_2(self, tmpdir):
        config = _write_json(tmpdir.join("config.json"), {"learning_rate": 1})

        assert module.main(["train", "--config", config, "--print-config"]) == module.EXIT_VALIDATION_ERROR

    def test_missing_dataset_exits_with_2(self, tmpdir):
        argv = ["train", "--data", str(tmpdir.join("nowhere")), "--out", str(tmpdir.join("run"))]

        assert module.main(argv) == module.EXIT_VALIDATION_ERROR

    def test_non_finite_loss_exits_with_3(self, trained_run, tmpdir, mocker, caplog):
        data, _ = trained_run
        error = NonFiniteLossError("Non-finite loss at iteration 3", {"iteration": 3, "primitives": 20})
        mocker.patch.object(module, "fit", side_effect=error)

        code = module.main(["train", "--data", data, "--out", str(tmpdir.join("run")), "--iters", "4"])

        assert code == module.EXIT_NON_FINITE_LOSS
        assert "primitives: 20" in caplog.text


class TestEval:
    def test_report_has_a_row_per_test_view_and_the_mean(self, trained_run, tmpdir, capsys):
        data, run = trained_run
        report = str(tmpdir.join("report.json"))

        argv = ["eval", "--ckpt", f"{run}/{module.CHECKPOINT_FILENAME}", "--data", data, "--report", report]
        code = module.main(argv)

        assert code == module.EXIT_OK
        with open(report) as report_file:
            rows = json.load(report_file)
        assert set(rows) == {"test_000", "mean"}
        assert set(rows["mean"]) == {"psnr", "ssim", "depth_mae", "depth_rmse"}
        assert "Evaluation on test views" in capsys.readouterr().out


class TestRender:
    def test_renders_png_and_depth(self, trained_run, tmpdir):
        data, run = trained_run
        with open(f"{data}/{CAMERAS_FILENAME}") as cameras_file:
            entry = json.load(cameras_file)["views"][0]
        camera = _write_json(tmpdir.join("camera.json"), entry)
        image, depth = str(tmpdir.join("view.png")), str(tmpdir.join("view.pfm"))

        argv = ["render", "--ckpt", f"{run}/{module.CHECKPOINT_FILENAME}", "--camera", camera, "--out", image]
        code = module.main(argv + ["--depth", depth])

        assert code == module.EXIT_OK
        assert read_png(image).rgb.shape == (TINY_SCENE.height, TINY_SCENE.width, 3)
        assert read_pfm(depth).shape == (TINY_SCENE.height, TINY_SCENE.width)

    @pytest.mark.parametrize(
        "name,contents",
        [("malformed json", "{"), ("missing intrinsics", '{"width": 4, "height": 4}')],
    )
    def test_bad_camera_exits_with_2(self, trained_run, tmpdir, name, contents):
        _, run = trained_run
        camera = tmpdir.join("camera.json")
        camera.write(contents)

        argv = ["render", "--ckpt", f"{run}/{module.CHECKPOINT_FILENAME}", "--camera", str(camera)]
        code = module.main(argv + ["--out", str(tmpdir.join("view.png"))])

        assert code == module.EXIT_VALIDATION_ERROR


class TestGradcheck:
    def test_small_scene_passes(self, capsys):
        assert module.main(["gradcheck", "--seed", "0", "--size", "12", "--prims", "4"]) == module.EXIT_OK

        out = capsys.readouterr().out
        assert out.count(": ok") == 4

    def test_failed_check_exits_with_1(self, mocker):
        report = mocker.Mock()
        report.passed.return_value = False
        report.to_frame.return_value = pd.DataFrame()
        mocker.patch.object(module, "finite_diff_check", return_value=report)

        assert module.main(["gradcheck", "--size", "6", "--prims", "2"]) == module.EXIT_GRADCHECK_FAILED

    def test_non_positive_size_exits_with_2(self):
        assert module.main(["gradcheck", "--size", "0"]) == module.EXIT_VALIDATION_ERROR


class TestAblate:
    def test_runs_every_variant_and_reports_wins(self, tmpdir, capsys):
        config = _write_json(tmpdir.join("config.json"), config_to_dict(tiny_config()))
        spec = _write_json(
            tmpdir.join("scene.json"), {"primitives": 30, "width": 16, "height": 16, "focal": 16.0, "test_views": 1}
        )
        out = str(tmpdir.join("ablation.csv"))

        code = module.main(
            ["ablate", "--experiment", "freezing", "--seeds", "1", "--config", config, "--spec", spec, "--out", out]
        )

        assert code == module.EXIT_OK
        assert list(pd.read_csv(out)["variant"]) == [
            "shape_freeze",
            "no_shape_freeze",
            "no_center_freeze",
            "all_parameters",
        ]
        printed = capsys.readouterr().out
        for baseline in ("no_shape_freeze", "no_center_freeze", "all_parameters"):
            assert f"shape_freeze beats {baseline} on psnr in" in printed

    def test_experiments_name_their_candidate_among_the_variants(self):
        for variants, candidate, metrics in module.EXPERIMENTS.values():
            assert candidate in [variant.name for variant in variants]
            assert len(variants) >= 2 and metrics
