import json

import numpy as np
import pytest

from depth_splat.conftest import tiny_config, tiny_dataset
from depth_splat.errors import DatasetFormatError
from depth_splat.field.primitives import GROUP_ATTRIBUTES
from depth_splat.train.trainer import create_state, train_step
import depth_splat.train.checkpoint as module


@pytest.fixture(scope="module")
def dataset():
    return tiny_dataset()[0]


def _trained_state(dataset, config, steps=3):
    state = create_state(config, dataset)
    for _ in range(steps):
        train_step(state, dataset.train[0], config)
    return state


class TestCheckpointRoundTrip:
    @pytest.mark.parametrize("name,color_mode", [("spherical harmonics", "sh:1"), ("neural", "neural")])
    def test_restores_every_part_of_the_state(self, tmpdir, dataset, name, color_mode):
        config = tiny_config(color_mode=color_mode, hash_levels=2, hash_table_size_log2=8, mlp_width=8)
        state = _trained_state(dataset, config)
        path = str(tmpdir.join("checkpoint.npz"))

        module.save_checkpoint(path, state, config)
        restored, restored_config = module.load_checkpoint(path)

        assert restored_config == config
        assert restored.iteration == state.iteration == 3
        assert restored.extent == state.extent
        assert restored.field.color_mode == state.field.color_mode
        for attribute in GROUP_ATTRIBUTES.values():
            np.testing.assert_array_equal(getattr(restored.field, attribute), getattr(state.field, attribute))
        for weight_name, weights in state.color_model.parameters().items():
            np.testing.assert_array_equal(restored.color_model.parameters()[weight_name], weights)
        np.testing.assert_array_equal(restored.densify_stats.counts, state.densify_stats.counts)
        assert restored.optimizer.steps == state.optimizer.steps
        assert restored.rng.bit_generator.state == state.rng.bit_generator.state

    def test_resumed_training_matches_uninterrupted_training(self, tmpdir, dataset):
        config = tiny_config(color_mode="sh:0")
        state = _trained_state(dataset, config, steps=2)
        path = str(tmpdir.join("checkpoint.npz"))
        module.save_checkpoint(path, state, config)
        restored, _ = module.load_checkpoint(path)

        for current in (state, restored):
            train_step(current, dataset.train[1], config)

        np.testing.assert_array_equal(restored.field.centers, state.field.centers)
        np.testing.assert_array_equal(restored.field.opacity_logits, state.field.opacity_logits)


class TestLoadCheckpointErrors:
    def test_missing_file(self, tmpdir):
        with pytest.raises(DatasetFormatError, match="does not exist"):
            module.load_checkpoint(str(tmpdir.join("missing.npz")))

    def test_not_an_archive(self, tmpdir):
        path = tmpdir.join("checkpoint.npz")
        path.write("not a zip file")

        with pytest.raises(DatasetFormatError):
            module.load_checkpoint(str(path))

    def _rewrite(self, path, **changes):
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
        arrays.update(changes)
        np.savez(path, **arrays)

    def test_unknown_format_version(self, tmpdir, dataset):
        config = tiny_config()
        path = str(tmpdir.join("checkpoint.npz"))
        module.save_checkpoint(path, create_state(config, dataset), config)
        self._rewrite(path, format_version=np.array(99))

        with pytest.raises(DatasetFormatError, match="format version"):
            module.load_checkpoint(path)

    def test_config_hash_mismatch(self, tmpdir, dataset):
        config = tiny_config()
        path = str(tmpdir.join("checkpoint.npz"))
        module.save_checkpoint(path, create_state(config, dataset), config)
        edited = json.loads(json.dumps(module.config_to_dict(config)))
        edited["tau"] = 0.5
        self._rewrite(path, config_json=np.array(json.dumps(edited, sort_keys=True, separators=(",", ":"))))

        with pytest.raises(DatasetFormatError, match="hash"):
            module.load_checkpoint(path)
