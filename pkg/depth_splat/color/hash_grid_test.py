import numpy as np
import pytest

from depth_splat.errors import DimensionMismatchError, ValidationError
import depth_splat.color.hash_grid as module

UNIT_BOX = ([0, 0, 0], [1, 1, 1])


def _small_encoder(seed=0, **overrides):
    arguments = dict(levels=4, base_resolution=2, max_resolution=16, table_size_log2=8, features_per_level=2, seed=seed)
    arguments.update(overrides)
    return module.HashGridEncoder(UNIT_BOX, **arguments)


class TestLevelResolutions:
    def test_default_sixteen_levels_span_sixteen_to_512(self):
        resolutions = module.level_resolutions(16, 16, 512)

        assert resolutions[0] == 16
        assert resolutions[-1] == 512
        assert np.all(np.diff(resolutions) > 0)

    def test_too_many_levels_for_the_range_raises(self):
        with pytest.raises(ValidationError):
            module.level_resolutions(10, 4, 6)


class TestEncode:
    @pytest.mark.parametrize("name, corner", [("lower corner", [0.0, 0, 0]), ("upper corner", [1.0, 1, 1])])
    def test_grid_corner_returns_stored_features(self, name, corner):
        encoder = _small_encoder()
        encoding = encoder.encode(np.array([corner]))[0].reshape(encoder.levels, -1)

        for level, resolution in enumerate(encoder.resolutions):
            grid_corner = np.array(corner, dtype=int) * resolution
            entry = encoder._hash(grid_corner[None, :])[0]
            np.testing.assert_array_equal(encoding[level], encoder.tables[level, entry])

    def test_zero_tables_encode_to_zero(self):
        encoder = _small_encoder()
        encoder.tables[:] = 0

        encoding = encoder.encode(np.random.default_rng(0).uniform(size=(10, 3)))

        assert encoding.shape == (10, encoder.output_dim)
        np.testing.assert_array_equal(encoding, 0)

    def test_positions_outside_the_box_are_clamped(self):
        encoder = _small_encoder()

        clamped = encoder.encode(np.array([[2.0, -1, 0.5]]))
        np.testing.assert_array_equal(clamped, encoder.encode(np.array([[1.0, 0, 0.5]])))

    def test_deterministic(self):
        positions = np.random.default_rng(1).uniform(size=(20, 3))

        first, second = _small_encoder(seed=3), _small_encoder(seed=3)
        np.testing.assert_array_equal(first.encode(positions), second.encode(positions))

    def test_wrong_position_shape_raises(self):
        with pytest.raises(DimensionMismatchError):
            _small_encoder().encode(np.zeros((4, 2)))

    def test_degenerate_box_raises(self):
        with pytest.raises(ValidationError):
            module.HashGridEncoder(([0, 0, 0], [1, 1, 0]))


class TestBackward:
    def test_table_gradient_matches_central_differences(self):
        encoder = _small_encoder(seed=2)
        rng = np.random.default_rng(4)
        positions = rng.uniform(0.05, 0.95, size=(5, 3))
        upstream = rng.normal(size=(5, encoder.output_dim))

        _, context = encoder.encode_with_context(positions)
        table_grads, _ = encoder.backward(context, upstream)
        dense = table_grads.to_dense(encoder.tables.shape)

        step = 1e-6
        flat_tables = encoder.tables.reshape(-1)
        flat_dense = dense.reshape(-1)
        touched = table_grads.rows[:6] * encoder.features_per_level
        for entry in list(touched) + [int(np.argmin(np.abs(flat_dense)))]:
            original = flat_tables[entry]
            flat_tables[entry] = original + step
            up = np.sum(upstream * encoder.encode(positions))
            flat_tables[entry] = original - step
            down = np.sum(upstream * encoder.encode(positions))
            flat_tables[entry] = original
            assert flat_dense[entry] == pytest.approx((up - down) / (2 * step), rel=1e-4, abs=1e-9)

    def test_position_gradient_matches_central_differences(self):
        encoder = _small_encoder(seed=5)
        encoder.tables *= 1e3
        rng = np.random.default_rng(6)
        positions = rng.uniform(0.05, 0.95, size=(4, 3))
        upstream = rng.normal(size=(4, encoder.output_dim))

        _, context = encoder.encode_with_context(positions)
        _, position_grads = encoder.backward(context, upstream)

        step = 1e-7
        for index in np.ndindex(positions.shape):
            up, down = positions.copy(), positions.copy()
            up[index] += step
            down[index] -= step
            expected = np.sum(upstream * (encoder.encode(up) - encoder.encode(down))) / (2 * step)
            assert position_grads[index] == pytest.approx(expected, rel=1e-4, abs=1e-6)

    def test_clamped_positions_get_zero_position_gradient(self):
        encoder = _small_encoder()
        _, context = encoder.encode_with_context(np.array([[1.5, 0.5, 0.5]]))

        _, position_grads = encoder.backward(context, np.ones((1, encoder.output_dim)))

        np.testing.assert_array_equal(position_grads, 0)


def test_sparse_table_grads_add_by_row():
    first = module.SparseTableGrad(rows=np.array([1, 4]), values=np.array([[1.0, 2], [3, 4]]))
    second = module.SparseTableGrad(rows=np.array([4, 7]), values=np.array([[10.0, 20], [30, 40]]))

    combined = first + second

    np.testing.assert_array_equal(combined.rows, [1, 4, 7])
    np.testing.assert_array_equal(combined.values, [[1, 2], [13, 24], [30, 40]])
