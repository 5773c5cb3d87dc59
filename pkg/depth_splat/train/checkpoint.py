"""Training checkpoints as a single uncompressed .npz archive (no pickled objects).

Keys:
    format_version          int, CHECKPOINT_FORMAT_VERSION
    config_json             str, canonical TrainConfig JSON
    config_hash             str, SHA-256 of config_json
    iteration, extent       scalars
    field.<attribute>       centers, log_scales, rotations, opacity_logits, color_params
    field.color_mode        str, "sh:<degree>" or "neural"
    model.box               (2, 3) neural encoder box (neural mode only)
    model.<name>            color-model weights (neural mode only)
    adam.*                  optimizer state (see Adam.state_dict)
    densify.grad_norm_sum, densify.counts
    rng_state               str, JSON of the numpy bit generator state
"""

import json
import logging

import numpy as np

from depth_splat.errors import DatasetFormatError
from depth_splat.field.primitives import GROUP_ATTRIBUTES, ColorMode, GaussianField
from depth_splat.train.config import config_from_dict, config_hash, config_to_dict
from depth_splat.train.densify import DensifyStats
from depth_splat.train.optimizer import Adam
from depth_splat.train.trainer import TrainState, build_color_model

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path, state, config):
    """Write `state` and the config that produced it to `path` (a .npz file)"""
    config_json = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    arrays = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "config_json": np.array(config_json),
        "config_hash": np.array(config_hash(config)),
        "iteration": np.array(state.iteration),
        "extent": np.array(state.extent),
        "field.color_mode": np.array(str(state.field.color_mode)),
        "densify.grad_norm_sum": state.densify_stats.grad_norm_sum,
        "densify.counts": state.densify_stats.counts,
        "rng_state": np.array(json.dumps(state.rng.bit_generator.state)),
    }
    for attribute in GROUP_ATTRIBUTES.values():
        arrays[f"field.{attribute}"] = getattr(state.field, attribute)
    if state.color_model.kind == "neural":
        arrays["model.box"] = np.stack([state.color_model.encoder.lower, state.color_model.encoder.upper])
    for name, weights in state.color_model.parameters().items():
        arrays[f"model.{name}"] = weights
    arrays.update(state.optimizer.state_dict())

    try:
        with open(path, "wb") as checkpoint_file:
            np.savez(checkpoint_file, **arrays)
    except OSError as error:
        raise OSError(f"Could not write checkpoint {path}: {error}") from error
    logger.info("Saved checkpoint at iteration %d to %s", state.iteration, path)


def _read_archive(path):
    try:
        with np.load(path, allow_pickle=False) as archive:
            return {key: archive[key] for key in archive.files}
    except FileNotFoundError:
        raise DatasetFormatError(f"Checkpoint {path} does not exist")
    except (OSError, ValueError) as error:
        raise DatasetFormatError(f"Checkpoint {path} is not a readable .npz archive: {error}")


def _guard_checkpoint(path, arrays):
    missing = [key for key in ("format_version", "config_json", "config_hash", "iteration") if key not in arrays]
    if missing:
        raise DatasetFormatError(f"Checkpoint {path} is missing {missing}")
    version = int(arrays["format_version"])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DatasetFormatError(
            f"Checkpoint {path} has format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        )


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint.

    Returns:
        (TrainState, TrainConfig)
    Raises:
        DatasetFormatError: missing or unreadable file, unknown format version, or a config hash that does not match
            the stored config
    """
    arrays = _read_archive(path)
    _guard_checkpoint(path, arrays)
    config = config_from_dict(json.loads(str(arrays["config_json"])))
    if config_hash(config) != str(arrays["config_hash"]):
        raise DatasetFormatError(f"Checkpoint {path} config hash does not match its stored config")

    field = GaussianField(
        **{attribute: arrays[f"field.{attribute}"] for attribute in GROUP_ATTRIBUTES.values()},
        color_mode=ColorMode.parse(str(arrays["field.color_mode"])),
    )
    box = tuple(arrays["model.box"]) if "model.box" in arrays else None
    color_model = build_color_model(config, box)
    for name, weights in color_model.parameters().items():
        np.copyto(weights, arrays[f"model.{name}"])

    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(str(arrays["rng_state"]))
    state = TrainState(
        field=field,
        color_model=color_model,
        optimizer=Adam.from_state_dict({key: value for key, value in arrays.items() if key.startswith("adam.")}),
        densify_stats=DensifyStats(arrays["densify.grad_norm_sum"].copy(), arrays["densify.counts"].copy()),
        rng=rng,
        extent=float(arrays["extent"]),
        iteration=int(arrays["iteration"]),
    )
    return state, config
