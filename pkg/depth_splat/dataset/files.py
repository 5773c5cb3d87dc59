"""Read and write datasets on disk.

Directory layout:
    <dataset>/
    ├── cameras.json         {"box": [lower, upper], "views": [{"name", "split", "fx", "fy", "cx", "cy", "width",
    │                          "height", "world_to_camera" (4x4 row-major), "z_near"}, ...]}
    ├── images/<name>.png    8-bit RGB, mapped to [0, 1]
    ├── mono_depth/<name>.pfm   monocular-like depth (training views)
    ├── gt_depth/<name>.pfm     ground-truth depth, distance to the camera center (optional)
    └── gt_alpha/<name>.pfm     coverage of the ground-truth depth (optional, defaults to 1)

Depth maps are single-channel PFM ("Pf"), 32-bit little-endian floats, rows stored bottom to top; the negative scale
field in the header marks little-endian data.
"""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from depth_splat.dataset.views import Dataset, View
from depth_splat.errors import DatasetFormatError
from depth_splat.field.camera import Camera
from depth_splat.render.buffers import DepthMap, ImageBuffer

logger = logging.getLogger(__name__)

CAMERAS_FILENAME = "cameras.json"
IMAGES_DIRECTORY = "images"
MONO_DEPTH_DIRECTORY = "mono_depth"
GT_DEPTH_DIRECTORY = "gt_depth"
GT_ALPHA_DIRECTORY = "gt_alpha"

SPLITS = ("train", "test")
_PFM_GRAYSCALE = b"Pf"


def write_png(path, image):
    """Save an ImageBuffer or (H, W, 3) array in [0, 1] as 8-bit RGB"""
    rgb = image.rgb if isinstance(image, ImageBuffer) else np.asarray(image, dtype=float)
    quantized = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    try:
        Image.fromarray(quantized, "RGB").save(path, format="PNG")
    except OSError as error:
        raise OSError(f"Could not write image {path}: {error}") from error


def read_png(path):
    """ImageBuffer with values in [0, 1]"""
    try:
        with Image.open(path) as image:
            rgb = np.asarray(image.convert("RGB"), dtype=float) / 255
    except FileNotFoundError:
        raise DatasetFormatError(f"Image file {path} does not exist")
    except OSError as error:
        raise DatasetFormatError(f"Image file {path} is not a readable image: {error}")
    return ImageBuffer(rgb)


def write_pfm(path, depth):
    """Save a DepthMap or 2D array as little-endian single-channel PFM"""
    values = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)
    if values.ndim != 2:
        raise DatasetFormatError(f"PFM depth must be 2D, got shape {values.shape}")
    height, width = values.shape
    try:
        with open(path, "wb") as pfm_file:
            pfm_file.write(_PFM_GRAYSCALE + b"\n")
            pfm_file.write(f"{width} {height}\n".encode("ascii"))
            pfm_file.write(b"-1.0\n")
            pfm_file.write(np.flipud(values).astype("<f4").tobytes())
    except OSError as error:
        raise OSError(f"Could not write depth map {path}: {error}") from error


def _parse_pfm_header(path, lines):
    if lines[0] != _PFM_GRAYSCALE:
        raise DatasetFormatError(f'{path}: expected a single-channel "Pf" PFM, got header {lines[0]!r}')
    try:
        width, height = (int(token) for token in lines[1].split())
        scale = float(lines[2])
    except ValueError:
        raise DatasetFormatError(f"{path}: malformed PFM size or scale line")
    if scale > 0:
        raise DatasetFormatError(f"{path}: big-endian PFM (positive scale {scale}) is not supported")
    if scale == 0:
        raise DatasetFormatError(f"{path}: PFM scale field is zero")
    return width, height


def read_pfm(path):
    """2D float64 array from a little-endian single-channel PFM.

    Raises:
        DatasetFormatError: missing file, a color or big-endian PFM, or a data size that does not match the header
    """
    try:
        contents = Path(path).read_bytes()
    except FileNotFoundError:
        raise DatasetFormatError(f"Depth file {path} does not exist")
    lines = contents.split(b"\n", 3)
    if len(lines) < 4:
        raise DatasetFormatError(f"{path}: truncated PFM header")
    width, height = _parse_pfm_header(path, lines)
    data = lines[3]
    expected_bytes = 4 * width * height
    if len(data) != expected_bytes:
        raise DatasetFormatError(f"{path}: expected {expected_bytes} bytes for {width}x{height}, got {len(data)}")
    return np.flipud(np.frombuffer(data, dtype="<f4").reshape(height, width)).astype(float)


def _view_entry(view, split):
    entry = {"name": view.name, "split": split}
    entry.update(view.camera.to_dict())
    return entry


def save_dataset(dataset, path):
    """Write `dataset` under directory `path` in the layout above (created if needed)"""
    root = Path(path)
    for directory in (IMAGES_DIRECTORY, MONO_DEPTH_DIRECTORY, GT_DEPTH_DIRECTORY, GT_ALPHA_DIRECTORY):
        (root / directory).mkdir(parents=True, exist_ok=True)

    entries = []
    for split, views in zip(SPLITS, (dataset.train, dataset.test)):
        for view in views:
            entries.append(_view_entry(view, split))
            write_png(root / IMAGES_DIRECTORY / f"{view.name}.png", view.image)
            if view.mono_depth is not None:
                write_pfm(root / MONO_DEPTH_DIRECTORY / f"{view.name}.pfm", view.mono_depth)
            if view.gt_depth is not None:
                write_pfm(root / GT_DEPTH_DIRECTORY / f"{view.name}.pfm", view.gt_depth)
                write_pfm(root / GT_ALPHA_DIRECTORY / f"{view.name}.pfm", view.gt_depth.accum_alpha)

    cameras = {"box": [corner.tolist() for corner in dataset.box], "views": entries}
    (root / CAMERAS_FILENAME).write_text(json.dumps(cameras, indent=2))
    logger.info("Saved %d train and %d test views to %s", len(dataset.train), len(dataset.test), root)


def _read_cameras(root):
    cameras_path = root / CAMERAS_FILENAME
    if not cameras_path.exists():
        raise DatasetFormatError(f"Camera file {cameras_path} does not exist")
    try:
        cameras = json.loads(cameras_path.read_text())
    except json.JSONDecodeError as error:
        raise DatasetFormatError(f"Camera file {cameras_path} is not valid JSON: {error}")
    if not isinstance(cameras, dict) or not isinstance(cameras.get("views"), list) or "box" not in cameras:
        raise DatasetFormatError(f'Camera file {cameras_path} must be an object with "box" and "views"')
    return cameras


def _optional_pfm(path):
    return read_pfm(path) if path.exists() else None


def _load_view(root, entry, require_mono_depth):
    try:
        name, split = entry["name"], entry["split"]
        camera = Camera.from_dict(entry)
    except KeyError as error:
        raise DatasetFormatError(f"Camera entry {entry.get('name', '?')} is missing key {error}")
    if split not in SPLITS:
        raise DatasetFormatError(f'View {name} has unknown split "{split}"')

    mono_path = root / MONO_DEPTH_DIRECTORY / f"{name}.pfm"
    if split == "train" and require_mono_depth and not mono_path.exists():
        raise DatasetFormatError(f"Monocular depth {mono_path} is required for depth regularization but is missing")
    mono = _optional_pfm(mono_path)
    gt = _optional_pfm(root / GT_DEPTH_DIRECTORY / f"{name}.pfm")
    gt_alpha = _optional_pfm(root / GT_ALPHA_DIRECTORY / f"{name}.pfm")
    view = View(
        name=name,
        image=read_png(root / IMAGES_DIRECTORY / f"{name}.png"),
        camera=camera,
        mono_depth=None if mono is None else DepthMap(mono),
        gt_depth=None if gt is None else DepthMap(gt, gt_alpha),
    )
    return split, view


def load_dataset(path, require_mono_depth=False):
    """Read a dataset directory written by save_dataset (or by hand, following the layout above).

    Args:
        path: dataset directory
        require_mono_depth: Optional, fail when a training view has no monocular depth file
    Returns:
        Dataset
    Raises:
        DatasetFormatError: missing directory or files, malformed JSON or PFM
        DimensionMismatchError: an image or depth map that does not match its camera
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetFormatError(f"Dataset directory {root} does not exist")
    cameras = _read_cameras(root)
    splits = {split: [] for split in SPLITS}
    for entry in cameras["views"]:
        split, view = _load_view(root, entry, require_mono_depth)
        splits[split].append(view)
    try:
        box = tuple(np.asarray(cameras["box"], dtype=float).reshape(2, 3))
    except ValueError:
        raise DatasetFormatError(f'"box" in {root / CAMERAS_FILENAME} must be two 3-vectors')
    logger.info("Loaded %d train and %d test views from %s", len(splits["train"]), len(splits["test"]), root)
    return Dataset(train=splits["train"], test=splits["test"], box=box)
