from .dataset.files import load_dataset, save_dataset  # noqa: F401
from .dataset.synth import SceneSpec, synth_scene  # noqa: F401
from .evaluate import evaluate  # noqa: F401
from .export import export  # noqa: F401
from .train.config import TrainConfig, load_config  # noqa: F401
from .train.trainer import fit  # noqa: F401
