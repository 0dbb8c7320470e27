"""Multi-step AIS trajectory forecasting on a small numpy autograd core."""

from .data import REGIMES, VARIABLES, GeneratorConfig, Scaler, generate_synthetic, load_csv
from .experiment import RunSpec, prepare, run
from .models import BlockConfig, build_model
from .tensor import GradTape, Rng, Tensor
from .training import SEEDS, TrainConfig, evaluate, train

__all__ = [
    "REGIMES", "VARIABLES", "GeneratorConfig", "Scaler", "generate_synthetic", "load_csv",
    "RunSpec", "prepare", "run", "BlockConfig", "build_model", "GradTape", "Rng", "Tensor",
    "SEEDS", "TrainConfig", "evaluate", "train",
]
