"""Stock movement classification from prices and per-day tweet embeddings."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward, grad_check  # noqa: F401
from .models import ModelConfig, build_model  # noqa: F401
from .training import TrainConfig, train, predict  # noqa: F401
from .evaluation import evaluate  # noqa: F401
