"""The five swept hyperparameters and their admissible values."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .optim import OPTIMIZERS

# Grid orderings; the first grid point is (rmsprop, elu, 1e-3, True, True).
ACTIVATIONS = ("elu", "exponential", "selu", "relu", "sigmoid", "tanh")
LEARNING_RATES = (1e-3, 1e-4)
FLAGS = (True, False)


@dataclass(frozen=True)
class HyperParams:
    optimizer: str = "rmsprop"
    activation: str = "elu"
    learning_rate: float = 1e-3
    use_maxpool: bool = True
    use_batchnorm: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.learning_rate not in LEARNING_RATES:
            raise ValueError(f"learning_rate must be one of {LEARNING_RATES}, got {self.learning_rate!r}")
        if not isinstance(self.use_maxpool, bool) or not isinstance(self.use_batchnorm, bool):
            raise ValueError("use_maxpool and use_batchnorm must be booleans")

    def to_dict(self) -> dict:
        return asdict(self)

    def label(self) -> str:
        mp = "MP" if self.use_maxpool else "noMP"
        bn = "BN" if self.use_batchnorm else "noBN"
        return f"{self.optimizer}/{self.activation}/{self.learning_rate:g}/{mp}/{bn}"
