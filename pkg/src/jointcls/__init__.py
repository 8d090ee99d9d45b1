"""Label-conditioned text classification in numpy.

Candidate labels and the text are encoded together, so a single encoder pass
scores every label at once. See :mod:`jointcls.model` for the variants.
"""

from .assembly import Vocab, assemble, batch
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledExample, generate_synthetic, load_dataset, save_dataset
from .errors import (
    ConfigError,
    ContractError,
    DatasetError,
    JointClsError,
    LabelOverflowError,
    NonFiniteError,
    NumericDomainError,
    SequenceLengthError,
    ShapeError,
    SplitError,
    VocabError,
)
from .metrics import MetricsReport, evaluate
from .model import Classifier, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "Classifier", "ModelConfig", "Vocab", "assemble", "batch", "LabeledExample",
    "generate_synthetic", "load_dataset", "save_dataset", "save_checkpoint", "load_checkpoint",
    "evaluate", "MetricsReport", "JointClsError", "ShapeError", "NumericDomainError",
    "NonFiniteError", "ContractError", "ConfigError", "VocabError", "SequenceLengthError",
    "LabelOverflowError", "DatasetError", "SplitError",
]
