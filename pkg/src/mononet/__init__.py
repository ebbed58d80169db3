"""Neural networks that are monotone in a chosen hidden layer, with tools to
train, verify and interpret them."""
from .errors import (
    ContractError,
    DataError,
    DimensionError,
    DivergedTrainingError,
    FormatError,
    MonoNetError,
    NonFiniteError,
    ParseError,
    SpecError,
    StratificationError,
    UndefinedCorrelationError,
    UnsupportedVersionError,
)
from .tensor import Tape, Tensor, gradients, matmul, elementwise
from .model import (
    LayerSpec,
    Model,
    SignMatrix,
    build_mononet,
    deserialize,
    forward,
    load,
    mononet_spec,
    monotone_signs,
    parse_spec_string,
    save,
    serialize,
)
from .dataio import Dataset, load_csv, load_idx, split
from .training import TrainConfig, TrainHistory, evaluate_accuracy, loss, train

__version__ = "0.1.0"
