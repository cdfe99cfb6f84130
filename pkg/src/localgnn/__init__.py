"""Graph neural networks with trainable median/max neighborhood activations."""

from .backprop import Gradients, activation_backward, conv_backward, finite_difference_check, model_backward
from .filters import (
    ActivationWeights,
    ConvTaps,
    SelectionRecord,
    conv_bank_forward,
    graph_convolution,
    local_activation_forward,
    max_operator,
    median_operator,
    relu_forward,
)
from .graph_core import (
    Graph,
    NeighborhoodTable,
    Permutation,
    ShiftOperator,
    ShiftVariant,
    apply_shift,
    build_shift_operator,
    neighborhoods,
    permute,
    permute_signal,
    spectral_rescale,
)
from .model import GnnLayer, GnnModel, Readout, build_model, model_forward, readout_forward, softmax_cross_entropy
from .optim import AdamState, Split, TrainConfig, adam_step, evaluate, node_dropout, train

__version__ = "0.1.0"
