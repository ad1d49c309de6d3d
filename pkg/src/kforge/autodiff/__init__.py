from .checkpoint import CheckpointError, load_arrays, save_arrays
from .ops import (
    ShapeError,
    add,
    batchnorm1d,
    conv1d,
    conv_output_length,
    embedding_lookup,
    global_avg_pool,
    linear,
    log_softmax,
    lstm_cell,
    mul,
    relu,
    select,
    softmax,
    softmax_cross_entropy,
    tensor_sum,
)
from .optim import SGD, Adam, adam_step, clip_grad_norm, cosine_annealing_lr, sgd_step, zero_grad
from .sampling import categorical_sample, categorical_sample_rows, stream
from .tensor import Tape, TapeError, Tensor, active_tape, backward

__all__ = [
    "Adam", "CheckpointError", "SGD", "ShapeError", "Tape", "TapeError", "Tensor",
    "active_tape", "adam_step", "add", "backward", "batchnorm1d", "categorical_sample",
    "categorical_sample_rows", "clip_grad_norm", "conv1d", "conv_output_length",
    "cosine_annealing_lr", "embedding_lookup", "global_avg_pool", "linear", "load_arrays",
    "log_softmax", "lstm_cell", "mul", "relu", "save_arrays", "select", "sgd_step", "softmax",
    "softmax_cross_entropy", "stream", "tensor_sum", "zero_grad",
]
