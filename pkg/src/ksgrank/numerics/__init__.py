from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, gradcheck
from .layers import LSTM, BiLSTM, GRUCell, Linear, bilstm, gru_cell, linear, lstm
from .optim import AdamState, NonFiniteGradient, adam_step
from .params import ParameterSet
from .tensor import Tensor, constant, get_default_dtype, parameter, set_default_dtype

__all__ = [
    "ops", "Tensor", "constant", "parameter", "set_default_dtype", "get_default_dtype",
    "ParameterSet", "AdamState", "adam_step", "NonFiniteGradient",
    "gradcheck", "check_gradients", "Linear", "GRUCell", "LSTM", "BiLSTM",
    "linear", "gru_cell", "lstm", "bilstm", "save_checkpoint", "load_checkpoint",
]
