"""Small numpy layer library with hand-written gradients."""

from .attention import AttentionParams, attention_backward, attention_forward, attention_fuse
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import check_gradients, numeric_grad, relative_error
from .gru import (
    GruLayerParams,
    bigru_backward,
    bigru_forward,
    gru_forward,
    gru_scan,
    gru_scan_backward,
    xavier,
)
from .layers import dense, dense_backward, masked_softmax, sigmoid
from .optim import Adam

__all__ = [
    "Adam",
    "AttentionParams",
    "CheckpointError",
    "GruLayerParams",
    "attention_backward",
    "attention_forward",
    "attention_fuse",
    "bigru_backward",
    "bigru_forward",
    "check_gradients",
    "dense",
    "dense_backward",
    "gru_forward",
    "gru_scan",
    "gru_scan_backward",
    "load_tensors",
    "masked_softmax",
    "numeric_grad",
    "relative_error",
    "save_tensors",
    "sigmoid",
    "xavier",
]
