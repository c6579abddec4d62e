"""Minimal dense neural-network substrate on numpy."""
from .gradcheck import gradient_check, relative_error
from .layers import (
    MLP,
    Dropout,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    TransformerConfig,
    TransformerEncoder,
    TransformerEncoderLayer,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    norm,
    relu,
    softmax,
    stack,
)

__all__ = [
    "MLP", "Adam", "AdamState", "Dropout", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "Parameter", "ShapeError", "Tensor", "TransformerConfig",
    "TransformerEncoder", "TransformerEncoderLayer", "adam_step", "as_tensor", "concat",
    "gelu", "gradient_check", "layer_norm", "matmul", "no_grad", "norm", "relative_error",
    "relu", "softmax", "stack",
]
