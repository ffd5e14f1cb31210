"""Small numpy network toolkit: layers with explicit gradients, Adam, bundles."""

from gesturelift.nn.bundle import decode_bundle, encode_bundle, load_bundle, save_bundle
from gesturelift.nn.gradcheck import grad_check
from gesturelift.nn.layers import (
    GRU,
    BiGRU,
    Conv1d,
    Dense,
    conv1d,
    conv1d_backward,
    mse,
    receptive_field,
    relu,
    relu_backward,
    sigmoid,
    sinusoidal_embedding,
    tanh,
    tanh_backward,
)
from gesturelift.nn.model import Model
from gesturelift.nn.params import ParamStore, adam_update, clip_grad_norm

__all__ = [
    "BiGRU",
    "Conv1d",
    "Dense",
    "Model",
    "GRU",
    "ParamStore",
    "adam_update",
    "clip_grad_norm",
    "conv1d",
    "conv1d_backward",
    "decode_bundle",
    "encode_bundle",
    "grad_check",
    "load_bundle",
    "mse",
    "receptive_field",
    "relu",
    "relu_backward",
    "save_bundle",
    "sigmoid",
    "sinusoidal_embedding",
    "tanh",
    "tanh_backward",
]
