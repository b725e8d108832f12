from .autograd import GraphError, Tensor, backward, gelu, mse_loss, relu
from .layers import ParamGroup, init_linear, layer_norm, linear, positional_encoding, self_attention
from .optim import SGD, Adam, lr_at, make_optimizer

__all__ = [
    "Adam",
    "GraphError",
    "ParamGroup",
    "SGD",
    "Tensor",
    "backward",
    "gelu",
    "init_linear",
    "layer_norm",
    "linear",
    "lr_at",
    "make_optimizer",
    "mse_loss",
    "positional_encoding",
    "relu",
    "self_attention",
]
