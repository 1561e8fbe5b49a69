"""Self-contained trainable feed-forward engine.

Exactly the layer set needed by the covariance classifier: 2D convolution,
batch normalization, ReLU, flatten, dense, dropout and sigmoid, with binary
cross-entropy loss and the Adam optimizer. Everything runs on numpy arrays
in double precision.
"""

from .layers import (
    batchnorm_forward,
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout,
    relu_backward,
    relu_forward,
    sigmoid_forward,
)
from .network import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    DropoutSpec,
    FlattenSpec,
    Network,
    NetworkSpec,
    ReluSpec,
    SigmoidSpec,
    forward,
    init_params,
    param_count,
)
from .optim import AdamState, adam_step, init_adam_state
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "BatchNormSpec",
    "Conv2DSpec",
    "DenseSpec",
    "DropoutSpec",
    "FlattenSpec",
    "Network",
    "NetworkSpec",
    "ReluSpec",
    "SigmoidSpec",
    "adam_step",
    "batchnorm_forward",
    "bce_loss",
    "conv2d_backward",
    "conv2d_forward",
    "dense_backward",
    "dense_forward",
    "dropout",
    "forward",
    "init_adam_state",
    "init_params",
    "load_checkpoint",
    "param_count",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
    "sigmoid_forward",
]
