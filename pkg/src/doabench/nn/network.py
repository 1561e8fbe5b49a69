"""Network description, parameter containers, initialization and the forward
/ backward driver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNormLayer,
    ConvLayer,
    DenseLayer,
    DropoutLayer,
    FlattenLayer,
    ReluLayer,
    SigmoidLayer,
)

__all__ = [
    "Conv2DSpec",
    "BatchNormSpec",
    "ReluSpec",
    "FlattenSpec",
    "DenseSpec",
    "DropoutSpec",
    "SigmoidSpec",
    "NetworkSpec",
    "Network",
    "init_params",
    "param_count",
    "forward",
    "TRAINABLE_KEYS",
]

# Parameter-block keys the optimizer updates; batch-norm running statistics
# are carried in the same blocks but are not trainable.
TRAINABLE_KEYS = ("kernels", "bias", "gain", "shift", "weights")


@dataclass(frozen=True)
class Conv2DSpec:
    filters: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class BatchNormSpec:
    pass


@dataclass(frozen=True)
class ReluSpec:
    pass


@dataclass(frozen=True)
class FlattenSpec:
    pass


@dataclass(frozen=True)
class DenseSpec:
    units: int


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.2


@dataclass(frozen=True)
class SigmoidSpec:
    pass


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors plus the expected input shape (H, W, C)."""

    input_shape: tuple[int, int, int]
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shape_chain()

    def shape_chain(self) -> list[tuple]:
        """Output shape after every layer; raises on incompatible chains."""
        shape = self.input_shape
        chain = []
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Conv2DSpec):
                if len(shape) != 3:
                    raise ValueError(f"layer {idx}: convolution needs a 3D input, has {shape}")
                h, w, _ = shape
                oh = (h - layer.kernel) // layer.stride + 1
                ow = (w - layer.kernel) // layer.stride + 1
                if layer.kernel > h or layer.kernel > w or oh < 1 or ow < 1:
                    raise ValueError(
                        f"layer {idx}: kernel {layer.kernel} stride {layer.stride} "
                        f"reduces {h}x{w} to an empty output"
                    )
                shape = (oh, ow, layer.filters)
            elif isinstance(layer, (BatchNormSpec, ReluSpec, SigmoidSpec)):
                pass
            elif isinstance(layer, DropoutSpec):
                pass
            elif isinstance(layer, FlattenSpec):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, DenseSpec):
                if len(shape) != 1:
                    raise ValueError(f"layer {idx}: dense needs a flat input, has {shape}")
                shape = (layer.units,)
            else:
                raise ValueError(f"layer {idx}: unknown layer descriptor {layer!r}")
            chain.append(shape)
        return chain

    @property
    def output_length(self) -> int:
        shape = self.shape_chain()[-1]
        if len(shape) != 1:
            raise ValueError("the network does not end in a flat output")
        return shape[0]


def param_count(spec: NetworkSpec) -> int:
    """Exact trainable-parameter count in closed form.

    Convolutions contribute ``kernel^2 * C_in * filters + filters``; batch
    norm contributes ``2 * C``; dense layers ``M_in * M_out + M_out``.
    Running statistics are not trainable and are not counted.
    """
    total = 0
    shape = spec.input_shape
    for layer, out_shape in zip(spec.layers, spec.shape_chain()):
        if isinstance(layer, Conv2DSpec):
            total += layer.kernel * layer.kernel * shape[-1] * layer.filters + layer.filters
        elif isinstance(layer, BatchNormSpec):
            total += 2 * shape[-1]
        elif isinstance(layer, DenseSpec):
            total += shape[0] * layer.units + layer.units
        shape = out_shape
    return total


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> list[dict]:
    """Fresh parameter blocks: fan-in-scaled Gaussian weights
    (std = sqrt(2 / fan_in)), zero biases, unit batch-norm gain."""
    params: list[dict] = []
    shape = spec.input_shape
    for layer, out_shape in zip(spec.layers, spec.shape_chain()):
        if isinstance(layer, Conv2DSpec):
            fan_in = layer.kernel * layer.kernel * shape[-1]
            kernels = rng.standard_normal(
                (layer.kernel, layer.kernel, shape[-1], layer.filters)
            ) * np.sqrt(2.0 / fan_in)
            params.append({"kernels": kernels, "bias": np.zeros(layer.filters)})
        elif isinstance(layer, BatchNormSpec):
            c = shape[-1]
            params.append(
                {
                    "gain": np.ones(c),
                    "shift": np.zeros(c),
                    "running_mean": np.zeros(c),
                    "running_var": np.ones(c),
                }
            )
        elif isinstance(layer, DenseSpec):
            fan_in = shape[0]
            weights = rng.standard_normal((layer.units, fan_in)) * np.sqrt(2.0 / fan_in)
            params.append({"weights": weights, "bias": np.zeros(layer.units)})
        else:
            params.append({})
        shape = out_shape
    return params


def _build_runtime(spec: NetworkSpec, params: list[dict]) -> list:
    layers = []
    for layer, block in zip(spec.layers, params):
        if isinstance(layer, Conv2DSpec):
            layers.append(ConvLayer(block, layer.stride))
        elif isinstance(layer, BatchNormSpec):
            layers.append(BatchNormLayer(block))
        elif isinstance(layer, ReluSpec):
            layers.append(ReluLayer())
        elif isinstance(layer, FlattenSpec):
            layers.append(FlattenLayer())
        elif isinstance(layer, DenseSpec):
            layers.append(DenseLayer(block))
        elif isinstance(layer, DropoutSpec):
            layers.append(DropoutLayer(layer.rate))
        elif isinstance(layer, SigmoidSpec):
            layers.append(SigmoidLayer())
    return layers


class Network:
    """Binds a spec to parameter blocks and runs forward/backward passes.

    The parameter arrays are shared, not copied, so an optimizer step on the
    blocks is immediately visible here.
    """

    def __init__(self, spec: NetworkSpec, params: list[dict]):
        if len(params) != len(spec.layers):
            raise ValueError("need one parameter block per layer")
        self.spec = spec
        self.params = params
        self.layers = _build_runtime(spec, params)

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        """Probabilities for a batch (B, H, W, C) or single input (H, W, C)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(
                f"input shape {x.shape[1:]} does not match the network's "
                f"{self.spec.input_shape}"
            )
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x[0] if single else x

    def backward_from_logits(self, dlogits) -> list[dict]:
        """Backpropagate a gradient taken at the final pre-sigmoid logits.

        Used with the fused sigmoid/cross-entropy gradient; the sigmoid layer
        itself is skipped. Returns per-layer gradient blocks aligned with the
        parameter blocks.
        """
        if not isinstance(self.layers[-1], SigmoidLayer):
            raise ValueError("the network must end in a sigmoid layer")
        g = np.asarray(dlogits, dtype=np.float64)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return [dict(layer.grads) for layer in self.layers]


def forward(
    spec: NetworkSpec,
    params: list[dict],
    x,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
):
    """One-shot forward pass; ``mode`` is ``"eval"`` or ``"train"``."""
    if mode not in ("eval", "train"):
        raise ValueError(f"unknown mode {mode!r}")
    return Network(spec, params).forward(x, train=(mode == "train"), rng=rng)
