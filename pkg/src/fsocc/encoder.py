"""Feature encoders: the 4-block convolutional network and a small MLP.

The convolutional encoder is four identical blocks, each a same-padded 3x3
convolution with 64 filters and bias, batch normalization, 2x2 max pooling
(floor division of the spatial extents) and ReLU; the final activation is
flattened. The MLP variant (two ReLU hidden layers, no normalization)
exists to keep gradient and convergence tests fast.

Parameters live in a plain name -> array dict. A forward pass that should
be differentiated binds them onto a tape first (bind_params) and passes the
bound tensors to encode; evaluation passes paths skip the tape entirely.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

CONV_BLOCKS = 4
CONV_FILTERS = 64
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
ARCHITECTURES = ("conv4", "mlp")


@dataclass
class EncoderParams:
    """Trainable weights plus batch-norm running statistics and shape metadata."""

    architecture: str
    input_shape: tuple
    feature_dim: int
    hidden_dim: int
    weights: dict
    bn_stats: dict

    def copy(self):
        return EncoderParams(
            architecture=self.architecture,
            input_shape=self.input_shape,
            feature_dim=self.feature_dim,
            hidden_dim=self.hidden_dim,
            weights={k: v.copy() for k, v in self.weights.items()},
            bn_stats={k: v.copy() for k, v in self.bn_stats.items()},
        )


def param_count(params):
    return sum(v.size for v in params.weights.values())


def init_encoder(architecture, input_shape, seed, hidden_dim=32):
    """Fresh parameters: He-initialized weights, identity batch norm.

    Weights are zero-mean normal with variance 2/fan-in; biases and batch
    norm shifts start at zero, scales at one, running variance at one.
    Deterministic for a given seed (Philox-keyed generator).
    """
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {architecture!r}")
    input_shape = tuple(int(s) for s in input_shape)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    weights, bn_stats = {}, {}

    if architecture == "conv4":
        if len(input_shape) != 3:
            raise ConfigError(f"conv4 needs an (h, w, c) input shape, got {input_shape}")
        h, w, c = input_shape
        if min(h, w) < 16:
            raise ConfigError(
                f"conv4 needs spatial extents >= 16 (four 2x2 poolings), got {h}x{w}"
            )
        cin = c
        for i in range(1, CONV_BLOCKS + 1):
            fan_in = 3 * 3 * cin
            weights[f"conv{i}_w"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(3, 3, cin, CONV_FILTERS)
            )
            weights[f"conv{i}_b"] = np.zeros(CONV_FILTERS)
            weights[f"bn{i}_gamma"] = np.ones(CONV_FILTERS)
            weights[f"bn{i}_beta"] = np.zeros(CONV_FILTERS)
            bn_stats[f"bn{i}_mean"] = np.zeros(CONV_FILTERS)
            bn_stats[f"bn{i}_var"] = np.ones(CONV_FILTERS)
            cin = CONV_FILTERS
        fh, fw = h, w
        for _ in range(CONV_BLOCKS):
            fh //= 2
            fw //= 2
        feature_dim = fh * fw * CONV_FILTERS
    else:
        if hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {hidden_dim}")
        in_dim = int(np.prod(input_shape))
        weights["fc1_w"] = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, hidden_dim))
        weights["fc1_b"] = np.zeros(hidden_dim)
        weights["fc2_w"] = rng.normal(0.0, np.sqrt(2.0 / hidden_dim), size=(hidden_dim, hidden_dim))
        weights["fc2_b"] = np.zeros(hidden_dim)
        feature_dim = hidden_dim

    return EncoderParams(
        architecture=architecture,
        input_shape=input_shape,
        feature_dim=feature_dim,
        hidden_dim=int(hidden_dim),
        weights=weights,
        bn_stats=bn_stats,
    )


def bind_params(params, tape):
    """Register every trainable weight as a leaf on the tape."""
    return {name: Tensor.param(arr, tape) for name, arr in params.weights.items()}


def encode(params, batch, train=False, bound=None):
    """Map a batch of raw examples to (n, feature_dim) features.

    train=True uses batch statistics in the normalization layers and updates
    the running statistics in place (momentum 0.1, variance floored at the
    normalization epsilon); eval mode reads the running statistics and is a
    pure function. Pass the dict from bind_params as `bound` to make the
    output differentiable with respect to the weights.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim < 2 or x.shape[0] < 1:
        raise ContractError(f"batch must be (n, ...) with n >= 1, got shape {x.shape}")
    use = bound if bound is not None else {
        name: Tensor(arr) for name, arr in params.weights.items()
    }

    if params.architecture == "mlp":
        in_dim = int(np.prod(params.input_shape))
        if x.data.ndim > 2:
            x = ad.reshape(x, (x.shape[0], in_dim))
        if x.shape[1] != in_dim:
            raise ContractError(f"batch feature size {x.shape[1]} != encoder input {in_dim}")
        h = ad.relu(ad.add(ad.matmul(x, use["fc1_w"]), use["fc1_b"]))
        return ad.relu(ad.add(ad.matmul(h, use["fc2_w"]), use["fc2_b"]))

    if x.data.ndim != 4 or x.shape[1:] != params.input_shape:
        raise ContractError(
            f"batch shape {x.shape} does not match conv4 input {params.input_shape}"
        )
    if train and x.shape[0] < 2:
        raise ContractError("train-mode batch norm needs a batch of at least 2 examples")
    for i in range(1, CONV_BLOCKS + 1):
        x = ad.conv2d(x, use[f"conv{i}_w"], use[f"conv{i}_b"])
        gamma, beta = use[f"bn{i}_gamma"], use[f"bn{i}_beta"]
        if train:
            x, batch_mean, batch_var = ad.batch_norm_train(x, gamma, beta, BN_EPS)
            stats = params.bn_stats
            stats[f"bn{i}_mean"] = (
                (1.0 - BN_MOMENTUM) * stats[f"bn{i}_mean"] + BN_MOMENTUM * batch_mean
            )
            stats[f"bn{i}_var"] = np.maximum(
                (1.0 - BN_MOMENTUM) * stats[f"bn{i}_var"] + BN_MOMENTUM * batch_var,
                BN_EPS,
            )
        else:
            x = ad.batch_norm_eval(
                x,
                gamma,
                beta,
                params.bn_stats[f"bn{i}_mean"],
                params.bn_stats[f"bn{i}_var"],
                BN_EPS,
            )
        x = ad.maxpool2x2(x)
        x = ad.relu(x)
    return ad.reshape(x, (x.shape[0], params.feature_dim))
