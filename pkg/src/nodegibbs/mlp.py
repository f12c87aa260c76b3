"""Multilayer perceptron evaluation, classification losses, and the Gaussian prior.

Parameters of an MLP with widths (k_0, ..., k_rho) live in a single flat
float64 vector.  The layout is layer-major, node-major: node k of layer j
owns k_{j-1} consecutive incoming weights followed by its bias, so every
node (and every contiguous sub-range of a node) is a flat slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, log_softmax

__all__ = [
    "ActivationKind",
    "MlpArchitecture",
    "ParameterLayout",
    "ParameterTag",
    "LabeledDataset",
    "GaussianPrior",
    "param_count",
    "unpack_parameters",
    "softmax",
    "apply_activation",
    "forward",
    "activations_from_layer",
    "output_nll",
    "cross_entropy",
    "binary_cross_entropy",
    "dataset_nll",
    "log_likelihood",
]


class ActivationKind(Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


@dataclass(frozen=True)
class MlpArchitecture:
    """Widths and activations of a feedforward network.

    Parameters
    ----------
    widths : tuple of int
        Node counts per layer, input first: (k_0, k_1, ..., k_rho).
    hidden_activation : ActivationKind
        Applied to every hidden layer. Softmax is not allowed here.
    output_activation : ActivationKind
        Applied to the output layer: softmax for multiclass heads,
        sigmoid for a single-node binary head.
    """

    widths: tuple[int, ...]
    hidden_activation: ActivationKind = ActivationKind.SIGMOID
    output_activation: ActivationKind = ActivationKind.SOFTMAX

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"all widths must be >= 1, got {self.widths}")
        if self.hidden_activation is ActivationKind.SOFTMAX:
            raise ValueError("softmax is only allowed at the output layer")

    @property
    def depth(self) -> int:
        """Number of parameterized layers (hidden plus output)."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def is_binary(self) -> bool:
        """True for the single-sigmoid-output binary classification head."""
        return (
            self.output_dim == 1
            and self.output_activation is ActivationKind.SIGMOID
        )

    @property
    def class_count(self) -> int:
        """Number of classes the network distinguishes."""
        return 2 if self.is_binary else self.output_dim


def param_count(arch: MlpArchitecture) -> int:
    """Total parameter count: sum over layers of k_j * (k_{j-1} + 1)."""
    w = arch.widths
    return sum(w[j] * (w[j - 1] + 1) for j in range(1, len(w)))


@dataclass(frozen=True)
class ParameterTag:
    """Location of one flat parameter: layer and node are 1-based."""

    layer: int
    node: int
    source: int  # 1-based weight source index, or 0 for the bias
    is_bias: bool


@dataclass(frozen=True)
class ParameterLayout:
    """Index arithmetic for the flat parameter vector of an architecture."""

    arch: MlpArchitecture

    @property
    def size(self) -> int:
        return param_count(self.arch)

    def layer_offset(self, layer: int) -> int:
        """Flat position where layer's segment starts (layer is 1-based)."""
        w = self.arch.widths
        if not 1 <= layer <= self.arch.depth:
            raise ValueError(f"layer {layer} out of range 1..{self.arch.depth}")
        return sum(w[j] * (w[j - 1] + 1) for j in range(1, layer))

    def layer_slice(self, layer: int) -> slice:
        w = self.arch.widths
        start = self.layer_offset(layer)
        return slice(start, start + w[layer] * (w[layer - 1] + 1))

    def node_slice(self, layer: int, node: int) -> slice:
        """Slice holding node's k_{j-1} weights followed by its bias."""
        w = self.arch.widths
        if not 1 <= node <= w[layer]:
            raise ValueError(f"node {node} out of range 1..{w[layer]}")
        span = w[layer - 1] + 1
        start = self.layer_offset(layer) + (node - 1) * span
        return slice(start, start + span)

    def describe(self, flat_index: int) -> ParameterTag:
        """Map a flat position back to its (layer, node, source) location."""
        if not 0 <= flat_index < self.size:
            raise ValueError(f"index {flat_index} out of range 0..{self.size - 1}")
        w = self.arch.widths
        rest = flat_index
        for layer in range(1, len(w)):
            span = w[layer - 1] + 1
            layer_size = w[layer] * span
            if rest < layer_size:
                node, offset = divmod(rest, span)
                is_bias = offset == span - 1
                return ParameterTag(
                    layer=layer,
                    node=node + 1,
                    source=0 if is_bias else offset + 1,
                    is_bias=is_bias,
                )
            rest -= layer_size
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs paired with integer labels.

    Multiclass labels are 1-based (1..K); binary labels are {0, 1}.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D (points x features) array")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ValueError("labels must be 1-D with one entry per input row")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.inputs[indices], self.labels[indices])

    def validate_for(self, arch: MlpArchitecture) -> None:
        if self.feature_dim != arch.input_dim:
            raise ValueError(
                f"feature dim {self.feature_dim} != input width {arch.input_dim}"
            )
        if arch.is_binary:
            bad = (self.labels < 0) | (self.labels > 1)
        else:
            bad = (self.labels < 1) | (self.labels > arch.output_dim)
        if bad.any():
            raise ValueError("labels outside the class range of the network")


def unpack_parameters(
    arch: MlpArchitecture, theta: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W_j, b_j) per layer into the flat vector, W_j of shape (k_j, k_{j-1}).

    The returned arrays alias theta's buffer, so in-place writes to theta
    are visible through them.
    """
    theta = np.asarray(theta)
    if theta.shape != (param_count(arch),):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, expected ({param_count(arch)},)"
        )
    out = []
    pos = 0
    w = arch.widths
    for j in range(1, len(w)):
        span = w[j - 1] + 1
        seg = theta[pos : pos + w[j] * span].reshape(w[j], span)
        out.append((seg[:, :-1], seg[:, -1]))
        pos += w[j] * span
    return out


def softmax(g: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rejects non-finite input."""
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(g).all():
        raise ValueError("softmax input must be finite")
    shifted = g - g.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def apply_activation(g: np.ndarray, kind: ActivationKind) -> np.ndarray:
    if kind is ActivationKind.SIGMOID:
        return expit(g)
    if kind is ActivationKind.SOFTMAX:
        return softmax(g)
    return g


def activations_from_layer(
    arch: MlpArchitecture,
    weights: list[tuple[np.ndarray, np.ndarray]],
    h_prev: np.ndarray,
    start_layer: int,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Run layers start_layer..depth from a given previous activation.

    Parameters
    ----------
    weights : list of (W, b)
        Per-layer parameters as returned by unpack_parameters.
    h_prev : ndarray
        Activation of layer start_layer - 1 (the raw inputs when
        start_layer is 1), shape (s, k_{start-1}).
    start_layer : int
        First layer (1-based) to evaluate.

    Returns
    -------
    hidden : list of ndarray
        Post-activations of layers start_layer..depth-1.
    final_preactivation : ndarray
        Pre-activation of the output layer, shape (s, k_rho).
    """
    depth = arch.depth
    hidden = []
    h = h_prev
    for j in range(start_layer, depth + 1):
        wj, bj = weights[j - 1]
        g = h @ wj.T + bj
        if j == depth:
            return hidden, g
        h = apply_activation(g, arch.hidden_activation)
        hidden.append(h)
    raise AssertionError("unreachable")


def forward(arch: MlpArchitecture, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Output post-activation for a single input vector or a batch matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != arch.input_dim:
        raise ValueError(
            f"input has {batch.shape[1]} features, expected {arch.input_dim}"
        )
    weights = unpack_parameters(arch, theta)
    _, g = activations_from_layer(arch, weights, batch, 1)
    out = apply_activation(g, arch.output_activation)
    return out[0] if single else out


def output_nll(
    arch: MlpArchitecture,
    final_preactivation: np.ndarray,
    labels: np.ndarray,
    normalized: bool = False,
) -> float:
    """Classification loss from the output layer's pre-activation.

    Softmax head: negative sum of log-softmax entries picked by the
    1-based labels. Sigmoid head: Bernoulli cross-entropy via logaddexp,
    stable for saturated pre-activations. Set normalized to divide by
    the number of points.
    """
    g = final_preactivation
    if arch.is_binary:
        # logaddexp(0, +g) is -log(1-p), logaddexp(0, -g) is -log(p)
        sign = 1.0 - 2.0 * labels
        total = float(np.logaddexp(0.0, sign * g[:, 0]).sum())
    else:
        if labels.min() < 1 or labels.max() > arch.output_dim:
            raise ValueError("labels outside 1..output_dim")
        logp = log_softmax(g, axis=-1)
        total = -float(logp[np.arange(g.shape[0]), labels - 1].sum())
    return total / g.shape[0] if normalized else total


def cross_entropy(
    arch: MlpArchitecture,
    theta: np.ndarray,
    data: LabeledDataset,
    normalized: bool = False,
) -> float:
    """Multiclass cross-entropy loss; unnormalized sums over points."""
    if arch.output_activation is not ActivationKind.SOFTMAX:
        raise ValueError("cross_entropy requires a softmax output layer")
    data.validate_for(arch)
    weights = unpack_parameters(arch, theta)
    _, g = activations_from_layer(arch, weights, data.inputs, 1)
    return output_nll(arch, g, data.labels, normalized)


def binary_cross_entropy(
    arch: MlpArchitecture, theta: np.ndarray, data: LabeledDataset
) -> float:
    """Bernoulli cross-entropy for the single-sigmoid-output head."""
    if not arch.is_binary:
        raise ValueError("binary_cross_entropy requires a single sigmoid output")
    data.validate_for(arch)
    weights = unpack_parameters(arch, theta)
    _, g = activations_from_layer(arch, weights, data.inputs, 1)
    return output_nll(arch, g, data.labels)


def dataset_nll(
    arch: MlpArchitecture,
    theta: np.ndarray,
    data: LabeledDataset,
    normalized: bool = False,
) -> float:
    """Negative log-likelihood of the dataset under either head type.

    This is the sampler's loss: multiclass cross-entropy for softmax
    heads, Bernoulli cross-entropy for the binary head.
    """
    data.validate_for(arch)
    weights = unpack_parameters(arch, theta)
    _, g = activations_from_layer(arch, weights, data.inputs, 1)
    return output_nll(arch, g, data.labels, normalized)


def log_likelihood(
    arch: MlpArchitecture, theta: np.ndarray, data: LabeledDataset
) -> float:
    """Log-likelihood via the direct product form.

    Deliberately computed from the probabilities themselves (softmax
    then log, or sigmoid then log) rather than through the loss
    functions, so the identity log_likelihood == -dataset_nll is a
    check between two independent evaluation routes.
    """
    data.validate_for(arch)
    out = forward(arch, theta, data.inputs)
    if arch.is_binary:
        p = out[:, 0]
        y = data.labels.astype(np.float64)
        return float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    picked = out[np.arange(data.size), data.labels - 1]
    return float(np.log(picked).sum())


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic zero-mean normal prior N(0, variance * I)."""

    variance: float = 10.0

    def __post_init__(self) -> None:
        if not self.variance > 0:
            raise ValueError("prior variance must be positive")

    def log_density(self, theta: np.ndarray) -> float:
        """Full log-density including the normalizing constant."""
        theta = np.asarray(theta, dtype=np.float64)
        n = theta.size
        quad = float(theta @ theta) / (2.0 * self.variance)
        return -0.5 * n * math.log(2.0 * math.pi * self.variance) - quad

    def log_density_subset(self, theta: np.ndarray, indices: np.ndarray) -> float:
        """Log-density of the marginal over an index set (independence)."""
        return self.log_density(np.asarray(theta)[indices])

    def log_ratio(self, new_values: np.ndarray, old_values: np.ndarray) -> float:
        """log pi(new) - log pi(old) over one block; constants cancel."""
        new_values = np.asarray(new_values, dtype=np.float64)
        old_values = np.asarray(old_values, dtype=np.float64)
        return -(float(new_values @ new_values) - float(old_values @ old_values)) / (
            2.0 * self.variance
        )
