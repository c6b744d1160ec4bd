"""Convolutional feature extraction over load, price, and calendar channels.

A window of aggregate load enters as a 3-channel matrix (electricity price,
calendar code, load).  A bank of 16 length-5 kernels slides over time with
no padding, followed by ReLU, non-overlapping max pooling, and a dense layer
whose output vector is the feature representation handed to the recurrent
stage.  A small 4-way linear head on top of the features serves as an
auxiliary enterprise-category classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "CONV_CHANNELS",
    "KERNEL_LENGTH",
    "N_CLASSES",
    "DEFAULT_FEATURE_DIM",
    "DEFAULT_DROPOUT",
    "InputMatrix",
    "CnnWeights",
    "FeatureVector",
    "xavier_uniform",
    "conv_forward",
    "relu",
    "pool",
    "dense_forward",
    "cnn_forward",
]

CONV_CHANNELS = 16
KERNEL_LENGTH = 5
N_CLASSES = 4
DEFAULT_FEATURE_DIM = 128
DEFAULT_DROPOUT = 0.2
MIN_WINDOW = 8

CALENDAR_CODES = (1.0, 2.0, 3.0)


def _readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class InputMatrix:
    """Aligned price / calendar / load channels over one window.

    All three rows share length ``J >= 8``.  Calendar codes are 1 (workday),
    2 (weekend), or 3 (festival); load must be non-negative.
    """

    price: np.ndarray
    calendar: np.ndarray
    load: np.ndarray

    def __post_init__(self):
        rows = {}
        for name in ("price", "calendar", "load"):
            v = _readonly(getattr(self, name))
            if v.ndim != 1:
                raise InvalidArgumentError(f"{name} row must be one-dimensional")
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} row must be finite")
            rows[name] = v
        lengths = {v.size for v in rows.values()}
        if len(lengths) != 1:
            raise InvalidArgumentError("all three rows must share one length")
        if rows["price"].size < MIN_WINDOW:
            raise InvalidArgumentError(f"window must hold at least {MIN_WINDOW} samples")
        if not np.all(np.isin(rows["calendar"], CALENDAR_CODES)):
            raise InvalidArgumentError("calendar values must be 1, 2, or 3")
        if np.any(rows["load"] < 0):
            raise InvalidArgumentError("load values must be non-negative")
        for name, v in rows.items():
            object.__setattr__(self, name, v)

    @property
    def j(self) -> int:
        return self.price.size

    def matrix(self) -> np.ndarray:
        """Channels stacked as rows: price, calendar, load."""
        return np.stack([self.price, self.calendar, self.load])


@dataclass(frozen=True)
class CnnWeights:
    """All convolutional-stage parameters.

    ``conv_kernels`` is (16, 3, 5); ``dense_weights`` maps the flattened
    pooled activations to the feature dimension; ``classifier_weights`` maps
    features to 4 category logits.  ``dropout_rate`` applies to the dense
    activations during training only.
    """

    conv_kernels: np.ndarray
    conv_biases: np.ndarray
    dense_weights: np.ndarray
    dense_bias: np.ndarray
    classifier_weights: np.ndarray
    classifier_bias: np.ndarray
    dropout_rate: float = DEFAULT_DROPOUT

    def __post_init__(self):
        arrays = {
            "conv_kernels": _readonly(self.conv_kernels),
            "conv_biases": _readonly(self.conv_biases),
            "dense_weights": _readonly(self.dense_weights),
            "dense_bias": _readonly(self.dense_bias),
            "classifier_weights": _readonly(self.classifier_weights),
            "classifier_bias": _readonly(self.classifier_bias),
        }
        for name, v in arrays.items():
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be finite")
        k = arrays["conv_kernels"]
        if k.shape != (CONV_CHANNELS, 3, KERNEL_LENGTH):
            raise InvalidArgumentError(
                f"conv_kernels must have shape {(CONV_CHANNELS, 3, KERNEL_LENGTH)}"
            )
        if arrays["conv_biases"].shape != (CONV_CHANNELS,):
            raise InvalidArgumentError("conv_biases must have one entry per channel")
        w = arrays["dense_weights"]
        if w.ndim != 2 or w.shape[0] % CONV_CHANNELS != 0:
            raise InvalidArgumentError(
                "dense_weights rows must flatten an integral pooled length"
            )
        feature_dim = w.shape[1]
        if arrays["dense_bias"].shape != (feature_dim,):
            raise InvalidArgumentError("dense_bias must match the feature dimension")
        if arrays["classifier_weights"].shape != (feature_dim, N_CLASSES):
            raise InvalidArgumentError(
                f"classifier_weights must be (feature_dim, {N_CLASSES})"
            )
        if arrays["classifier_bias"].shape != (N_CLASSES,):
            raise InvalidArgumentError(f"classifier_bias must have {N_CLASSES} entries")
        if not (0.0 <= float(self.dropout_rate) < 1.0):
            raise InvalidArgumentError("dropout_rate must lie in [0, 1)")
        for name, v in arrays.items():
            object.__setattr__(self, name, v)
        object.__setattr__(self, "dropout_rate", float(self.dropout_rate))

    @property
    def feature_dim(self) -> int:
        return self.dense_weights.shape[1]

    @property
    def pooled_length(self) -> int:
        return self.dense_weights.shape[0] // CONV_CHANNELS

    @classmethod
    def initialize(
        cls,
        j: int,
        seed: int = 0,
        feature_dim: int = DEFAULT_FEATURE_DIM,
        dropout_rate: float = DEFAULT_DROPOUT,
    ) -> "CnnWeights":
        """Seeded uniform initialization with zero biases for a window of ``j``."""
        if j < MIN_WINDOW:
            raise InvalidArgumentError(f"window must hold at least {MIN_WINDOW} samples")
        if feature_dim < 1:
            raise InvalidArgumentError("feature_dim must be positive")
        rng = np.random.default_rng(seed)
        pooled = (j - KERNEL_LENGTH + 1) // 2
        flat = CONV_CHANNELS * pooled
        kernels = xavier_uniform(rng, 3 * KERNEL_LENGTH, CONV_CHANNELS * KERNEL_LENGTH,
                                 (CONV_CHANNELS, 3, KERNEL_LENGTH))
        dense = xavier_uniform(rng, flat, feature_dim, (flat, feature_dim))
        classifier = xavier_uniform(rng, feature_dim, N_CLASSES, (feature_dim, N_CLASSES))
        return cls(
            conv_kernels=kernels,
            conv_biases=np.zeros(CONV_CHANNELS),
            dense_weights=dense,
            dense_bias=np.zeros(feature_dim),
            classifier_weights=classifier,
            classifier_bias=np.zeros(N_CLASSES),
            dropout_rate=dropout_rate,
        )


@dataclass(frozen=True)
class FeatureVector:
    """Dense feature output ``z`` plus the auxiliary 4-way logits."""

    z: np.ndarray
    class_logits: np.ndarray

    def __post_init__(self):
        z = _readonly(self.z)
        logits = _readonly(self.class_logits)
        if z.ndim != 1 or logits.shape != (N_CLASSES,):
            raise InvalidArgumentError("feature vector shapes are inconsistent")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(logits))):
            raise InvalidArgumentError("feature vector must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "class_logits", logits)


def xavier_uniform(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def conv_forward(inputs, kernels, biases, stride: int = 1) -> np.ndarray:
    """Valid (no-padding) cross-correlation summed over input channels.

    ``inputs`` is (channels, length); ``kernels`` is (out_channels,
    channels, kernel_length).  Output length is ``length - kernel_length + 1``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    k = np.asarray(kernels, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64)
    if stride != 1:
        raise InvalidArgumentError("only stride 1 is supported")
    if x.ndim != 2 or k.ndim != 3:
        raise InvalidArgumentError("inputs must be (channels, length), kernels 3-d")
    if k.shape[1] != x.shape[0]:
        raise InvalidArgumentError("kernel channel count must match the input")
    if b.shape != (k.shape[0],):
        raise InvalidArgumentError("one bias per output channel required")
    kl = k.shape[2]
    if x.shape[1] < kl:
        raise InvalidArgumentError("window shorter than the kernel")
    # windows: (channels, out_len, kl); contract channels and taps at once
    windows = np.lib.stride_tricks.sliding_window_view(x, kl, axis=1)
    return np.einsum("cok,nck->no", windows, k) + b[:, None]


def relu(x):
    """Elementwise max(x, 0); the zero input falls on the closed lower branch."""
    return np.maximum(x, 0.0)


def pool(inputs, mode: str = "max", window: int = 2, stride: int = 2) -> np.ndarray:
    """Non-overlapping pooling along time; a trailing odd element is dropped."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("inputs must be (channels, length)")
    if mode not in ("max", "avg"):
        raise InvalidArgumentError("mode must be 'max' or 'avg'")
    if window != stride:
        raise InvalidArgumentError("only non-overlapping pooling is supported")
    if window < 1 or x.shape[1] < window:
        raise InvalidArgumentError("length must reach the pooling window")
    n_out = x.shape[1] // window
    blocks = x[:, : n_out * window].reshape(x.shape[0], n_out, window)
    return blocks.max(axis=2) if mode == "max" else blocks.mean(axis=2)


def dense_forward(d, w, b, activation: str = "identity") -> np.ndarray:
    """Affine map ``d @ w + b`` followed by an activation."""
    d = np.asarray(d, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if d.ndim != 1 or w.ndim != 2 or d.size != w.shape[0] or b.shape != (w.shape[1],):
        raise InvalidArgumentError("dense shapes are inconsistent")
    if activation not in ("identity", "relu"):
        raise InvalidArgumentError("activation must be 'identity' or 'relu'")
    out = d @ w + b
    return relu(out) if activation == "relu" else out


def cnn_forward(m, weights: CnnWeights, training: bool = False, rng=None) -> FeatureVector:
    """Full convolutional stage: conv, ReLU, max-pool, dense features, logits.

    ``m`` is an :class:`InputMatrix` or a raw (3, J) array.  During training
    a Bernoulli mask zeroes dense activations at ``dropout_rate`` (``rng``
    required when the rate is nonzero); at inference the activations are
    scaled by ``1 - dropout_rate`` instead.
    """
    x = m.matrix() if isinstance(m, InputMatrix) else np.asarray(m, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 3:
        raise InvalidArgumentError("input must provide exactly 3 channels")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("input must be finite")
    pooled = pool(relu(conv_forward(x, weights.conv_kernels, weights.conv_biases)))
    flat = pooled.ravel()
    if flat.size != weights.dense_weights.shape[0]:
        raise InvalidArgumentError(
            f"window length {x.shape[1]} does not match the declared weights"
        )
    a = dense_forward(flat, weights.dense_weights, weights.dense_bias, "relu")
    rate = weights.dropout_rate
    if training:
        if rate > 0.0:
            if rng is None:
                raise InvalidArgumentError("training with dropout requires an rng")
            a = a * (rng.random(a.size) >= rate)
    else:
        a = a * (1.0 - rate)
    logits = dense_forward(a, weights.classifier_weights, weights.classifier_bias)
    return FeatureVector(a, logits)
