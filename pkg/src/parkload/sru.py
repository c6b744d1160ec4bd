"""Simple recurrent unit layers and the full disaggregation model.

Each step feeds the same input vector to three learned projections: a state
candidate, a forget gate, and a highway gate.  The cell state is a convex
combination of its previous value and the candidate, so gates never depend
on earlier hidden output and all projections for a window can be computed
in one batch; only the state recurrence is sequential.  A forward and a
reverse layer run over the window, their hidden states are concatenated,
and a small dense head maps each step to per-device power.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .cnn import CnnWeights, InputMatrix, cnn_forward, relu, xavier_uniform
from .errors import InvalidArgumentError, ParseError

__all__ = [
    "DEFAULT_HIDDEN",
    "DEFAULT_HEAD_DIM",
    "SruWeights",
    "DisaggregationModel",
    "DeviceEstimate",
    "sigmoid",
    "sru_cell_step",
    "sru_layer_forward",
    "model_forward",
    "save_model",
    "load_model",
]

DEFAULT_HIDDEN = 64
DEFAULT_HEAD_DIM = 128

MODEL_MAGIC = b"PKLD"
MODEL_VERSION = 1


def _readonly(a):
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class SruWeights:
    """One recurrent layer: candidate, forget and highway gates, input skip.

    All projections map the full step input (dimension ``I``) to the hidden
    size ``H``; the skip projection realizes the highway pass-through when
    the input dimension differs from the hidden size.
    """

    w_s: np.ndarray
    w_f: np.ndarray
    b_f: np.ndarray
    w_r: np.ndarray
    b_r: np.ndarray
    w_skip: np.ndarray

    def __post_init__(self):
        mats = {}
        for f in fields(self):
            v = _readonly(getattr(self, f.name))
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{f.name} must be finite")
            mats[f.name] = v
        h, i = mats["w_s"].shape if mats["w_s"].ndim == 2 else (0, 0)
        if h < 1 or i < 1:
            raise InvalidArgumentError("w_s must be a (hidden, input) matrix")
        for name in ("w_f", "w_r", "w_skip"):
            if mats[name].shape != (h, i):
                raise InvalidArgumentError(f"{name} must match w_s's shape")
        for name in ("b_f", "b_r"):
            if mats[name].shape != (h,):
                raise InvalidArgumentError(f"{name} must have one entry per hidden unit")
        for name, v in mats.items():
            object.__setattr__(self, name, v)

    @property
    def hidden(self) -> int:
        return self.w_s.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_s.shape[1]

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, seed: int = 0) -> "SruWeights":
        if input_dim < 1 or hidden < 1:
            raise InvalidArgumentError("input_dim and hidden must be positive")
        rng = np.random.default_rng(seed)
        draw = lambda: xavier_uniform(rng, input_dim, hidden, (hidden, input_dim))
        return cls(
            w_s=draw(),
            w_f=draw(),
            b_f=np.zeros(hidden),
            w_r=draw(),
            b_r=np.zeros(hidden),
            w_skip=draw(),
        )


def sru_cell_step(s_t, c_prev, w: SruWeights):
    """One recurrence step; returns ``(h_t, c_t)``.

    The state update is a gate-convex combination, and both gates read only
    the current input, never the previous state.
    """
    s_t = np.asarray(s_t, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if s_t.shape != (w.input_dim,):
        raise InvalidArgumentError("input vector does not match the layer input size")
    if c_prev.shape != (w.hidden,):
        raise InvalidArgumentError("state vector does not match the hidden size")
    s_tilde = w.w_s @ s_t
    f = sigmoid(w.w_f @ s_t + w.b_f)
    r = sigmoid(w.w_r @ s_t + w.b_r)
    c_t = f * c_prev + (1.0 - f) * s_tilde
    h_t = r * relu(c_t) + (1.0 - r) * (w.w_skip @ s_t)
    return h_t, c_t


def sru_layer_forward(inputs, w: SruWeights, reverse: bool = False, c0=None) -> np.ndarray:
    """Run the cell along a (T, input_dim) sequence; output is (T, hidden).

    With ``reverse`` the recurrence runs from the last step backwards and the
    output is returned in original time order.  All gate projections are
    batched up front; only the state update iterates.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != w.input_dim:
        raise InvalidArgumentError("inputs must be (T, input_dim) with T >= 1")
    if c0 is None:
        c0 = np.zeros(w.hidden)
    c = np.asarray(c0, dtype=np.float64)
    if c.shape != (w.hidden,):
        raise InvalidArgumentError("c0 does not match the hidden size")
    if reverse:
        x = x[::-1]
    s_tilde = x @ w.w_s.T
    f = sigmoid(x @ w.w_f.T + w.b_f)
    r = sigmoid(x @ w.w_r.T + w.b_r)
    skip = x @ w.w_skip.T
    c_seq = np.empty((x.shape[0], w.hidden))
    for t in range(x.shape[0]):
        c = f[t] * c + (1.0 - f[t]) * s_tilde[t]
        c_seq[t] = c
    h = r * relu(c_seq) + (1.0 - r) * skip
    return h[::-1] if reverse else h


@dataclass(frozen=True)
class DisaggregationModel:
    """Convolutional features, bidirectional recurrence, and a dense head.

    Normalization constants map raw price/load inputs into the unit range
    the network was trained in and map normalized outputs back to kW.  When
    a stored span is zero the channel is passed through with span 1.
    """

    cnn: CnnWeights
    forward_sru: SruWeights
    reverse_sru: SruWeights
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    head_w3: np.ndarray
    head_b3: np.ndarray
    window_length: int
    device_names: tuple
    price_min: float
    price_max: float
    load_min: float
    load_max: float
    device_min: np.ndarray
    device_max: np.ndarray

    def __post_init__(self):
        if not isinstance(self.cnn, CnnWeights):
            raise InvalidArgumentError("cnn must be CnnWeights")
        if not (isinstance(self.forward_sru, SruWeights) and isinstance(self.reverse_sru, SruWeights)):
            raise InvalidArgumentError("both recurrent layers must be SruWeights")
        i = 1 + self.cnn.feature_dim
        if self.forward_sru.input_dim != i or self.reverse_sru.input_dim != i:
            raise InvalidArgumentError("recurrent input size must be 1 + feature_dim")
        h = self.forward_sru.hidden
        if self.reverse_sru.hidden != h:
            raise InvalidArgumentError("forward and reverse hidden sizes must match")
        arrays = {}
        for name in ("head_w1", "head_b1", "head_w2", "head_b2", "head_w3", "head_b3",
                     "device_min", "device_max"):
            v = _readonly(getattr(self, name))
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be finite")
            arrays[name] = v
        hd = arrays["head_w1"].shape[1] if arrays["head_w1"].ndim == 2 else 0
        if arrays["head_w1"].shape != (2 * h, hd) or hd < 1:
            raise InvalidArgumentError("head_w1 must map the concatenated hidden states")
        if arrays["head_b1"].shape != (hd,) or arrays["head_w2"].shape != (hd, hd) \
                or arrays["head_b2"].shape != (hd,):
            raise InvalidArgumentError("head dense shapes are inconsistent")
        d = arrays["head_w3"].shape[1] if arrays["head_w3"].ndim == 2 else 0
        if arrays["head_w3"].shape != (hd, d) or d < 1 or arrays["head_b3"].shape != (d,):
            raise InvalidArgumentError("head output shapes are inconsistent")
        names = tuple(str(n) for n in self.device_names)
        if len(names) != d or len(set(names)) != d:
            raise InvalidArgumentError("device names must be unique, one per output")
        if arrays["device_min"].shape != (d,) or arrays["device_max"].shape != (d,):
            raise InvalidArgumentError("device normalization constants must cover all devices")
        j = int(self.window_length)
        if (j - 4) // 2 != self.cnn.pooled_length:
            raise InvalidArgumentError("window_length does not match the declared weights")
        for fl in ("price_min", "price_max", "load_min", "load_max"):
            v = float(getattr(self, fl))
            if not np.isfinite(v):
                raise InvalidArgumentError(f"{fl} must be finite")
            object.__setattr__(self, fl, v)
        for name, v in arrays.items():
            object.__setattr__(self, name, v)
        object.__setattr__(self, "window_length", j)
        object.__setattr__(self, "device_names", names)

    @property
    def hidden(self) -> int:
        return self.forward_sru.hidden

    @property
    def head_dim(self) -> int:
        return self.head_w1.shape[1]

    @property
    def n_devices(self) -> int:
        return self.head_w3.shape[1]

    @classmethod
    def initialize(
        cls,
        window_length: int,
        device_names,
        seed: int = 0,
        feature_dim: int = None,
        hidden: int = DEFAULT_HIDDEN,
        head_dim: int = DEFAULT_HEAD_DIM,
        dropout_rate: float = None,
        norm: dict = None,
    ) -> "DisaggregationModel":
        """Seeded initialization; ``norm`` may carry fitted min/max constants."""
        from .cnn import DEFAULT_DROPOUT, DEFAULT_FEATURE_DIM

        feature_dim = DEFAULT_FEATURE_DIM if feature_dim is None else feature_dim
        dropout_rate = DEFAULT_DROPOUT if dropout_rate is None else dropout_rate
        names = tuple(str(n) for n in device_names)
        d = len(names)
        if d < 1:
            raise InvalidArgumentError("at least one device required")
        seeds = np.random.SeedSequence(seed).generate_state(6)
        cnn = CnnWeights.initialize(window_length, int(seeds[0]), feature_dim, dropout_rate)
        i = 1 + feature_dim
        fwd = SruWeights.initialize(i, hidden, int(seeds[1]))
        rev = SruWeights.initialize(i, hidden, int(seeds[2]))
        r1 = np.random.default_rng(int(seeds[3]))
        r2 = np.random.default_rng(int(seeds[4]))
        r3 = np.random.default_rng(int(seeds[5]))
        norm = norm or {}
        return cls(
            cnn=cnn,
            forward_sru=fwd,
            reverse_sru=rev,
            head_w1=xavier_uniform(r1, 2 * hidden, head_dim, (2 * hidden, head_dim)),
            head_b1=np.zeros(head_dim),
            head_w2=xavier_uniform(r2, head_dim, head_dim, (head_dim, head_dim)),
            head_b2=np.zeros(head_dim),
            head_w3=xavier_uniform(r3, head_dim, d, (head_dim, d)),
            head_b3=np.zeros(d),
            window_length=window_length,
            device_names=names,
            price_min=float(norm.get("price_min", 0.0)),
            price_max=float(norm.get("price_max", 1.0)),
            load_min=float(norm.get("load_min", 0.0)),
            load_max=float(norm.get("load_max", 1.0)),
            device_min=np.asarray(norm.get("device_min", np.zeros(d)), dtype=np.float64),
            device_max=np.asarray(norm.get("device_max", np.ones(d)), dtype=np.float64),
        )


@dataclass(frozen=True)
class DeviceEstimate:
    """Non-negative per-device power traces in kW, one row per device."""

    device_names: tuple
    traces: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.device_names)
        tr = _readonly(self.traces)
        if tr.ndim != 2 or tr.shape[0] != len(names) or len(set(names)) != len(names):
            raise InvalidArgumentError("traces must be (devices, samples) with unique names")
        if not np.all(np.isfinite(tr)):
            raise InvalidArgumentError("traces must be finite")
        if np.any(tr < 0):
            raise InvalidArgumentError("traces must be non-negative")
        object.__setattr__(self, "device_names", names)
        object.__setattr__(self, "traces", tr)

    def trace(self, name: str) -> np.ndarray:
        if name not in self.device_names:
            raise InvalidArgumentError(f"unknown device {name!r}")
        return self.traces[self.device_names.index(name)]


def _span(lo: float, hi: float) -> float:
    return hi - lo if hi > lo else 1.0


def normalized_channels(window: InputMatrix, model: DisaggregationModel) -> np.ndarray:
    """Map a raw window into the model's normalized 3-channel matrix."""
    price = (window.price - model.price_min) / _span(model.price_min, model.price_max)
    load = (window.load - model.load_min) / _span(model.load_min, model.load_max)
    return np.stack([price, window.calendar.astype(np.float64), load])


def model_forward(window, model: DisaggregationModel) -> DeviceEstimate:
    """Disaggregate one window into per-device kW traces.

    ``window`` is a raw :class:`InputMatrix` (normalized internally) or an
    already-normalized (3, J) array as used during training.  Outputs are
    clamped at zero in normalized units and then mapped back to kW.
    """
    if isinstance(window, InputMatrix):
        if window.j != model.window_length:
            raise InvalidArgumentError(
                f"window length {window.j} does not match the model "
                f"({model.window_length})"
            )
        x = normalized_channels(window, model)
    else:
        x = np.asarray(window, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != 3 or x.shape[1] != model.window_length:
            raise InvalidArgumentError("normalized window must be (3, J) for the model")
    fv = cnn_forward(x, model.cnn, training=False)
    load_n = x[2]
    j = x.shape[1]
    s = np.empty((j, 1 + fv.z.size))
    s[:, 0] = load_n
    s[:, 1:] = fv.z
    hf = sru_layer_forward(s, model.forward_sru, reverse=False)
    hr = sru_layer_forward(s, model.reverse_sru, reverse=True)
    hcat = np.concatenate([hf, hr], axis=1)
    a1 = relu(hcat @ model.head_w1 + model.head_b1)
    a2 = relu(a1 @ model.head_w2 + model.head_b2)
    out = np.maximum(a2 @ model.head_w3 + model.head_b3, 0.0)
    spans = np.array([_span(lo, hi) for lo, hi in zip(model.device_min, model.device_max)])
    kw = out * spans + model.device_min
    return DeviceEstimate(model.device_names, kw.T)


# serialized weight arrays, in declaration order
_WEIGHT_PATHS = (
    "cnn.conv_kernels",
    "cnn.conv_biases",
    "cnn.dense_weights",
    "cnn.dense_bias",
    "cnn.classifier_weights",
    "cnn.classifier_bias",
    "forward_sru.w_s",
    "forward_sru.w_f",
    "forward_sru.b_f",
    "forward_sru.w_r",
    "forward_sru.b_r",
    "forward_sru.w_skip",
    "reverse_sru.w_s",
    "reverse_sru.w_f",
    "reverse_sru.b_f",
    "reverse_sru.w_r",
    "reverse_sru.b_r",
    "reverse_sru.w_skip",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
    "head_w3",
    "head_b3",
)


def _get_path(model: DisaggregationModel, path: str) -> np.ndarray:
    obj = model
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def save_model(model: DisaggregationModel, path) -> None:
    """Write the binary model file.

    Layout: magic ``PKLD``; u32 version; u32 window length, feature dim,
    hidden size, head dim, and device count; f64 dropout rate; f64 price and
    load min/max; f64 device min/max arrays; length-prefixed UTF-8 device
    names; every weight array in declaration order as little-endian f64.
    """
    d = model.n_devices
    parts = [
        MODEL_MAGIC,
        struct.pack(
            "<6I",
            MODEL_VERSION,
            model.window_length,
            model.cnn.feature_dim,
            model.hidden,
            model.head_dim,
            d,
        ),
        struct.pack("<5d", model.cnn.dropout_rate, model.price_min, model.price_max,
                    model.load_min, model.load_max),
        model.device_min.astype("<f8").tobytes(),
        model.device_max.astype("<f8").tobytes(),
    ]
    for name in model.device_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for path_name in _WEIGHT_PATHS:
        parts.append(_get_path(model, path_name).astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ParseError("model file is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_model(path) -> DisaggregationModel:
    """Read a model written by :func:`save_model`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MODEL_MAGIC:
        raise ParseError("not a model file (bad magic)")
    version, j, feature_dim, hidden, head_dim, d = struct.unpack("<6I", r.take(24))
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}")
    dropout, price_min, price_max, load_min, load_max = struct.unpack("<5d", r.take(40))
    device_min = r.f64(d)
    device_max = r.f64(d)
    names = []
    for _ in range(d):
        (ln,) = struct.unpack("<I", r.take(4))
        names.append(r.take(ln).decode("utf-8"))
    pooled = (j - 4) // 2
    flat = 16 * pooled
    i = 1 + feature_dim
    shapes = {
        "cnn.conv_kernels": (16, 3, 5),
        "cnn.conv_biases": (16,),
        "cnn.dense_weights": (flat, feature_dim),
        "cnn.dense_bias": (feature_dim,),
        "cnn.classifier_weights": (feature_dim, 4),
        "cnn.classifier_bias": (4,),
        "head_w1": (2 * hidden, head_dim),
        "head_b1": (head_dim,),
        "head_w2": (head_dim, head_dim),
        "head_b2": (head_dim,),
        "head_w3": (head_dim, d),
        "head_b3": (d,),
    }
    for layer in ("forward_sru", "reverse_sru"):
        shapes[f"{layer}.w_s"] = (hidden, i)
        shapes[f"{layer}.w_f"] = (hidden, i)
        shapes[f"{layer}.b_f"] = (hidden,)
        shapes[f"{layer}.w_r"] = (hidden, i)
        shapes[f"{layer}.b_r"] = (hidden,)
        shapes[f"{layer}.w_skip"] = (hidden, i)
    arrays = {}
    for path_name in _WEIGHT_PATHS:
        shape = shapes[path_name]
        arrays[path_name] = r.f64(int(np.prod(shape))).reshape(shape)
    if r.pos != len(blob):
        raise ParseError("model file has trailing bytes")
    try:
        cnn = CnnWeights(
            conv_kernels=arrays["cnn.conv_kernels"],
            conv_biases=arrays["cnn.conv_biases"],
            dense_weights=arrays["cnn.dense_weights"],
            dense_bias=arrays["cnn.dense_bias"],
            classifier_weights=arrays["cnn.classifier_weights"],
            classifier_bias=arrays["cnn.classifier_bias"],
            dropout_rate=dropout,
        )
        sru_layers = {}
        for layer in ("forward_sru", "reverse_sru"):
            sru_layers[layer] = SruWeights(
                w_s=arrays[f"{layer}.w_s"],
                w_f=arrays[f"{layer}.w_f"],
                b_f=arrays[f"{layer}.b_f"],
                w_r=arrays[f"{layer}.w_r"],
                b_r=arrays[f"{layer}.b_r"],
                w_skip=arrays[f"{layer}.w_skip"],
            )
        return DisaggregationModel(
            cnn=cnn,
            forward_sru=sru_layers["forward_sru"],
            reverse_sru=sru_layers["reverse_sru"],
            head_w1=arrays["head_w1"],
            head_b1=arrays["head_b1"],
            head_w2=arrays["head_w2"],
            head_b2=arrays["head_b2"],
            head_w3=arrays["head_w3"],
            head_b3=arrays["head_b3"],
            window_length=j,
            device_names=tuple(names),
            price_min=price_min,
            price_max=price_max,
            load_min=load_min,
            load_max=load_max,
            device_min=device_min,
            device_max=device_max,
        )
    except InvalidArgumentError as exc:
        raise ParseError(f"model file is internally inconsistent: {exc}") from exc
