"""Loss, exact gradients, optimization loop, and gradient verification.

The network is trained end to end: mean squared error on normalized
per-device power plus a small cross-entropy term that keeps the auxiliary
4-way category head meaningful.  Reverse-mode gradients are written out by
hand against the exact forward computations of the convolutional and
recurrent stages, batched over windows, and checked against central finite
differences.  The optimizer state and the training loop derive everything
(shuffling, dropout masks, initialization) from one seed, so a run is
reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cnn import CALENDAR_CODES, CnnWeights, KERNEL_LENGTH, N_CLASSES, relu
from .data import ParkDataset, SAMPLES_PER_DAY, cluster_profiles
from .errors import (
    DegenerateSignalError,
    InvalidArgumentError,
    NumericFailureError,
    TrainingDivergedError,
)
from .sru import (
    DisaggregationModel,
    SruWeights,
    _WEIGHT_PATHS,
    _get_path,
    _span,
    sigmoid,
)

__all__ = [
    "DEFAULT_CE_WEIGHT",
    "DIVERGENCE_LIMIT",
    "TrainConfig",
    "LossHistory",
    "TrainingBatch",
    "loss_mse",
    "backward",
    "finite_difference_check",
    "train",
    "moving_average",
]

DEFAULT_CE_WEIGHT = 0.1

# training aborts once the batch loss clears this bound
DIVERGENCE_LIMIT = 1e6

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings plus model capacity knobs.

    ``learning_rate`` may be zero (no updates, useful for probing);
    ``ce_weight`` scales the auxiliary classifier term in the total loss;
    ``clip_norm`` bounds the global L2 norm of each gradient step.  The
    capacity fields are forwarded to model initialization.
    """

    learning_rate: float = 1e-3
    batch_size: int = 16
    max_iterations: int = 1000
    seed: int = 0
    loss: str = "mse"
    optimizer: str = "adam"
    feature_dim: int | None = None
    hidden: int | None = None
    head_dim: int | None = None
    dropout_rate: float | None = None
    ce_weight: float = DEFAULT_CE_WEIGHT
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be positive")
        if self.loss != "mse":
            raise InvalidArgumentError("loss must be 'mse'")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgumentError("optimizer must be 'adam' or 'sgd'")
        if self.ce_weight < 0:
            raise InvalidArgumentError("ce_weight must be non-negative")
        if self.clip_norm <= 0:
            raise InvalidArgumentError("clip_norm must be positive")


@dataclass(frozen=True)
class LossHistory:
    """Per-iteration losses for the regression and classifier heads.

    ``regression`` is the mean squared error in normalized units;
    ``classifier`` is the unweighted cross entropy.  Both carry one entry
    per completed iteration.
    """

    regression: tuple
    classifier: tuple

    def __post_init__(self):
        reg = tuple(float(v) for v in self.regression)
        cls = tuple(float(v) for v in self.classifier)
        if len(reg) != len(cls):
            raise InvalidArgumentError("both heads must record the same iterations")
        for label, values in (("regression", reg), ("classifier", cls)):
            if any(not np.isfinite(v) or v < 0 for v in values):
                raise InvalidArgumentError(f"{label} losses must be finite and non-negative")
        object.__setattr__(self, "regression", reg)
        object.__setattr__(self, "classifier", cls)

    def __len__(self) -> int:
        return len(self.regression)

    def to_text(self, head: str = "regression") -> str:
        """Two-column export (iteration, loss) for one head."""
        if head not in ("regression", "classifier"):
            raise InvalidArgumentError("head must be 'regression' or 'classifier'")
        values = getattr(self, head)
        lines = [f"{i} {v:.17g}" for i, v in enumerate(values, start=1)]
        return "\n".join(lines) + "\n" if lines else ""


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean; entry ``i`` averages iterations ``i+1 .. i+window``."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or window < 1 or v.size < window:
        raise InvalidArgumentError("need a 1-D sequence at least as long as the window")
    return np.convolve(v, np.full(window, 1.0 / window), mode="valid")


@dataclass(frozen=True)
class TrainingBatch:
    """Pre-normalized windows with targets, category labels, and masks.

    ``windows`` is (B, 3, J) with rows price, calendar, load (price and
    load already mapped through the model's normalization); ``targets`` is
    (B, D, J) in normalized units; ``labels`` are category indices below 4;
    ``dropout_masks`` is a 0/1 array of shape (B, feature_dim), or None to
    train without dropout.
    """

    windows: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    dropout_masks: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.windows, dtype=np.float64)
        t = np.array(self.targets, dtype=np.float64)
        lab = np.array(self.labels, dtype=np.int64)
        if w.ndim != 3 or w.shape[1] != 3 or w.shape[2] < KERNEL_LENGTH:
            raise InvalidArgumentError("windows must be (B, 3, J)")
        if t.ndim != 3 or t.shape[0] != w.shape[0] or t.shape[2] != w.shape[2]:
            raise InvalidArgumentError("targets must be (B, D, J) aligned with windows")
        if lab.shape != (w.shape[0],):
            raise InvalidArgumentError("labels must hold one entry per window")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("windows and targets must be finite")
        if not np.all(np.isin(w[:, 1, :], CALENDAR_CODES)):
            raise InvalidArgumentError("calendar rows must carry codes 1, 2 or 3")
        if lab.min() < 0 or lab.max() >= N_CLASSES:
            raise InvalidArgumentError(f"labels must lie in [0, {N_CLASSES})")
        masks = self.dropout_masks
        if masks is not None:
            masks = np.array(masks, dtype=np.float64)
            if masks.shape[0] != w.shape[0] or masks.ndim != 2:
                raise InvalidArgumentError("dropout_masks must be (B, feature_dim)")
            if not np.all(np.isin(masks, (0.0, 1.0))):
                raise InvalidArgumentError("dropout_masks must be 0/1")
        for name, v in (("windows", w), ("targets", t), ("labels", lab)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if masks is not None:
            masks.flags.writeable = False
        object.__setattr__(self, "dropout_masks", masks)

    @property
    def size(self) -> int:
        return int(self.windows.shape[0])


def loss_mse(pred, target) -> float:
    """Mean over all entries of the squared error."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidArgumentError("pred and target must share one shape")
    return float(np.mean((p - t) ** 2))


def _params_from_model(model: DisaggregationModel) -> dict:
    """Writable copies of every trainable array, keyed by path."""
    return {path: np.array(_get_path(model, path)) for path in _WEIGHT_PATHS}


def _model_with_params(template: DisaggregationModel, params: dict) -> DisaggregationModel:
    """Frozen model combining the template's metadata with new weights."""

    def sru_from(prefix: str) -> SruWeights:
        return SruWeights(
            w_s=params[f"{prefix}.w_s"],
            w_f=params[f"{prefix}.w_f"],
            b_f=params[f"{prefix}.b_f"],
            w_r=params[f"{prefix}.w_r"],
            b_r=params[f"{prefix}.b_r"],
            w_skip=params[f"{prefix}.w_skip"],
        )

    cnn = CnnWeights(
        conv_kernels=params["cnn.conv_kernels"],
        conv_biases=params["cnn.conv_biases"],
        dense_weights=params["cnn.dense_weights"],
        dense_bias=params["cnn.dense_bias"],
        classifier_weights=params["cnn.classifier_weights"],
        classifier_bias=params["cnn.classifier_bias"],
        dropout_rate=template.cnn.dropout_rate,
    )
    return replace(
        template,
        cnn=cnn,
        forward_sru=sru_from("forward_sru"),
        reverse_sru=sru_from("reverse_sru"),
        head_w1=params["head_w1"],
        head_b1=params["head_b1"],
        head_w2=params["head_w2"],
        head_b2=params["head_b2"],
        head_w3=params["head_w3"],
        head_b3=params["head_b3"],
    )


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericFailureError("non-finite values", stage=name)


def _sru_layer_batched(x, params, prefix):
    """Batched layer pass over (B, T, I) inputs in processing order."""
    w_s = params[f"{prefix}.w_s"]
    w_f = params[f"{prefix}.w_f"]
    w_r = params[f"{prefix}.w_r"]
    w_skip = params[f"{prefix}.w_skip"]
    u = x @ w_s.T
    f = sigmoid(x @ w_f.T + params[f"{prefix}.b_f"])
    r = sigmoid(x @ w_r.T + params[f"{prefix}.b_r"])
    skip = x @ w_skip.T
    c_seq = np.empty_like(u)
    c = np.zeros((x.shape[0], w_s.shape[0]))
    for t in range(x.shape[1]):
        c = f[:, t] * c + (1.0 - f[:, t]) * u[:, t]
        c_seq[:, t] = c
    h = r * relu(c_seq) + (1.0 - r) * skip
    return {"x": x, "u": u, "f": f, "r": r, "skip": skip, "c_seq": c_seq, "h": h}


def _forward_batch(params: dict, batch: TrainingBatch) -> dict:
    """Training-mode forward over a whole batch, keeping intermediates."""
    x = batch.windows
    kernels = params["cnn.conv_kernels"]
    windows = np.lib.stride_tricks.sliding_window_view(x, KERNEL_LENGTH, axis=2)
    pre = np.einsum("bcok,nck->bno", windows, kernels)
    pre = pre + params["cnn.conv_biases"][None, :, None]
    ac = relu(pre)
    _check_finite("conv", ac)

    b, channels, length = ac.shape
    pooled_len = length // 2
    blocks = ac[:, :, : 2 * pooled_len].reshape(b, channels, pooled_len, 2)
    pool_idx = blocks.argmax(axis=3)
    pooled = np.take_along_axis(blocks, pool_idx[..., None], axis=3)[..., 0]
    flat = pooled.reshape(b, channels * pooled_len)
    if flat.shape[1] != params["cnn.dense_weights"].shape[0]:
        raise InvalidArgumentError("window length does not match the model weights")

    ad = relu(flat @ params["cnn.dense_weights"] + params["cnn.dense_bias"])
    feature_dim = ad.shape[1]
    masks = batch.dropout_masks
    if masks is None:
        masks = np.ones_like(ad)
    elif masks.shape[1] != feature_dim:
        raise InvalidArgumentError("dropout_masks do not match the feature dimension")
    z = ad * masks
    logits = z @ params["cnn.classifier_weights"] + params["cnn.classifier_bias"]
    _check_finite("dense", ad, logits)

    j = x.shape[2]
    s = np.empty((b, j, 1 + feature_dim))
    s[:, :, 0] = x[:, 2, :]
    s[:, :, 1:] = z[:, None, :]
    fwd = _sru_layer_batched(s, params, "forward_sru")
    rev = _sru_layer_batched(s[:, ::-1], params, "reverse_sru")
    _check_finite("sru", fwd["h"], rev["h"])

    hcat = np.concatenate([fwd["h"], rev["h"][:, ::-1]], axis=2)
    a1 = relu(hcat @ params["head_w1"] + params["head_b1"])
    a2 = relu(a1 @ params["head_w2"] + params["head_b2"])
    out = a2 @ params["head_w3"] + params["head_b3"]
    _check_finite("head", out)
    return {
        "windows": windows,
        "ac": ac,
        "pool_idx": pool_idx,
        "pooled_len": pooled_len,
        "flat": flat,
        "ad": ad,
        "masks": masks,
        "z": z,
        "logits": logits,
        "s": s,
        "fwd": fwd,
        "rev": rev,
        "hcat": hcat,
        "a1": a1,
        "a2": a2,
        "out": out,
    }


def _losses(cache: dict, batch: TrainingBatch, average: bool):
    """(regression, classifier) losses under the requested reduction."""
    out = cache["out"]
    err = out - np.transpose(batch.targets, (0, 2, 1))
    reg_per = np.mean(err * err, axis=(1, 2))

    logits = cache["logits"]
    m = logits.max(axis=1)
    lse = m + np.log(np.sum(np.exp(logits - m[:, None]), axis=1))
    ce_per = lse - logits[np.arange(batch.size), batch.labels]

    reduce = np.mean if average else np.sum
    return float(reduce(reg_per)), float(reduce(ce_per))


def _batch_loss(params: dict, batch: TrainingBatch, ce_weight: float, average: bool) -> float:
    reg, ce = _losses(_forward_batch(params, batch), batch, average)
    return reg + ce_weight * ce


def _sru_layer_backward(cache: dict, g_h, params: dict, prefix: str, grads: dict):
    """Gradient of one layer; returns the gradient on its (B, T, I) input."""
    x, u, f, r = cache["x"], cache["u"], cache["f"], cache["r"]
    skip, c_seq = cache["skip"], cache["c_seq"]

    g_r = g_h * (relu(c_seq) - skip)
    g_pr = g_r * r * (1.0 - r)
    g_skip = g_h * (1.0 - r)
    g_c_direct = g_h * r * (c_seq > 0)

    g_c_total = np.empty_like(c_seq)
    carry = np.zeros(c_seq.shape[::2])
    for t in range(c_seq.shape[1] - 1, -1, -1):
        carry = g_c_direct[:, t] + carry
        g_c_total[:, t] = carry
        carry = f[:, t] * carry

    c_prev = np.concatenate([np.zeros_like(c_seq[:, :1]), c_seq[:, :-1]], axis=1)
    g_f = g_c_total * (c_prev - u)
    g_pf = g_f * f * (1.0 - f)
    g_u = g_c_total * (1.0 - f)

    grads[f"{prefix}.w_s"] = np.einsum("bth,bti->hi", g_u, x)
    grads[f"{prefix}.w_f"] = np.einsum("bth,bti->hi", g_pf, x)
    grads[f"{prefix}.b_f"] = g_pf.sum(axis=(0, 1))
    grads[f"{prefix}.w_r"] = np.einsum("bth,bti->hi", g_pr, x)
    grads[f"{prefix}.b_r"] = g_pr.sum(axis=(0, 1))
    grads[f"{prefix}.w_skip"] = np.einsum("bth,bti->hi", g_skip, x)
    return (
        g_u @ params[f"{prefix}.w_s"]
        + g_pf @ params[f"{prefix}.w_f"]
        + g_pr @ params[f"{prefix}.w_r"]
        + g_skip @ params[f"{prefix}.w_skip"]
    )


def _backward_params(params: dict, batch: TrainingBatch, ce_weight: float, average: bool):
    """Exact gradients of the total loss; returns (grads, reg, classifier)."""
    cache = _forward_batch(params, batch)
    b = batch.size
    out, a2, a1, hcat = cache["out"], cache["a2"], cache["a1"], cache["hcat"]
    grads = {}

    d, j = batch.targets.shape[1], batch.targets.shape[2]
    g_out = (2.0 / (d * j)) * (out - np.transpose(batch.targets, (0, 2, 1)))

    grads["head_w3"] = np.einsum("bth,btd->hd", a2, g_out)
    grads["head_b3"] = g_out.sum(axis=(0, 1))
    g_p2 = (g_out @ params["head_w3"].T) * (a2 > 0)
    grads["head_w2"] = np.einsum("bth,btk->hk", a1, g_p2)
    grads["head_b2"] = g_p2.sum(axis=(0, 1))
    g_p1 = (g_p2 @ params["head_w2"].T) * (a1 > 0)
    grads["head_w1"] = np.einsum("bth,btk->hk", hcat, g_p1)
    grads["head_b1"] = g_p1.sum(axis=(0, 1))
    g_hcat = g_p1 @ params["head_w1"].T

    hidden = params["forward_sru.w_s"].shape[0]
    g_s = _sru_layer_backward(cache["fwd"], g_hcat[:, :, :hidden], params, "forward_sru", grads)
    g_s_rev = _sru_layer_backward(
        cache["rev"], g_hcat[:, ::-1, hidden:], params, "reverse_sru", grads
    )
    g_s = g_s + g_s_rev[:, ::-1]

    logits, z = cache["logits"], cache["z"]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(axis=1, keepdims=True)
    g_logits = probs.copy()
    g_logits[np.arange(b), batch.labels] -= 1.0
    g_logits *= ce_weight

    grads["cnn.classifier_weights"] = z.T @ g_logits
    grads["cnn.classifier_bias"] = g_logits.sum(axis=0)
    g_z = g_s[:, :, 1:].sum(axis=1) + g_logits @ params["cnn.classifier_weights"].T

    g_pd = g_z * cache["masks"] * (cache["ad"] > 0)
    grads["cnn.dense_weights"] = cache["flat"].T @ g_pd
    grads["cnn.dense_bias"] = g_pd.sum(axis=0)
    g_flat = g_pd @ params["cnn.dense_weights"].T

    ac, pool_idx, pooled_len = cache["ac"], cache["pool_idx"], cache["pooled_len"]
    g_pooled = g_flat.reshape(ac.shape[0], ac.shape[1], pooled_len)
    g_blocks = np.zeros((ac.shape[0], ac.shape[1], pooled_len, 2))
    np.put_along_axis(g_blocks, pool_idx[..., None], g_pooled[..., None], axis=3)
    g_ac = np.zeros_like(ac)
    g_ac[:, :, : 2 * pooled_len] = g_blocks.reshape(ac.shape[0], ac.shape[1], 2 * pooled_len)
    g_pre = g_ac * (ac > 0)

    grads["cnn.conv_kernels"] = np.einsum("bno,bcok->nck", g_pre, cache["windows"])
    grads["cnn.conv_biases"] = g_pre.sum(axis=(0, 2))

    if average:
        for key in grads:
            grads[key] = grads[key] / b
    reg, ce = _losses(cache, batch, average)
    return grads, reg, ce


def backward(
    model: DisaggregationModel,
    batch: TrainingBatch,
    average: bool = True,
    ce_weight: float = DEFAULT_CE_WEIGHT,
):
    """Exact gradients of the total loss for one batch.

    The total loss is the regression MSE plus ``ce_weight`` times the
    classifier cross entropy, summed over the batch and divided by the
    batch size when ``average`` is set.

    Returns
    -------
    grads : dict
        One array per weight, keyed by the model's weight paths, with the
        same shapes as the weights themselves.
    regression_loss : float
    classifier_loss : float
        Unweighted cross entropy under the same reduction.
    """
    if ce_weight < 0:
        raise InvalidArgumentError("ce_weight must be non-negative")
    params = _params_from_model(model)
    return _backward_params(params, batch, ce_weight, bool(average))


def finite_difference_check(
    model: DisaggregationModel,
    batch: TrainingBatch,
    step: float = 1e-5,
    ce_weight: float = DEFAULT_CE_WEIGHT,
) -> float:
    """Worst relative disagreement between exact and numerical gradients.

    Every weight entry is perturbed by ``+-|step|`` and the centered
    difference of the total loss is compared against :func:`backward`.
    The error is relative to the larger magnitude, falling back to the
    absolute difference when both gradients are below 1e-8.  The result is
    invariant under the sign of ``step``.
    """
    h = abs(float(step))
    if not 1e-7 <= h <= 1e-3:
        raise InvalidArgumentError("step magnitude must lie in [1e-7, 1e-3]")
    params = _params_from_model(model)
    grads, _, _ = _backward_params(params, batch, ce_weight, average=True)
    worst = 0.0
    for key in _WEIGHT_PATHS:
        flat = params[key].ravel()
        g = grads[key].ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            plus = _batch_loss(params, batch, ce_weight, average=True)
            flat[i] = saved - h
            minus = _batch_loss(params, batch, ce_weight, average=True)
            flat[i] = saved
            fd = (plus - minus) / (2.0 * h)
            denom = max(abs(fd), abs(g[i]))
            err = abs(fd - g[i]) if denom < 1e-8 else abs(fd - g[i]) / denom
            if err > worst:
                worst = err
    return worst


def _day_labels(dataset: ParkDataset, seed: int) -> np.ndarray:
    """Category label per day from k-means over daily aggregate shapes."""
    profiles = dataset.daily_profiles()
    k = min(N_CLASSES, len(np.unique(profiles, axis=0)))
    try:
        _, labels = cluster_profiles(profiles, k, seed)
    except DegenerateSignalError:
        labels = np.zeros(dataset.days, dtype=np.int64)
    return labels


def _dataset_arrays(dataset: ParkDataset, model: DisaggregationModel):
    """Normalized windows (n, 3, J) and targets (n, D, J), one per day."""
    j = SAMPLES_PER_DAY
    n = dataset.days
    price = (dataset.price.values - model.price_min) / _span(model.price_min, model.price_max)
    load = (dataset.aggregate.values - model.load_min) / _span(model.load_min, model.load_max)
    windows = np.stack(
        [
            price.reshape(n, j),
            dataset.calendar.values.reshape(n, j),
            load.reshape(n, j),
        ],
        axis=1,
    )
    targets = np.empty((n, len(dataset.device_names), j))
    for d, series in enumerate(dataset.device_loads):
        span = _span(model.device_min[d], model.device_max[d])
        targets[:, d, :] = ((series.values - model.device_min[d]) / span).reshape(n, j)
    return windows, targets


def train(dataset: ParkDataset, config: TrainConfig | None = None):
    """Fit a disaggregation model on a park with per-device ground truth.

    Windows are whole days (96 samples, stride 96).  Normalization bounds
    for price, load, and every device are fitted on the dataset; category
    labels come from k-means over daily aggregate shapes.  The run aborts
    with :class:`TrainingDivergedError` (carrying the history so far) when
    the loss leaves the finite range or exceeds ``DIVERGENCE_LIMIT``.

    Returns
    -------
    model : DisaggregationModel
    history : LossHistory
    """
    config = TrainConfig() if config is None else config
    if dataset.days < 2:
        raise InvalidArgumentError("training needs at least 2 windows (days)")
    if not dataset.device_names:
        raise InvalidArgumentError("training needs per-device ground truth")

    norm = {
        "price_min": float(dataset.price.values.min()),
        "price_max": float(dataset.price.values.max()),
        "load_min": float(dataset.aggregate.values.min()),
        "load_max": float(dataset.aggregate.values.max()),
        "device_min": np.array([s.values.min() for s in dataset.device_loads]),
        "device_max": np.array([s.values.max() for s in dataset.device_loads]),
    }
    template = DisaggregationModel.initialize(
        SAMPLES_PER_DAY,
        dataset.device_names,
        seed=config.seed,
        feature_dim=config.feature_dim,
        hidden=config.hidden if config.hidden is not None else 64,
        head_dim=config.head_dim if config.head_dim is not None else 128,
        dropout_rate=config.dropout_rate,
        norm=norm,
    )
    windows, targets = _dataset_arrays(dataset, template)
    labels = _day_labels(dataset, config.seed)

    params = _params_from_model(template)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    rate = template.cnn.dropout_rate
    feature_dim = template.cnn.feature_dim
    n = dataset.days
    size = min(config.batch_size, n)
    reg_hist, cls_hist = [], []

    for it in range(1, config.max_iterations + 1):
        idx = rng.permutation(n)[:size]
        masks = None
        if rate > 0.0:
            masks = (rng.random((size, feature_dim)) >= rate).astype(np.float64)
        batch = TrainingBatch(windows[idx], targets[idx], labels[idx], masks)
        try:
            grads, reg, ce = _backward_params(params, batch, config.ce_weight, average=True)
        except NumericFailureError as exc:
            raise TrainingDivergedError(
                str(exc), history=LossHistory(tuple(reg_hist), tuple(cls_hist))
            ) from exc
        total = reg + config.ce_weight * ce
        if not np.isfinite(total) or total > DIVERGENCE_LIMIT:
            raise TrainingDivergedError(
                f"loss {total} left the allowed range at iteration {it}",
                history=LossHistory(tuple(reg_hist), tuple(cls_hist)),
            )
        reg_hist.append(reg)
        cls_hist.append(ce)

        norm_sq = 0.0
        for g in grads.values():
            norm_sq += float(np.sum(g * g))
        gnorm = np.sqrt(norm_sq)
        if gnorm > config.clip_norm:
            factor = config.clip_norm / gnorm
            for key in grads:
                grads[key] = grads[key] * factor

        lr = config.learning_rate
        if config.optimizer == "adam":
            c1 = 1.0 - _ADAM_BETA1**it
            c2 = 1.0 - _ADAM_BETA2**it
            for key, g in grads.items():
                adam_m[key] = _ADAM_BETA1 * adam_m[key] + (1.0 - _ADAM_BETA1) * g
                adam_v[key] = _ADAM_BETA2 * adam_v[key] + (1.0 - _ADAM_BETA2) * g * g
                params[key] = params[key] - lr * (adam_m[key] / c1) / (
                    np.sqrt(adam_v[key] / c2) + _ADAM_EPS
                )
        else:
            for key, g in grads.items():
                params[key] = params[key] - lr * g

    history = LossHistory(tuple(reg_hist), tuple(cls_hist))
    return _model_with_params(template, params), history
