"""Confusion counts, detection indices, and the disaggregation report.

On/off detection is scored per device through a power threshold, and four
indices are derived from the counts: accuracy, precision, recall, and an
F1 score in two conventions.  ``f1_half`` is precision times recall over
their sum, which tops out at 0.5; ``f1_standard`` carries the usual factor
of two.  Undefined rates (zero denominators) are reported as absent, never
as zero.  The report adds the correlation coefficient between estimated
and true traces and unweighted means across devices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ParkDataset
from .errors import DegenerateSignalError, InvalidArgumentError
from .series import TimeSeries, correlation_coefficient
from .sru import DeviceEstimate

__all__ = [
    "DEFAULT_THRESHOLD_FRACTION",
    "Confusion",
    "MetricSet",
    "EvalReport",
    "confusion",
    "metrics",
    "evaluate_disaggregation",
]

# a device counts as "on" above this fraction of its peak true power
DEFAULT_THRESHOLD_FRACTION = 0.10

# floor for degenerate (all-zero) devices so the threshold stays positive
MIN_THRESHOLD = 1e-12


@dataclass(frozen=True)
class Confusion:
    """On/off detection counts; at least one sample must be counted."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        counts = (self.tp, self.fp, self.tn, self.fn)
        if any(int(c) != c or c < 0 for c in counts):
            raise InvalidArgumentError("confusion counts must be non-negative integers")
        for name in ("tp", "fp", "tn", "fn"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.total < 1:
            raise InvalidArgumentError("confusion must count at least one sample")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _rate(numerator: float, denominator: float):
    return numerator / denominator if denominator > 0 else None


@dataclass(frozen=True)
class MetricSet:
    """The four detection indices; absent entries mark undefined rates.

    ``f1_half`` is precision times recall over their sum and never exceeds
    0.5; ``f1_standard`` is exactly twice it.
    """

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1_half: float | None
    f1_standard: float | None

    def __post_init__(self):
        for name in ("accuracy", "precision", "recall", "f1_standard"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1]")
        if self.f1_half is not None and not 0.0 <= self.f1_half <= 0.5:
            raise InvalidArgumentError("f1_half must lie in [0, 0.5]")
        if (self.f1_half is None) != (self.f1_standard is None):
            raise InvalidArgumentError("the two F1 conventions must be defined together")


def confusion(pred, truth, on_threshold: float) -> Confusion:
    """Count on/off agreement between two power traces.

    A sample is "on" when its power strictly exceeds ``on_threshold``.
    Both traces may be :class:`TimeSeries` or plain arrays of equal length.
    """
    p = pred.values if isinstance(pred, TimeSeries) else np.asarray(pred, dtype=np.float64)
    t = truth.values if isinstance(truth, TimeSeries) else np.asarray(truth, dtype=np.float64)
    if p.ndim != 1 or p.shape != t.shape or p.size == 0:
        raise InvalidArgumentError("pred and truth must be equal-length 1-D traces")
    if not on_threshold > 0:
        raise InvalidArgumentError("on_threshold must be positive")
    p_on = p > on_threshold
    t_on = t > on_threshold
    return Confusion(
        tp=int(np.sum(p_on & t_on)),
        fp=int(np.sum(p_on & ~t_on)),
        tn=int(np.sum(~p_on & ~t_on)),
        fn=int(np.sum(~p_on & t_on)),
    )


def metrics(c: Confusion) -> MetricSet:
    """Accuracy, precision, recall, and both F1 conventions from counts.

    Rates with zero denominators come back as None; the F1 pair needs both
    precision and recall defined and not jointly zero.
    """
    if not isinstance(c, Confusion):
        raise InvalidArgumentError("metrics expects a Confusion")
    accuracy = _rate(c.tp + c.tn, c.total)
    precision = _rate(c.tp, c.tp + c.fp)
    recall = _rate(c.tp, c.tp + c.fn)
    f1_half = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1_half = precision * recall / (precision + recall)
    f1_standard = None if f1_half is None else 2.0 * f1_half
    return MetricSet(accuracy, precision, recall, f1_half, f1_standard)


def _mean_defined(values):
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


@dataclass(frozen=True)
class EvalReport:
    """Per-device confusions, indices, and trace correlations, plus means.

    Rows follow the estimate's device order.  Means are unweighted over
    the devices where a quantity is defined; a quantity undefined for all
    devices yields an absent mean.
    """

    device_names: tuple
    confusions: tuple
    device_metrics: tuple
    correlations: tuple
    mean_metrics: MetricSet
    mean_correlation: float | None

    def __post_init__(self):
        names = tuple(str(n) for n in self.device_names)
        n = len(names)
        if n < 1 or len(set(names)) != n:
            raise InvalidArgumentError("device names must be unique and non-empty")
        if len(self.confusions) != n or len(self.device_metrics) != n \
                or len(self.correlations) != n:
            raise InvalidArgumentError("all per-device columns must align")
        if not all(isinstance(c, Confusion) for c in self.confusions):
            raise InvalidArgumentError("confusions must be Confusion instances")
        if not all(isinstance(m, MetricSet) for m in self.device_metrics):
            raise InvalidArgumentError("device_metrics must be MetricSet instances")
        for cc in self.correlations:
            if cc is not None and not -1.0 - 1e-12 <= cc <= 1.0 + 1e-12:
                raise InvalidArgumentError("correlations must lie in [-1, 1]")
        object.__setattr__(self, "device_names", names)
        object.__setattr__(self, "confusions", tuple(self.confusions))
        object.__setattr__(self, "device_metrics", tuple(self.device_metrics))
        object.__setattr__(self, "correlations", tuple(self.correlations))

    def _rows(self):
        for i, name in enumerate(self.device_names):
            yield name, self.device_metrics[i], self.correlations[i]
        yield "mean", self.mean_metrics, self.mean_correlation

    def to_text(self) -> str:
        """Aligned table: accuracy, precision, recall, both F1 forms, CC."""

        def cell(v):
            return "   -  " if v is None else f"{v:.4f}"

        width = max(len("device"), *(len(n) for n in self.device_names))
        header = (f"{'device':<{width}}  accuracy  precision  recall  "
                  "f1_half  f1_standard  cc")
        lines = [header]
        for name, m, cc in self._rows():
            lines.append(
                f"{name:<{width}}  {cell(m.accuracy):<8}  {cell(m.precision):<9}  "
                f"{cell(m.recall):<6}  {cell(m.f1_half):<7}  "
                f"{cell(m.f1_standard):<11}  {cell(cc)}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        def cell(v):
            return "" if v is None else f"{v:.17g}"

        lines = ["device,accuracy,precision,recall,f1_half,f1_standard,cc"]
        for name, m, cc in self._rows():
            lines.append(
                f"{name},{cell(m.accuracy)},{cell(m.precision)},{cell(m.recall)},"
                f"{cell(m.f1_half)},{cell(m.f1_standard)},{cell(cc)}"
            )
        return "\n".join(lines) + "\n"


def evaluate_disaggregation(
    estimates: DeviceEstimate,
    truth: ParkDataset,
    on_threshold_fraction: float = DEFAULT_THRESHOLD_FRACTION,
) -> EvalReport:
    """Score estimated per-device traces against ground truth.

    The on/off threshold for each device is ``on_threshold_fraction`` times
    that device's maximum true power (floored at a tiny positive value for
    all-zero devices).  Correlation is absent for devices whose estimated
    or true trace is constant.  Report rows follow the estimate's order.
    """
    if not isinstance(estimates, DeviceEstimate):
        raise InvalidArgumentError("estimates must be a DeviceEstimate")
    if not 0.0 < on_threshold_fraction < 1.0:
        raise InvalidArgumentError("on_threshold_fraction must lie in (0, 1)")
    if set(estimates.device_names) != set(truth.device_names):
        raise InvalidArgumentError("estimate and truth device sets differ")
    if estimates.traces.shape[1] != truth.n_samples:
        raise InvalidArgumentError("estimate length does not match the dataset")

    confusions, device_metrics, correlations = [], [], []
    for name in estimates.device_names:
        est = estimates.trace(name)
        true = truth.device(name).values
        threshold = max(on_threshold_fraction * float(true.max()), MIN_THRESHOLD)
        c = confusion(est, true, threshold)
        confusions.append(c)
        device_metrics.append(metrics(c))
        try:
            cc = correlation_coefficient(TimeSeries(est), TimeSeries(true))
        except DegenerateSignalError:
            cc = None
        correlations.append(cc)

    mean_metrics = MetricSet(
        accuracy=_mean_defined([m.accuracy for m in device_metrics]),
        precision=_mean_defined([m.precision for m in device_metrics]),
        recall=_mean_defined([m.recall for m in device_metrics]),
        f1_half=_mean_defined([m.f1_half for m in device_metrics]),
        f1_standard=_mean_defined([m.f1_standard for m in device_metrics]),
    )
    return EvalReport(
        device_names=estimates.device_names,
        confusions=tuple(confusions),
        device_metrics=tuple(device_metrics),
        correlations=tuple(correlations),
        mean_metrics=mean_metrics,
        mean_correlation=_mean_defined(correlations),
    )
