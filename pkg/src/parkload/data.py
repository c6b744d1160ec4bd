"""Synthetic park generation, profile clustering, scaling, and CSV I/O.

Real parks meter one aggregate feeder, so per-device ground truth exists
only when the park is constructed.  This module builds such parks from
small duty-profile descriptions (continuous, shift, cyclic), pairs them
with a three-tier time-of-use price curve and a workday/weekend/festival
calendar, and round-trips everything losslessly through a plain CSV
schema.  It also houses the min-max scaling and the k-means grouping of
daily profiles that the training pipeline leans on.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .errors import DegenerateSignalError, InvalidArgumentError, ParseError
from .series import TimeSeries, add_noise_at_snr

__all__ = [
    "SAMPLES_PER_DAY",
    "PEAK_PRICE",
    "DeviceSpec",
    "ParkDataset",
    "ClusterReport",
    "generate_park",
    "cluster_profiles",
    "write_csv",
    "load_csv",
    "normalize",
    "denormalize",
    "slice_days",
]

# 15-minute metering: 96 samples per day
SAMPLES_PER_DAY = 96

# peak-tier tariff; the valley and flat tiers are fractions of price_base
PEAK_PRICE = 0.9182
VALLEY_FRACTION = 0.30
FLAT_FRACTION = 0.60

# daily time-of-use layout as half-open sample ranges
_PRICE_TIERS = (
    (0, 28, "valley"),
    (28, 40, "flat"),
    (40, 60, "peak"),
    (60, 72, "flat"),
    (72, 84, "peak"),
    (84, 96, "valley"),
)

# calendar codes
WORKDAY, WEEKEND, FESTIVAL = 1, 2, 3

# all timestamps count 15-minute steps from this instant (a Monday)
EPOCH = datetime.datetime(2024, 1, 1)

_TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"
_DUTIES = ("continuous", "shift", "cyclic")

# industrial devices rarely switch: at most a few short outages per day
MAX_INTERRUPTIONS = 4


@dataclass(frozen=True)
class DeviceSpec:
    """Duty-profile description of one metered device.

    Parameters
    ----------
    name : str
        Column-safe identifier (letters, digits, underscores).
    rated_kw : float
        Draw while running, strictly positive.
    duty : str
        ``continuous`` (always on), ``shift`` (on between two sample
        indices each day), or ``cyclic`` (daily square wave).
    on_sample, off_sample : int
        Half-open running window in [0, 96] for ``shift`` duty.
    period_samples : int
        Square-wave period in samples for ``cyclic`` duty.
    duty_fraction : float
        Fraction of each cycle spent running, in (0, 1).
    interruptions_per_day : int
        Short unplanned outages injected per day, at most 4.
    noise_kw : float
        Standard deviation of Gaussian jitter on running samples.
    """

    name: str
    rated_kw: float
    duty: str = "continuous"
    on_sample: int = 0
    off_sample: int = SAMPLES_PER_DAY
    period_samples: int = 8
    duty_fraction: float = 0.5
    interruptions_per_day: int = 0
    noise_kw: float = 0.0

    def __post_init__(self):
        if not self.name or not all(c.isalnum() or c == "_" for c in self.name):
            raise InvalidArgumentError("device name must be alphanumeric/underscore")
        if self.rated_kw <= 0:
            raise InvalidArgumentError("rated_kw must be positive")
        if self.duty not in _DUTIES:
            raise InvalidArgumentError(f"unknown duty {self.duty!r}")
        if self.duty == "shift":
            if not 0 <= self.on_sample < self.off_sample <= SAMPLES_PER_DAY:
                raise InvalidArgumentError("shift window needs 0 <= on < off <= 96")
        if self.duty == "cyclic":
            if not 2 <= self.period_samples <= SAMPLES_PER_DAY:
                raise InvalidArgumentError("period_samples must lie in [2, 96]")
            if not 0.0 < self.duty_fraction < 1.0:
                raise InvalidArgumentError("duty_fraction must lie in (0, 1)")
        if not 0 <= self.interruptions_per_day <= MAX_INTERRUPTIONS:
            raise InvalidArgumentError(
                f"interruptions_per_day must lie in [0, {MAX_INTERRUPTIONS}]"
            )
        if self.noise_kw < 0:
            raise InvalidArgumentError("noise_kw must be non-negative")


@dataclass(frozen=True)
class ParkDataset:
    """One park: aggregate feeder, tariff, calendar, and named device truth.

    All series share length ``days * 96`` and the aggregate's
    ``start_index``; the calendar carries only the codes 1 (workday),
    2 (weekend), 3 (festival).  Datasets loaded from aggregate-only files
    have zero devices.
    """

    aggregate: TimeSeries
    price: TimeSeries
    calendar: TimeSeries
    days: int
    device_names: tuple = ()
    device_loads: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "device_names", tuple(self.device_names))
        object.__setattr__(self, "device_loads", tuple(self.device_loads))
        if self.days < 1:
            raise InvalidArgumentError("days must be at least 1")
        if len(self.device_names) != len(self.device_loads):
            raise InvalidArgumentError("device_names and device_loads must pair up")
        if len(set(self.device_names)) != len(self.device_names):
            raise InvalidArgumentError("device names must be unique")
        n = self.days * SAMPLES_PER_DAY
        for label, series in self._series_items():
            if len(series) != n:
                raise InvalidArgumentError(f"{label} has {len(series)} samples, expected {n}")
            if series.start_index != self.aggregate.start_index:
                raise InvalidArgumentError(f"{label} start_index differs from aggregate")
        if not np.isin(self.calendar.values, (1.0, 2.0, 3.0)).all():
            raise InvalidArgumentError("calendar values must be 1, 2 or 3")

    def _series_items(self):
        items = [
            ("aggregate", self.aggregate),
            ("price", self.price),
            ("calendar", self.calendar),
        ]
        items.extend(
            (f"device {name}", s) for name, s in zip(self.device_names, self.device_loads)
        )
        return items

    @property
    def n_samples(self) -> int:
        return self.days * SAMPLES_PER_DAY

    def device(self, name: str) -> TimeSeries:
        """Ground-truth trace of one device by name."""
        try:
            return self.device_loads[self.device_names.index(name)]
        except ValueError:
            raise InvalidArgumentError(f"unknown device {name!r}") from None

    def daily_profiles(self) -> np.ndarray:
        """Aggregate record reshaped to one row per day."""
        return self.aggregate.values.reshape(self.days, SAMPLES_PER_DAY)


@dataclass(frozen=True)
class ClusterReport:
    """Per-cluster capacity and membership summary.

    ``capacities`` holds the summed member peak loads (kW); both ratio
    vectors total 1.
    """

    capacities: tuple
    capacity_ratios: tuple
    member_counts: tuple
    count_ratios: tuple

    def __post_init__(self):
        lengths = {
            len(self.capacities),
            len(self.capacity_ratios),
            len(self.member_counts),
            len(self.count_ratios),
        }
        if len(lengths) != 1 or 0 in lengths:
            raise InvalidArgumentError("cluster columns must share a positive length")
        for label, ratios in (
            ("capacity_ratios", self.capacity_ratios),
            ("count_ratios", self.count_ratios),
        ):
            if abs(sum(ratios) - 1.0) > 1e-9:
                raise InvalidArgumentError(f"{label} must sum to 1")
        if any(c < 0 for c in self.member_counts):
            raise InvalidArgumentError("member_counts must be non-negative")

    @property
    def k(self) -> int:
        return len(self.capacities)

    def to_text(self) -> str:
        lines = ["cluster  capacity_kw   capacity_ratio  members  count_ratio"]
        for i in range(self.k):
            lines.append(
                f"{i:<8d} {self.capacities[i]:<13.4f} {self.capacity_ratios[i]:<15.4f} "
                f"{self.member_counts[i]:<8d} {self.count_ratios[i]:.4f}"
            )
        return "\n".join(lines) + "\n"


def _duty_state(spec: DeviceSpec, days: int) -> np.ndarray:
    """0/1 running state over the horizon, before interruptions."""
    day = np.zeros(SAMPLES_PER_DAY)
    if spec.duty == "continuous":
        day[:] = 1.0
    elif spec.duty == "shift":
        day[spec.on_sample : spec.off_sample] = 1.0
    else:
        on_len = int(round(spec.period_samples * spec.duty_fraction))
        on_len = min(max(on_len, 1), spec.period_samples - 1)
        phase = np.arange(SAMPLES_PER_DAY) % spec.period_samples
        day[phase < on_len] = 1.0
    return np.tile(day, days)


def _inject_interruptions(state: np.ndarray, spec: DeviceSpec, days: int, rng) -> None:
    """Zero out short seeded outages inside each day's running window."""
    if spec.interruptions_per_day == 0:
        return
    for d in range(days):
        day = state[d * SAMPLES_PER_DAY : (d + 1) * SAMPLES_PER_DAY]
        for _ in range(spec.interruptions_per_day):
            running = np.flatnonzero(day > 0.0)
            if running.size == 0:
                break
            start = int(rng.choice(running))
            length = int(rng.integers(2, 5))
            day[start : start + length] = 0.0


def generate_park(
    specs,
    days: int,
    seed: int = 0,
    measurement_snr_db: float | None = None,
    price_base: float = 1.0,
    festival_days=(),
) -> ParkDataset:
    """Build a synthetic park with exact per-device ground truth.

    Parameters
    ----------
    specs : sequence of DeviceSpec
        At least one device; names must be unique.
    days : int
        Horizon length in days of 96 samples.
    seed : int
        Drives jitter, interruption placement, and measurement noise.
    measurement_snr_db : float, optional
        When given, the aggregate is the exact device sum plus white noise
        at this SNR, clamped at zero; when omitted the sum identity holds
        exactly, sample by sample.
    price_base : float
        Reference tariff; the valley and flat tiers are 0.30 and 0.60 of
        it while the peak tier is the fixed 0.9182.
    festival_days : iterable of int
        Day indices (0-based) coded 3 in the calendar; festivals outrank
        weekends.

    Returns
    -------
    ParkDataset
    """
    specs = tuple(specs)
    if not specs:
        raise InvalidArgumentError("at least one DeviceSpec is required")
    if not all(isinstance(s, DeviceSpec) for s in specs):
        raise InvalidArgumentError("specs must be DeviceSpec instances")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("device names must be unique")
    if days < 1:
        raise InvalidArgumentError("days must be at least 1")
    if price_base <= 0:
        raise InvalidArgumentError("price_base must be positive")
    festival_days = frozenset(int(d) for d in festival_days)
    if any(not 0 <= d < days for d in festival_days):
        raise InvalidArgumentError("festival day indices must lie in [0, days)")

    n = days * SAMPLES_PER_DAY
    rng = np.random.default_rng(seed)
    traces = []
    for spec in specs:
        state = _duty_state(spec, days)
        _inject_interruptions(state, spec, days, rng)
        jitter = rng.standard_normal(n) * spec.noise_kw
        traces.append(state * np.maximum(spec.rated_kw + jitter, 0.0))

    total = np.sum(traces, axis=0)
    if measurement_snr_db is None:
        aggregate = total
    else:
        noisy = add_noise_at_snr(
            TimeSeries(total), measurement_snr_db, int(rng.integers(2**63))
        )
        aggregate = np.maximum(noisy.values, 0.0)

    price_day = np.empty(SAMPLES_PER_DAY)
    for lo, hi, tier in _PRICE_TIERS:
        if tier == "peak":
            price_day[lo:hi] = PEAK_PRICE
        elif tier == "flat":
            price_day[lo:hi] = FLAT_FRACTION * price_base
        else:
            price_day[lo:hi] = VALLEY_FRACTION * price_base

    codes = np.empty(days)
    for d in range(days):
        if d in festival_days:
            codes[d] = FESTIVAL
        elif d % 7 in (5, 6):
            codes[d] = WEEKEND
        else:
            codes[d] = WORKDAY

    return ParkDataset(
        aggregate=TimeSeries(aggregate),
        price=TimeSeries(np.tile(price_day, days)),
        calendar=TimeSeries(np.repeat(codes, SAMPLES_PER_DAY)),
        days=days,
        device_names=tuple(names),
        device_loads=tuple(TimeSeries(t) for t in traces),
    )


def cluster_profiles(profiles, k: int, seed: int = 0):
    """Group daily load profiles by shape with seeded k-means.

    Each profile row is min-max scaled on its own before distance
    computation so clustering compares shapes, not magnitudes; constant
    rows scale to flat zero.  Fifty seeded restarts keep the best inertia.

    Parameters
    ----------
    profiles : array_like, shape (n, m)
        One raw-kW profile per row.
    k : int
        Cluster count, ``1 <= k <= n``.
    seed : int

    Returns
    -------
    report : ClusterReport
    labels : numpy.ndarray of int, shape (n,)
    """
    mat = np.array(profiles, dtype=np.float64)
    if mat.ndim != 2 or mat.size == 0:
        raise InvalidArgumentError("profiles must be a non-empty 2-D array")
    if not np.all(np.isfinite(mat)):
        raise InvalidArgumentError("profiles must be finite")
    n = mat.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError("k must satisfy 1 <= k <= number of profiles")

    lo = mat.min(axis=1, keepdims=True)
    span = mat.max(axis=1, keepdims=True) - lo
    span[span == 0.0] = 1.0
    shapes = (mat - lo) / span
    labels = KMeans(n_clusters=k, n_init=50, random_state=seed).fit_predict(shapes)
    labels = labels.astype(np.int64)

    peaks = mat.max(axis=1)
    capacities = np.array([float(peaks[labels == c].sum()) for c in range(k)])
    counts = np.array([int(np.sum(labels == c)) for c in range(k)])
    total = capacities.sum()
    if total <= 0:
        raise DegenerateSignalError("profiles carry no load; capacity ratios undefined")
    report = ClusterReport(
        capacities=tuple(capacities),
        capacity_ratios=tuple(capacities / total),
        member_counts=tuple(int(c) for c in counts),
        count_ratios=tuple(counts / n),
    )
    return report, labels


def _format_value(x: float) -> str:
    return format(float(x), ".17g")


def _timestamp(index: int, interval_minutes: int) -> str:
    instant = EPOCH + datetime.timedelta(minutes=index * interval_minutes)
    return instant.strftime(_TIMESTAMP_FORMAT)


def write_csv(dataset: ParkDataset, path) -> None:
    """Serialize a park to the documented CSV schema.

    Header ``timestamp,load_kw,price,calendar`` plus one ``dev_<name>_kw``
    column per device; timestamps are ISO-8601 minutes counted from the
    dataset's ``start_index``; floats carry 17 significant digits so a
    reload is bit-identical; UTF-8 with LF endings.
    """
    header = ["timestamp", "load_kw", "price", "calendar"]
    header.extend(f"dev_{name}_kw" for name in dataset.device_names)
    start = dataset.aggregate.start_index
    step = dataset.aggregate.interval_minutes
    lines = [",".join(header)]
    for i in range(dataset.n_samples):
        cells = [
            _timestamp(start + i, step),
            _format_value(dataset.aggregate.values[i]),
            _format_value(dataset.price.values[i]),
            str(int(dataset.calendar.values[i])),
        ]
        cells.extend(_format_value(s.values[i]) for s in dataset.device_loads)
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path) -> ParkDataset:
    """Parse a park CSV back into a :class:`ParkDataset`.

    Raises
    ------
    ParseError
        Malformed header, ragged row, non-numeric or non-finite cell,
        timestamp off the 15-minute grid, calendar code outside {1, 2, 3},
        or a sample count that is not a positive multiple of 96.  The
        message names the offending 1-based line where applicable.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", line=1)

    header = lines[0].split(",")
    if header[:4] != ["timestamp", "load_kw", "price", "calendar"]:
        raise ParseError("header must start with timestamp,load_kw,price,calendar", line=1)
    names = []
    for col in header[4:]:
        if not (col.startswith("dev_") and col.endswith("_kw") and len(col) > 7):
            raise ParseError(f"device column {col!r} must look like dev_<name>_kw", line=1)
        names.append(col[4 : -3])
    if len(set(names)) != len(names):
        raise ParseError("duplicate device columns", line=1)

    width = len(header)
    n = len(lines) - 1
    if n == 0 or n % SAMPLES_PER_DAY != 0:
        raise ParseError(f"sample count {n} is not a positive multiple of {SAMPLES_PER_DAY}")

    first_stamp = lines[1].split(",", 1)[0]
    try:
        t0 = datetime.datetime.strptime(first_stamp, _TIMESTAMP_FORMAT)
    except ValueError:
        raise ParseError(f"bad timestamp {first_stamp!r}", line=2) from None
    offset = (t0 - EPOCH) / datetime.timedelta(minutes=15)
    if offset < 0 or offset != int(offset):
        raise ParseError("first timestamp must land on the 15-minute grid", line=2)
    start_index = int(offset)

    data = np.empty((n, width - 1))
    for i, row in enumerate(lines[1:], start=2):
        cells = row.split(",")
        if len(cells) != width:
            raise ParseError(f"expected {width} cells, found {len(cells)}", line=i)
        if cells[0] != _timestamp(start_index + i - 2, 15):
            raise ParseError(f"timestamp {cells[0]!r} off the 15-minute sequence", line=i)
        for j, cell in enumerate(cells[1:]):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"non-numeric cell {cell!r} in column {header[j + 1]}", line=i
                ) from None
        if not np.isfinite(data[i - 2]).all():
            raise ParseError("non-finite value", line=i)
        if data[i - 2, 2] not in (1.0, 2.0, 3.0):
            raise ParseError(f"calendar value {cells[3]} outside {{1, 2, 3}}", line=i)

    def series(column: int) -> TimeSeries:
        return TimeSeries(data[:, column], 15, start_index)

    return ParkDataset(
        aggregate=series(0),
        price=series(1),
        calendar=series(2),
        days=n // SAMPLES_PER_DAY,
        device_names=tuple(names),
        device_loads=tuple(series(3 + j) for j in range(len(names))),
    )


def normalize(series: TimeSeries, bounds=None):
    """Min-max scale a series to [0, 1].

    Parameters
    ----------
    series : TimeSeries
    bounds : tuple of (float, float), optional
        Previously fitted ``(low, high)``.  When given they are applied
        as-is and out-of-range inputs pass through unclamped; when omitted
        the bounds are fitted from the series itself.

    Returns
    -------
    scaled : TimeSeries
    bounds : tuple of (float, float)

    Raises
    ------
    DegenerateSignalError
        Fitting a constant series, or applying bounds with zero span.
    """
    if bounds is None:
        low, high = float(series.values.min()), float(series.values.max())
    else:
        low, high = float(bounds[0]), float(bounds[1])
    if not high > low:
        raise DegenerateSignalError("min-max scaling needs high > low")
    return series.with_values((series.values - low) / (high - low)), (low, high)


def denormalize(series: TimeSeries, bounds) -> TimeSeries:
    """Invert :func:`normalize` under the same bounds."""
    low, high = float(bounds[0]), float(bounds[1])
    if not high > low:
        raise DegenerateSignalError("min-max scaling needs high > low")
    return series.with_values(series.values * (high - low) + low)


def slice_days(dataset: ParkDataset, start_day: int, stop_day: int) -> ParkDataset:
    """Sub-park covering days ``[start_day, stop_day)``, keeping global indices."""
    if not 0 <= start_day < stop_day <= dataset.days:
        raise InvalidArgumentError("need 0 <= start_day < stop_day <= days")
    lo = start_day * SAMPLES_PER_DAY
    hi = stop_day * SAMPLES_PER_DAY

    def cut(series: TimeSeries) -> TimeSeries:
        return TimeSeries(
            series.values[lo:hi], series.interval_minutes, series.start_index + lo
        )

    return ParkDataset(
        aggregate=cut(dataset.aggregate),
        price=cut(dataset.price),
        calendar=cut(dataset.calendar),
        days=stop_day - start_day,
        device_names=dataset.device_names,
        device_loads=tuple(cut(s) for s in dataset.device_loads),
    )
