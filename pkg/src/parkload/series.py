"""Time-series and spectral primitives underpinning the decomposition pipeline.

All power records are uniformly sampled (15-minute metering by default) and
carried as immutable float64 arrays.  Spectral helpers use the unitary-free
DFT convention ``bins[k] = sum_t values[t] * exp(-2j*pi*k*t/n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, InvalidArgumentError

__all__ = [
    "TimeSeries",
    "Spectrum",
    "dft",
    "idft",
    "analytic_signal",
    "instantaneous_frequency_mean",
    "correlation_coefficient",
    "add_noise_at_snr",
]

# Fraction of samples trimmed from each end of the phase-difference sequence
# before averaging; boundary transients of the analytic signal live there.
EDGE_TRIM_FRACTION = 0.05


@dataclass(frozen=True)
class TimeSeries:
    """A finite, uniformly sampled real-valued record.

    Parameters
    ----------
    values : array_like
        Samples, coerced to a read-only float64 vector.
    interval_minutes : int
        Spacing between consecutive samples.
    start_index : int
        Global index of the first sample (useful when slicing records).
    """

    values: np.ndarray
    interval_minutes: int = 15
    start_index: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise InvalidArgumentError("TimeSeries needs a non-empty 1-D value sequence")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("TimeSeries values must be finite")
        if self.interval_minutes <= 0:
            raise InvalidArgumentError("interval_minutes must be positive")
        if self.start_index < 0:
            raise InvalidArgumentError("start_index must be non-negative")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)

    def with_values(self, values) -> "TimeSeries":
        """New series with the same metadata and different samples."""
        return TimeSeries(values, self.interval_minutes, self.start_index)


@dataclass(frozen=True)
class Spectrum:
    """DFT bins of a series.

    ``n`` is the time-domain length the bins refer to; ``one_sided`` marks
    layouts that keep only non-negative frequencies (conjugate symmetry is
    implied for real signals).
    """

    bins: np.ndarray
    n: int
    one_sided: bool = False

    def __post_init__(self):
        b = np.array(self.bins, dtype=np.complex128)
        if b.ndim != 1:
            raise InvalidArgumentError("Spectrum bins must be one-dimensional")
        if self.n <= 0:
            raise InvalidArgumentError("Spectrum n must be positive")
        b.flags.writeable = False
        object.__setattr__(self, "bins", b)

    def __len__(self) -> int:
        return int(self.bins.size)


def dft(series: TimeSeries) -> Spectrum:
    """Two-sided DFT of ``series``; bin k holds sum_t x[t]*exp(-2j*pi*k*t/n)."""
    n = len(series)
    return Spectrum(bins=np.fft.fft(series.values), n=n, one_sided=False)


def idft(spectrum: Spectrum, interval_minutes: int = 15, start_index: int = 0) -> TimeSeries:
    """Inverse of :func:`dft`, returning the real part as a new series.

    Spectral metadata does not carry sampling information, so the caller may
    supply the interval and start index; for spectra produced by :func:`dft`
    of a real series the imaginary residue is at numerical-noise level.
    """
    if spectrum.one_sided:
        raise InvalidArgumentError("idft expects a two-sided spectrum")
    if len(spectrum) == 0:
        raise InvalidArgumentError("idft needs a non-empty spectrum")
    values = np.fft.ifft(spectrum.bins)
    return TimeSeries(values.real, interval_minutes, start_index)


def analytic_signal(series: TimeSeries) -> np.ndarray:
    """Complex analytic extension of a real series via one-sided spectrum doubling.

    Negative-frequency bins are zeroed, positive bins doubled, and DC (plus the
    Nyquist bin for even lengths) kept as is, then transformed back.
    """
    n = len(series)
    if n < 4:
        raise InvalidArgumentError("analytic_signal needs at least 4 samples")
    weights = np.zeros(n)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[n // 2] = 1.0
        weights[1 : n // 2] = 2.0
    else:
        weights[1 : (n + 1) // 2] = 2.0
    return np.fft.ifft(np.fft.fft(series.values) * weights)


def instantaneous_frequency_mean(series: TimeSeries) -> float:
    """Mean instantaneous frequency in cycles per sample, in [0, 0.5].

    The unwrapped phase of the analytic signal is differenced forward and
    averaged after dropping the first and last 5% of samples, where the
    analytic extension is least trustworthy.

    Raises
    ------
    DegenerateSignalError
        If the analytic amplitude is below 1e-12 everywhere.
    InvalidArgumentError
        If the series is shorter than 8 samples.
    """
    n = len(series)
    if n < 8:
        raise InvalidArgumentError("instantaneous_frequency_mean needs >= 8 samples")
    z = analytic_signal(series)
    if np.max(np.abs(z)) < 1e-12:
        raise DegenerateSignalError("near-zero amplitude: instantaneous frequency undefined")
    phase = np.unwrap(np.angle(z))
    steps = np.diff(phase) / (2.0 * np.pi)
    trim = int(EDGE_TRIM_FRACTION * n)
    if trim > 0:
        steps = steps[trim : len(steps) - trim]
    mean = float(np.mean(steps))
    return float(min(max(mean, 0.0), 0.5))


def correlation_coefficient(x: TimeSeries, y: TimeSeries) -> float:
    """Pearson correlation of two equal-length series, clipped into [-1, 1].

    Raises
    ------
    InvalidArgumentError
        On length mismatch or fewer than 2 samples.
    DegenerateSignalError
        If either series has zero variance.
    """
    if len(x) != len(y):
        raise InvalidArgumentError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise InvalidArgumentError("correlation needs at least 2 samples")
    dx = x.values - np.mean(x.values)
    dy = y.values - np.mean(y.values)
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateSignalError("correlation undefined for a constant series")
    r = float(np.sum(dx * dy) / (sx * sy))
    return float(min(max(r, -1.0), 1.0))


def add_noise_at_snr(series: TimeSeries, snr_db: float, seed: int) -> TimeSeries:
    """Add white Gaussian noise scaled for an exact signal-to-noise ratio.

    Signal power is the mean square of the mean-removed series; the drawn
    noise realization is rescaled so its own mean square hits the target
    power, which makes the realized SNR match ``snr_db`` to float precision.

    Raises
    ------
    DegenerateSignalError
        If the series is constant (zero signal power).
    """
    if not np.isfinite(snr_db):
        raise InvalidArgumentError("snr_db must be finite")
    x = series.values
    centered = x - np.mean(x)
    signal_power = float(np.mean(centered * centered))
    if signal_power == 0.0:
        raise DegenerateSignalError("SNR undefined for a constant series")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.size)
    target_power = signal_power / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(target_power / np.mean(noise * noise))
    return series.with_values(x + noise)
