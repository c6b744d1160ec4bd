"""Automatic mode-count selection and correlation-screened denoising.

Over-decomposition shows up as an elbow in the curve of the top mode's mean
instantaneous frequency versus the mode count: once the count exceeds the
signal's true structure, the newest mode starts chasing broadband noise and
the curve bends sharply.  The selector locates that bend by curvature and
steps back one count.  Denoising then decomposes at the selected count and
drops modes that barely correlate with the raw record.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSignalError, InvalidArgumentError
from .series import TimeSeries, correlation_coefficient, instantaneous_frequency_mean
from .vmd import VmdParams, decompose

__all__ = ["KSelectionReport", "curvature", "select_k", "denoise"]

# modes correlating less than this (absolute Pearson) with the raw record
# are treated as noise carriers and dropped
CC_RETENTION_THRESHOLD = 0.10

DEFAULT_CURVATURE_FACTOR = 2.0
AUTO_K_RANGE = (2, 8)


@dataclass(frozen=True)
class KSelectionReport:
    """Mode-count sweep summary.

    ``candidates`` holds one ``(k, mean_if, curvature)`` triple per swept
    count, covering a contiguous range; ``selected_k`` always lies inside
    that range.  ``no_elbow`` marks sweeps where no curvature ever cleared
    ``threshold_used`` (or the swept curve was flat).
    """

    candidates: tuple
    selected_k: int
    threshold_used: float
    no_elbow: bool = False

    def __post_init__(self):
        ks = [c[0] for c in self.candidates]
        if ks != list(range(min(ks), max(ks) + 1)):
            raise InvalidArgumentError("candidates must cover a contiguous k range")
        if not (min(ks) <= self.selected_k <= max(ks)):
            raise InvalidArgumentError("selected_k must appear among candidates")

    def to_text(self) -> str:
        lines = ["k  mean_if      curvature"]
        for k, mif, kappa in self.candidates:
            lines.append(f"{k:<2d} {mif:<12.6f} {kappa:.6f}")
        lines.append(f"selected_k {self.selected_k}")
        lines.append(f"threshold {self.threshold_used:.6f}")
        lines.append(f"no_elbow {str(self.no_elbow).lower()}")
        return "\n".join(lines) + "\n"


def curvature(curve) -> np.ndarray:
    """Pointwise curvature |y''| / (1 + y'^2)^1.5 at unit spacing.

    Interior points use central differences; endpoints use one-sided first
    differences and copy the nearest interior second difference.

    Raises
    ------
    InvalidArgumentError
        If the curve has fewer than 3 points.
    """
    y = np.asarray(curve, dtype=np.float64)
    if y.ndim != 1 or y.size < 3:
        raise InvalidArgumentError("curvature needs at least 3 points")
    d1 = np.empty_like(y)
    d1[1:-1] = (y[2:] - y[:-2]) / 2.0
    d1[0] = y[1] - y[0]
    d1[-1] = y[-1] - y[-2]
    d2 = np.empty_like(y)
    d2[1:-1] = y[2:] - 2.0 * y[1:-1] + y[:-2]
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return np.abs(d2) / (1.0 + d1 * d1) ** 1.5


def select_k(
    signal: TimeSeries,
    k_min: int,
    k_max: int,
    params: VmdParams,
    curvature_factor: float = DEFAULT_CURVATURE_FACTOR,
) -> KSelectionReport:
    """Pick a mode count by the elbow of the top mode's frequency-mean curve.

    For each candidate count the signal is decomposed and the mean
    instantaneous frequency of the highest-center-frequency mode recorded.
    The selected count is one below the first candidate whose curvature
    exceeds ``curvature_factor`` times the median curvature (clamped to the
    swept range); if none does, the sweep is flagged ``no_elbow`` and the
    largest candidate is returned.

    Raises
    ------
    InvalidArgumentError
        Unless ``2 <= k_min < k_max <= 16``.
    """
    if not (2 <= k_min < k_max <= 16):
        raise InvalidArgumentError("need 2 <= k_min < k_max <= 16")
    if curvature_factor <= 0:
        raise InvalidArgumentError("curvature_factor must be positive")
    ks = list(range(k_min, k_max + 1))
    mean_ifs = []
    for k in ks:
        modes = decompose(signal, replace(params, k=k))
        top = int(np.argmax(modes.center_freqs))
        try:
            mean_if = instantaneous_frequency_mean(signal.with_values(modes.modes[top]))
        except DegenerateSignalError:
            # an empty mode never moved off its center; read the curve there
            mean_if = float(modes.center_freqs[top])
        mean_ifs.append(mean_if)
    mean_ifs = np.asarray(mean_ifs)

    if float(np.ptp(mean_ifs)) < 1e-12:
        candidates = tuple((k, float(m), 0.0) for k, m in zip(ks, mean_ifs))
        return KSelectionReport(candidates, k_min, 0.0, no_elbow=True)

    kappa = curvature(mean_ifs)
    threshold = curvature_factor * float(np.median(kappa))
    candidates = tuple((k, float(m), float(c)) for k, m, c in zip(ks, mean_ifs, kappa))
    exceeding = [k for k, c in zip(ks, kappa) if c > threshold]
    if not exceeding:
        return KSelectionReport(candidates, k_max, threshold, no_elbow=True)
    selected = max(exceeding[0] - 1, k_min)
    return KSelectionReport(candidates, selected, threshold, no_elbow=False)


def denoise(
    signal: TimeSeries,
    params: VmdParams,
    auto_k: bool = True,
) -> tuple[TimeSeries, KSelectionReport | None]:
    """Remove weakly correlated modes from a decomposition of ``signal``.

    With ``auto_k`` the mode count comes from :func:`select_k` over the
    default sweep range, otherwise ``params.k`` is used as given.  Modes
    whose absolute correlation with the raw record falls below 0.10 are
    dropped; the best-correlated mode is always retained.
    """
    report = None
    if auto_k:
        report = select_k(signal, AUTO_K_RANGE[0], AUTO_K_RANGE[1], params)
        params = replace(params, k=report.selected_k)
    modes = decompose(signal, params)

    ccs = np.zeros(modes.k)
    for i in range(modes.k):
        try:
            ccs[i] = correlation_coefficient(signal.with_values(modes.modes[i]), signal)
        except DegenerateSignalError:
            ccs[i] = 0.0  # constant mode: no linear association to measure
    keep = np.abs(ccs) >= CC_RETENTION_THRESHOLD
    if not np.any(keep):
        keep[int(np.argmax(np.abs(ccs)))] = True
    denoised = signal.with_values(np.sum(modes.modes[keep], axis=0))
    return denoised, report
