"""Variational mode decomposition by spectral alternating minimization.

A signal is split into ``k`` band-limited modes by iterating, in the
frequency domain, a Wiener-style update for each mode around its current
center frequency, a power-centroid update of that center frequency, and a
dual-ascent step on the reconstruction constraint:

    u_hat_k <- (f_hat - sum_{i != k} u_hat_i + lambda_hat / 2)
               / (1 + 2 * alpha * (w - w_k)^2)
    w_k     <- sum(w * |u_hat_k|^2) / sum(|u_hat_k|^2)        over w >= 0
    lambda  <- lambda + tau * (f_hat - sum_k u_hat_k)

The input is mirror-extended to suppress boundary splits, processed on the
one-sided spectrum, and the central half of each reconstructed mode is
returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, InvalidArgumentError
from .series import Spectrum, TimeSeries

__all__ = [
    "VmdParams",
    "ModeSet",
    "wiener_mode_update",
    "center_frequency",
    "convergence_residual",
    "decompose",
]

INIT_MODES = ("zero", "uniform", "random")


@dataclass(frozen=True)
class VmdParams:
    """Decomposition controls.

    Defaults: bandwidth penalty ``alpha=2000``, dual step ``tau=0.001``,
    ``k=4`` modes, tolerance ``1e-7``.  ``init_mode`` places the initial
    center frequencies: all at zero, spread evenly over (0, 0.5), or drawn
    log-uniformly using ``seed``.  ``dc_mode`` pins the first mode's center
    at zero frequency.
    """

    alpha: float = 2000.0
    tau: float = 0.001
    k: int = 4
    dc_mode: bool = False
    init_mode: str = "uniform"
    tol: float = 1e-7
    max_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise InvalidArgumentError("alpha must be positive and finite")
        if not np.isfinite(self.tau) or self.tau < 0:
            raise InvalidArgumentError("tau must be non-negative and finite")
        if not (1 <= self.k <= 32):
            raise InvalidArgumentError("k must be in [1, 32]")
        if self.init_mode not in INIT_MODES:
            raise InvalidArgumentError(f"init_mode must be one of {INIT_MODES}")
        if not (0 < self.tol < 1):
            raise InvalidArgumentError("tol must be in (0, 1)")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be at least 1")


@dataclass(frozen=True)
class ModeSet:
    """Result of a decomposition.

    ``modes`` holds one row per mode (same length as the input), sorted by
    ascending ``center_freqs``.  ``mode_spectra`` keeps the converged
    one-sided spectra on the mirror-extended domain (same mode order) with
    ``spectral_grid`` giving the frequency of each bin in cycles per sample.
    ``iterations_used == max_iters`` flags a run that stopped on the
    iteration cap rather than the tolerance.  ``final_residual`` is
    ``||sum_k u_k - signal||_2 / ||signal||_2``.
    """

    modes: np.ndarray
    center_freqs: np.ndarray
    iterations_used: int
    final_residual: float
    mode_spectra: np.ndarray
    spectral_grid: np.ndarray

    def __post_init__(self):
        m = np.array(self.modes, dtype=np.float64)
        cf = np.array(self.center_freqs, dtype=np.float64)
        sp = np.array(self.mode_spectra, dtype=np.complex128)
        grid = np.array(self.spectral_grid, dtype=np.float64)
        if m.ndim != 2 or cf.ndim != 1 or m.shape[0] != cf.size:
            raise InvalidArgumentError("modes must be (k, n) with k center frequencies")
        if sp.shape != (m.shape[0], grid.size):
            raise InvalidArgumentError("mode_spectra must be (k, bins) matching spectral_grid")
        for arr in (m, cf, sp, grid):
            arr.flags.writeable = False
        object.__setattr__(self, "modes", m)
        object.__setattr__(self, "center_freqs", cf)
        object.__setattr__(self, "mode_spectra", sp)
        object.__setattr__(self, "spectral_grid", grid)

    @property
    def k(self) -> int:
        return int(self.modes.shape[0])

    def reconstruction(self) -> np.ndarray:
        """Sum of all modes."""
        return np.sum(self.modes, axis=0)


def wiener_mode_update(
    residual_bin: complex,
    multiplier_bin: complex,
    omega: float,
    omega_k: float,
    alpha: float,
) -> complex:
    """Closed-form single-bin mode update.

    ``residual_bin`` is the signal bin minus every other mode's bin; the
    multiplier enters at half weight and the quadratic band penalty shrinks
    content far from the mode's center frequency ``omega_k``.
    """
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    return (residual_bin + multiplier_bin / 2.0) / (
        1.0 + 2.0 * alpha * (omega - omega_k) ** 2
    )


def center_frequency(mode_spectrum: Spectrum, freq_grid) -> float:
    """Power-spectrum gravity center of a one-sided mode spectrum.

    Raises
    ------
    DegenerateSignalError
        If the spectrum carries no energy.
    """
    grid = np.asarray(freq_grid, dtype=np.float64)
    if grid.shape != mode_spectrum.bins.shape:
        raise InvalidArgumentError("freq_grid must match the spectrum bin count")
    power = np.abs(mode_spectrum.bins) ** 2
    total = float(np.sum(power))
    if total <= 0.0:
        raise DegenerateSignalError("zero-energy mode has no center frequency")
    return float(np.sum(grid * power) / total)


def convergence_residual(prev_spectra, next_spectra) -> float:
    """Sum over modes of the relative squared spectral change between sweeps.

    Raises
    ------
    DegenerateSignalError
        If any previous mode has zero energy.
    """
    prev = np.asarray(prev_spectra, dtype=np.complex128)
    nxt = np.asarray(next_spectra, dtype=np.complex128)
    if prev.shape != nxt.shape or prev.ndim != 2:
        raise InvalidArgumentError("spectra must be two equally shaped (k, bins) arrays")
    norms = np.sum(np.abs(prev) ** 2, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateSignalError("zero-energy previous mode in convergence residual")
    deltas = np.sum(np.abs(nxt - prev) ** 2, axis=1)
    return float(np.sum(deltas / norms))


def _initial_centers(params: VmdParams, t_mirror: int) -> np.ndarray:
    k = params.k
    if params.init_mode == "zero":
        omega = np.zeros(k)
    elif params.init_mode == "uniform":
        # midpoints of k equal subintervals of (0, 0.5)
        omega = 0.5 * (np.arange(k) + 0.5) / k
    else:
        rng = np.random.default_rng(params.seed)
        fs = 1.0 / t_mirror
        omega = np.sort(np.exp(np.log(fs) + (np.log(0.5) - np.log(fs)) * rng.random(k)))
    if params.dc_mode:
        omega[0] = 0.0
    return omega


def decompose(signal: TimeSeries, params: VmdParams) -> ModeSet:
    """Decompose ``signal`` into ``params.k`` band-limited modes.

    The signal is mirror-extended by half its length on each side, iterated
    on the one-sided spectrum with sequential per-mode updates (each mode sees
    the already-updated modes before it within a sweep), and cropped back to
    the original support.  Modes are returned sorted by center frequency.

    Raises
    ------
    InvalidArgumentError
        If the signal is shorter than ``2 * params.k``.
    """
    n = len(signal)
    k = params.k
    if n < 2 * k:
        raise InvalidArgumentError(f"signal length {n} too short for k={k} (needs >= {2 * k})")

    half = n // 2
    values = signal.values
    mirrored = np.concatenate([values[:half][::-1], values, values[n - half :][::-1]])
    t_mirror = mirrored.size

    f_hat = np.fft.rfft(mirrored)
    m_bins = f_hat.size
    freqs = np.arange(m_bins) / t_mirror

    u_hat = np.zeros((k, m_bins), dtype=np.complex128)
    lam = np.zeros(m_bins, dtype=np.complex128)
    omega = _initial_centers(params, t_mirror)

    sum_modes = np.zeros(m_bins, dtype=np.complex128)
    iterations_used = params.max_iters
    for iteration in range(1, params.max_iters + 1):
        u_prev = u_hat.copy()
        for i in range(k):
            sum_modes -= u_hat[i]
            residual = f_hat - sum_modes
            updated = (residual + lam / 2.0) / (
                1.0 + 2.0 * params.alpha * (freqs - omega[i]) ** 2
            )
            u_hat[i] = updated
            sum_modes += updated
            if not (params.dc_mode and i == 0):
                power = np.abs(updated) ** 2
                total = float(np.sum(power))
                if total > 0.0:  # transiently empty modes keep their center
                    omega[i] = float(np.sum(freqs * power) / total)
                    omega[i] = min(max(omega[i], 0.0), 0.5)
        lam = lam + params.tau * (f_hat - sum_modes)
        prev_norms = np.sum(np.abs(u_prev) ** 2, axis=1)
        if np.all(prev_norms > 0.0):  # first sweeps start from empty modes
            sweep_change = float(
                np.sum(np.sum(np.abs(u_hat - u_prev) ** 2, axis=1) / prev_norms)
            )
            if sweep_change < params.tol:
                iterations_used = iteration
                break

    modes_time = np.empty((k, n))
    for i in range(k):
        full = np.fft.irfft(u_hat[i], t_mirror)
        modes_time[i] = full[half : half + n]

    order = np.argsort(omega, kind="stable")
    modes_time = modes_time[order]
    omega = omega[order]
    u_hat = u_hat[order]

    signal_norm = float(np.linalg.norm(values))
    if signal_norm > 0.0:
        final_residual = float(np.linalg.norm(modes_time.sum(axis=0) - values) / signal_norm)
    else:
        final_residual = 0.0
    return ModeSet(modes_time, omega, iterations_used, final_residual, u_hat, freqs)
