"""Plant-inversion iterative learning control loop.

The update acts per frequency bin on the controlled set only:

    E_j = Y_d - Y_j
    U_{j+1}[k] = U_j[k] + relaxation * l[k] * E_j[k]   (k controlled)

with Q = 1 and l the inverse-BLA learning filter.  Error norms are the
time-domain RMS of the error restricted to controlled bins, i.e.
sqrt(sum_k |E[k]|^2) / N under the unnormalized-forward convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bla import FrfEstimate, LearningFilter
from .errors import DivergenceError, PlantError, RejectedInputError
from .signal_core import DB_FLOOR, FrequencyGrid, Signal, Spectrum, dft, idft


@dataclass(frozen=True)
class IlcConfig:
    max_iterations: int = 20
    relaxation: float = 1.0
    stop_tolerance: float = 1e-6
    divergence_factor: float = 2.0
    n_averages: int = 1  # plant measurements averaged per iteration

    def __post_init__(self):
        if self.max_iterations < 1:
            raise RejectedInputError("max_iterations must be >= 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise RejectedInputError("relaxation must lie in (0, 1]")
        if self.stop_tolerance < 0:
            raise RejectedInputError("stop_tolerance must be nonnegative")
        if not self.divergence_factor > 1.0:
            raise RejectedInputError("divergence_factor must exceed 1")
        if self.n_averages < 1:
            raise RejectedInputError("n_averages must be >= 1")


@dataclass(frozen=True)
class BlaReference:
    """Desired output Y_d = G_bla * R: compensate nonlinearities only."""


@dataclass(frozen=True)
class ConstantGain:
    """Desired output Y_d = g * R: also flatten the plant dynamics."""

    gain: complex = 1.0

    def __post_init__(self):
        if self.gain == 0 or not np.isfinite(self.gain):
            raise RejectedInputError("constant gain must be finite and nonzero")


@dataclass(frozen=True)
class IlcTrajectory:
    inputs: tuple  # u_0 .. u_J
    outputs: tuple  # y_0 .. y_J
    error_norms: np.ndarray  # controlled-bin error RMS per iteration
    y_d_norm: float  # controlled-bin RMS of the desired output
    converged: bool
    diverged: bool
    best_index: int

    def __post_init__(self):
        norms = np.asarray(self.error_norms, dtype=np.float64)
        if len(self.inputs) != len(self.outputs) or norms.size != len(self.inputs):
            raise RejectedInputError("trajectory lengths are inconsistent")
        if np.any(norms < 0):
            raise RejectedInputError("error norms must be nonnegative")
        object.__setattr__(self, "error_norms", norms)

    @property
    def iterations_run(self) -> int:
        return len(self.inputs) - 1

    @property
    def best_input(self) -> Signal:
        return self.inputs[self.best_index]

    @property
    def final_input(self) -> Signal:
        return self.inputs[-1]


def controlled_rms(bins: np.ndarray, grid: FrequencyGrid) -> float:
    """Time-domain RMS of the component living on the controlled bins."""
    return float(np.sqrt(np.sum(np.abs(bins[grid.controlled_index]) ** 2)) / grid.n)


def make_desired(r: Signal, mode, frf: FrfEstimate) -> Spectrum:
    """Y_d = G * R on controlled bins, zero elsewhere."""
    if r.n != frf.grid.n:
        raise RejectedInputError("reference length does not match the FRF grid")
    r_bins = dft(r).bins
    y_d = np.zeros(r.n, dtype=np.complex128)
    controlled = frf.grid.controlled_index
    if isinstance(mode, ConstantGain):
        y_d[controlled] = mode.gain * r_bins[controlled]
    elif isinstance(mode, BlaReference):
        y_d[controlled] = frf.g_bla * r_bins[controlled]
    else:
        raise RejectedInputError(f"unknown desired-output mode {mode!r}")
    return Spectrum(y_d, r.sample_rate_hz, r.carrier_hz)


def ilc_step(u_j: Spectrum, y_j: Spectrum, y_d: Spectrum, lfilter: LearningFilter,
             relaxation: float = 1.0) -> Spectrum:
    """One update; bins outside the controlled set are left untouched."""
    if not u_j.n == y_j.n == y_d.n:
        raise RejectedInputError("spectra must share one length")
    if not 0.0 < relaxation <= 1.0:
        raise RejectedInputError("relaxation must lie in (0, 1]")
    controlled = lfilter.grid.controlled_index
    error = y_d.bins[controlled] - y_j.bins[controlled]
    update = relaxation * lfilter.l * error
    if not np.all(np.isfinite(update)):
        bad = int(controlled[np.argmax(~np.isfinite(update))])
        raise DivergenceError(f"non-finite ILC update at bin {bad}")
    u_next = u_j.bins.copy()
    u_next[controlled] += update
    return Spectrum(u_next, u_j.sample_rate_hz, u_j.carrier_hz)


def run_ilc(plant, r: Signal, y_d: Spectrum, lfilter: LearningFilter,
            config: IlcConfig = IlcConfig()) -> IlcTrajectory:
    """Iterate measure -> error -> update starting from u_0 = r.

    Stops on max_iterations, on the relative stop tolerance, or when the
    error norm exceeds divergence_factor times the best norm so far (the
    best iterate is then flagged through best_index).
    """
    if r.n != y_d.n or r.n != lfilter.grid.n:
        raise RejectedInputError("reference, desired output and filter lengths differ")
    grid = lfilter.grid
    y_d_norm = controlled_rms(y_d.bins, grid)
    u = r
    inputs = [u]
    outputs = []
    norms = []
    converged = False
    diverged = False
    best_norm = np.inf
    best_index = 0
    for j in range(config.max_iterations + 1):
        y = _measure(plant, u, config.n_averages, j)
        outputs.append(y)
        y_bins = dft(y).bins
        norm_j = controlled_rms(y_d.bins - y_bins, grid)
        norms.append(norm_j)
        if norm_j < best_norm:
            best_norm, best_index = norm_j, j
        if norm_j <= config.stop_tolerance * y_d_norm:
            converged = True
            break
        if norm_j > config.divergence_factor * best_norm:
            diverged = True
            break
        if j == config.max_iterations:
            break
        u_next = ilc_step(dft(u), Spectrum(y_bins, y.sample_rate_hz, y.carrier_hz),
                          y_d, lfilter, config.relaxation)
        u = idft(u_next)
        inputs.append(u)
    return IlcTrajectory(
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        error_norms=np.asarray(norms),
        y_d_norm=y_d_norm,
        converged=converged,
        diverged=diverged,
        best_index=best_index,
    )


def _measure(plant, u: Signal, n_averages: int, iteration: int) -> Signal:
    try:
        if n_averages == 1:
            return plant.apply(u)
        acc = np.zeros(u.n, dtype=np.complex128)
        for _ in range(n_averages):
            acc += plant.apply(u).samples
        return Signal(acc / n_averages, u.sample_rate_hz, u.carrier_hz)
    except Exception as exc:
        raise PlantError(f"plant failed at ILC iteration {iteration}: {exc}") from exc


def compensation_error(y_d: Spectrum, y_c: Spectrum, grid: FrequencyGrid):
    """Per-bin 20 log10 |E_c[k]| (DB_FLOOR for exact zeros) and the
    controlled-bin RMS of the compensation error."""
    if y_d.n != y_c.n:
        raise RejectedInputError("spectra must share one length")
    error = y_d.bins - y_c.bins
    mags = np.abs(error)
    per_bin_db = np.full(y_d.n, DB_FLOOR)
    nonzero = mags > 0
    per_bin_db[nonzero] = 20.0 * np.log10(mags[nonzero])
    return per_bin_db, controlled_rms(error, grid)
