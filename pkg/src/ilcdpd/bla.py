"""Best linear approximation (nonparametric FRF) estimation and the
inverse learning filter derived from it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateExcitationError, RejectedInputError, UnusableBlaError
from .signal_core import FrequencyGrid, bin_freqs_hz, dft
from .siggen import MultisineSpec, gen_multisine

EXCITATION_FLOOR = 1e-12


@dataclass(frozen=True)
class FrfEstimate:
    """Per-controlled-bin complex response with per-bin variance.

    `g_bla` and `variance` are aligned with grid.controlled_bins.
    """

    grid: FrequencyGrid
    g_bla: np.ndarray
    variance: np.ndarray
    n_realizations: int

    def __post_init__(self):
        g = np.asarray(self.g_bla, dtype=np.complex128)
        var = np.asarray(self.variance, dtype=np.float64)
        n_bins = len(self.grid.controlled_bins)
        if g.size != n_bins or var.size != n_bins:
            raise RejectedInputError("FRF arrays must match the controlled-bin count")
        if not np.all(np.isfinite(g)) or np.any(var < 0):
            raise RejectedInputError("FRF must be finite with nonnegative variance")
        object.__setattr__(self, "g_bla", g)
        object.__setattr__(self, "variance", var)

    def full_gain(self, fill: complex | None = None) -> np.ndarray:
        """Length-N per-bin gain; non-controlled bins get `fill`
        (default: mean controlled-bin gain)."""
        if fill is None:
            fill = complex(self.g_bla.mean())
        gains = np.full(self.grid.n, fill, dtype=np.complex128)
        gains[self.grid.controlled_index] = self.g_bla
        return gains


@dataclass(frozen=True)
class LearningFilter:
    """Inverse-BLA learning filter; `l` is aligned with grid.controlled_bins."""

    grid: FrequencyGrid
    l: np.ndarray
    gain_floor: float
    dropped_bins: tuple = ()

    def __post_init__(self):
        arr = np.asarray(self.l, dtype=np.complex128)
        if arr.size != len(self.grid.controlled_bins):
            raise RejectedInputError("filter length must match the controlled-bin count")
        if not np.all(np.isfinite(arr)):
            raise RejectedInputError("learning filter must be finite")
        object.__setattr__(self, "l", arr)


def estimate_bla(plant, spec: MultisineSpec, m_realizations: int) -> FrfEstimate:
    """Mean of per-realization ratios Y/U over independent multisines."""
    if m_realizations < 2:
        raise RejectedInputError("need at least 2 realizations")
    controlled = spec.grid.controlled_index
    if not set(spec.grid.controlled_bins) <= set(spec.grid.excited_bins):
        raise RejectedInputError("multisine excitation must cover the controlled bins")
    ratios = np.empty((m_realizations, controlled.size), dtype=np.complex128)
    for m in range(m_realizations):
        u = gen_multisine(spec, realization=m)
        y = plant.apply(u)
        u_bins = dft(u).bins[controlled]
        y_bins = dft(y).bins[controlled]
        weak = np.abs(u_bins) < EXCITATION_FLOOR
        if np.any(weak):
            raise DegenerateExcitationError(int(controlled[np.argmax(weak)]))
        ratios[m] = y_bins / u_bins
    g = ratios.mean(axis=0)
    # sample variance of the ratios, divided by M: variance of the mean
    var = np.mean(np.abs(ratios - g) ** 2, axis=0) * m_realizations / (m_realizations - 1)
    return FrfEstimate(
        grid=spec.grid, g_bla=g, variance=var / m_realizations, n_realizations=m_realizations
    )


def invert_frf(frf: FrfEstimate, gain_floor: float | None = None) -> LearningFilter:
    """l = 1 / g_bla on bins above the floor; bins below are dropped
    from the controlled set and reported in dropped_bins."""
    mags = np.abs(frf.g_bla)
    if gain_floor is None:
        gain_floor = 1e-6 * mags.max()
    keep = mags >= gain_floor
    if not np.any(keep):
        raise UnusableBlaError("every controlled bin lies below the gain floor")
    controlled = frf.grid.controlled_index
    kept_bins = tuple(int(k) for k in controlled[keep])
    dropped = tuple(int(k) for k in controlled[~keep])
    grid = FrequencyGrid(
        n=frf.grid.n,
        excited_bins=tuple(k for k in frf.grid.excited_bins if k in set(kept_bins)),
        controlled_bins=kept_bins,
    )
    return LearningFilter(
        grid=grid, l=1.0 / frf.g_bla[keep], gain_floor=float(gain_floor), dropped_bins=dropped
    )


def write_frf_csv(path, frf: FrfEstimate, sample_rate_hz: float = 1.0) -> None:
    freqs = bin_freqs_hz(frf.grid.n, sample_rate_hz)
    with open(path, "w") as fh:
        fh.write("bin_index,freq_hz,re_g_bla,im_g_bla,variance\n")
        for i, k in enumerate(frf.grid.controlled_bins):
            g = frf.g_bla[i]
            fh.write(f"{k},{float(freqs[k])!r},{g.real:.17e},{g.imag:.17e},{frf.variance[i]:.17e}\n")


def read_frf_csv(path, grid: FrequencyGrid, n_realizations: int = 0) -> FrfEstimate:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    bins = tuple(int(k) for k in data[:, 0])
    if bins != grid.controlled_bins:
        raise RejectedInputError("FRF file bins do not match the grid's controlled set")
    return FrfEstimate(
        grid=grid,
        g_bla=data[:, 2] + 1j * data[:, 3],
        variance=data[:, 4],
        n_realizations=n_realizations,
    )
