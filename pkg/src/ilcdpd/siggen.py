"""Seeded generators for multisine, OFDM and multiband excitations.

All generators are deterministic functions of (spec, realization).  The
RNG is numpy's PCG64 keyed through SeedSequence spawn keys, so different
realizations and rejection-sampling attempts draw from independent,
reproducible streams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationFailedError, RejectedInputError
from .signal_core import FrequencyGrid, Signal, papr_db, scaled_to_rms

# Unit-average-power square 16-point constellation (default OFDM alphabet).
_QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
QAM16 = tuple(complex(i, q) for i in _QAM16_LEVELS for q in _QAM16_LEVELS)
QPSK = tuple((i + 1j * q) / np.sqrt(2.0) for i in (-1.0, 1.0) for q in (-1.0, 1.0))

CONSTELLATIONS = {"qam16": QAM16, "qpsk": QPSK}


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Portable generator for a (seed, subkey...) pair."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class MultisineSpec:
    n: int
    grid: FrequencyGrid
    amplitude_profile: tuple  # one nonnegative amplitude per excited bin
    seed: int
    sample_rate_hz: float = 1.0
    target_rms: float | None = None

    def __post_init__(self):
        profile = tuple(float(a) for a in self.amplitude_profile)
        if len(profile) != len(self.grid.excited_bins):
            raise RejectedInputError("amplitude_profile length must match excited bins")
        if any(a < 0 for a in profile):
            raise RejectedInputError("amplitudes must be nonnegative")
        if not self.grid.excited_bins:
            raise RejectedInputError("multisine needs at least one excited bin")
        if self.n != self.grid.n:
            raise RejectedInputError("spec length must match grid length")
        object.__setattr__(self, "amplitude_profile", profile)

    @classmethod
    def flat(cls, grid: FrequencyGrid, seed: int, amplitude: float = 1.0, **kwargs) -> "MultisineSpec":
        return cls(
            n=grid.n,
            grid=grid,
            amplitude_profile=(amplitude,) * len(grid.excited_bins),
            seed=seed,
            **kwargs,
        )


@dataclass(frozen=True)
class OfdmSpec:
    n: int
    grid: FrequencyGrid
    constellation: tuple = QAM16
    papr_bounds_db: tuple | None = None
    seed: int = 0
    sample_rate_hz: float = 1.0
    target_rms: float | None = None
    max_attempts: int = 1000

    def __post_init__(self):
        if not self.grid.excited_bins:
            raise RejectedInputError("OFDM needs at least one excited tone")
        if self.n != self.grid.n:
            raise RejectedInputError("spec length must match grid length")
        if not self.constellation:
            raise RejectedInputError("constellation must be nonempty")
        if self.papr_bounds_db is not None:
            lo, hi = self.papr_bounds_db
            if not lo < hi:
                raise RejectedInputError("papr bounds must satisfy lo < hi")


@dataclass(frozen=True)
class MultibandSpec:
    n: int
    bands: tuple  # ((center_bin, width_in_bins), ...)
    seed: int = 0
    constellation: tuple = QAM16
    sample_rate_hz: float = 1.0
    target_rms: float | None = None
    controlled_bins: tuple | None = None  # defaults to the excited union

    def __post_init__(self):
        bands = tuple((int(c), int(w)) for c, w in self.bands)
        if not bands:
            raise RejectedInputError("at least one band required")
        seen: set = set()
        for center, width in bands:
            if width < 1:
                raise RejectedInputError("band width must be >= 1")
            bins = FrequencyGrid.band_bins(self.n, center, width)
            if seen & set(bins):
                raise RejectedInputError("bands overlap")
            seen |= set(bins)
        object.__setattr__(self, "bands", bands)

    @property
    def grid(self) -> FrequencyGrid:
        excited: list = []
        for center, width in self.bands:
            excited.extend(FrequencyGrid.band_bins(self.n, center, width))
        controlled = self.controlled_bins if self.controlled_bins is not None else tuple(excited)
        return FrequencyGrid(n=self.n, excited_bins=tuple(excited), controlled_bins=controlled)


def gen_multisine(spec: MultisineSpec, realization: int = 0) -> Signal:
    """Random-phase multisine: given amplitudes on excited bins, zero elsewhere.

    Spectrum bins are scaled by N so a per-bin amplitude of 1 yields a
    unit-amplitude complex exponential in time.
    """
    gen = rng_for(spec.seed, 0, realization)
    phases = gen.uniform(0.0, 2.0 * np.pi, size=len(spec.grid.excited_bins))
    bins = np.zeros(spec.n, dtype=np.complex128)
    bins[spec.grid.excited_index] = (
        spec.n * np.asarray(spec.amplitude_profile) * np.exp(1j * phases)
    )
    sig = Signal(np.fft.ifft(bins), spec.sample_rate_hz)
    if spec.target_rms is not None:
        sig = scaled_to_rms(sig, spec.target_rms)
    return sig


def gen_ofdm_info(spec: OfdmSpec, realization: int = 0):
    """OFDM frame plus the accepted rejection-sampling attempt index."""
    symbols = np.asarray(spec.constellation, dtype=np.complex128)
    papr_seen: list = []
    for attempt in range(spec.max_attempts):
        gen = rng_for(spec.seed, 1, realization, attempt)
        bins = np.zeros(spec.n, dtype=np.complex128)
        bins[spec.grid.excited_index] = gen.choice(symbols, size=len(spec.grid.excited_bins))
        sig = Signal(np.fft.ifft(bins), spec.sample_rate_hz)
        if spec.papr_bounds_db is None:
            break
        p = papr_db(sig)
        papr_seen.append(p)
        lo, hi = spec.papr_bounds_db
        if lo <= p <= hi:
            break
    else:
        raise GenerationFailedError(
            f"PAPR bounds {spec.papr_bounds_db} dB unmet after {spec.max_attempts} "
            f"attempts (achieved range [{min(papr_seen):.2f}, {max(papr_seen):.2f}] dB)"
        )
    if spec.target_rms is not None:
        sig = scaled_to_rms(sig, spec.target_rms)
    return sig, attempt


def gen_ofdm(spec: OfdmSpec, realization: int = 0) -> Signal:
    return gen_ofdm_info(spec, realization)[0]


def gen_multiband(spec: MultibandSpec, realization: int = 0) -> Signal:
    """Random symbols on each band's bins; exact spectral zeros in the gaps."""
    grid = spec.grid
    gen = rng_for(spec.seed, 2, realization)
    symbols = np.asarray(spec.constellation, dtype=np.complex128)
    bins = np.zeros(spec.n, dtype=np.complex128)
    bins[grid.excited_index] = gen.choice(symbols, size=len(grid.excited_bins))
    sig = Signal(np.fft.ifft(bins), spec.sample_rate_hz)
    if spec.target_rms is not None:
        sig = scaled_to_rms(sig, spec.target_rms)
    return sig
