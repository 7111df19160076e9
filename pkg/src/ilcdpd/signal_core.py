"""Complex-baseband signal and spectrum types plus DFT conventions.

Conventions used throughout the toolkit:

* signals are one period of an N-periodic complex-baseband sequence;
  all shifts and convolutions are circular,
* forward DFT is unnormalized, the inverse carries the 1/N factor
  (numpy's default), so Parseval reads sum|x|^2 = (1/N) sum|X|^2,
* the carrier frequency is metadata only and never enters a computation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError, UndefinedStatisticError

# Sentinel for log of an exact zero; keeps CSV output and plots finite.
DB_FLOOR = -400.0


def _as_complex_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim != 1 or arr.size < 2:
        raise RejectedInputError(f"{name} must be 1-D with at least 2 samples")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} contains non-finite values")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Signal:
    """One period of a complex-baseband time-domain signal."""

    samples: np.ndarray
    sample_rate_hz: float = 1.0
    carrier_hz: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_complex_array(self.samples, "signal"))
        if not self.sample_rate_hz > 0:
            raise RejectedInputError("sample_rate_hz must be positive")
        if self.carrier_hz < 0:
            raise RejectedInputError("carrier_hz must be nonnegative")

    @property
    def n(self) -> int:
        return self.samples.size

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    """DFT of one signal period (unnormalized-forward convention)."""

    bins: np.ndarray
    sample_rate_hz: float = 1.0
    carrier_hz: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bins", _as_complex_array(self.bins, "spectrum"))
        if not self.sample_rate_hz > 0:
            raise RejectedInputError("sample_rate_hz must be positive")

    @property
    def n(self) -> int:
        return self.bins.size

    @property
    def bin_spacing_hz(self) -> float:
        return self.sample_rate_hz / self.bins.size

    def __len__(self) -> int:
        return self.bins.size


@dataclass(frozen=True)
class FrequencyGrid:
    """Index sets of excited and controlled DFT bins of an N-point grid.

    Bins are stored sorted ascending by index; negative baseband
    frequencies live in the upper half of the index range (fftfreq
    layout).
    """

    n: int
    excited_bins: tuple
    controlled_bins: tuple

    def __post_init__(self):
        excited = tuple(int(k) for k in self.excited_bins)
        controlled = tuple(int(k) for k in self.controlled_bins)
        if len(set(excited)) != len(excited) or len(set(controlled)) != len(controlled):
            raise RejectedInputError("duplicate bin indices in grid")
        if not set(excited) <= set(controlled):
            raise RejectedInputError("excited bins must be a subset of controlled bins")
        if controlled and not (0 <= min(controlled) and max(controlled) < self.n):
            raise RejectedInputError("controlled bins out of range")
        if len(controlled) >= self.n:
            raise RejectedInputError("controlled bins must be a strict subset of the grid")
        object.__setattr__(self, "excited_bins", tuple(sorted(excited)))
        object.__setattr__(self, "controlled_bins", tuple(sorted(controlled)))

    @property
    def excited_index(self) -> np.ndarray:
        return np.asarray(self.excited_bins, dtype=np.intp)

    @property
    def controlled_index(self) -> np.ndarray:
        return np.asarray(self.controlled_bins, dtype=np.intp)

    @staticmethod
    def band_bins(n: int, center_bin: int, width: int) -> tuple:
        """Indices of a contiguous band of `width` bins centered (mod n)."""
        lo = center_bin - (width - 1) // 2
        return tuple(sorted({(lo + i) % n for i in range(width)}))

    @classmethod
    def centered_band(cls, n: int, excited_width: int, controlled_width: int) -> "FrequencyGrid":
        """Grid with excited and controlled bands centered on DC."""
        return cls(
            n=n,
            excited_bins=cls.band_bins(n, 0, excited_width),
            controlled_bins=cls.band_bins(n, 0, controlled_width),
        )


def bin_freqs_hz(n: int, sample_rate_hz: float) -> np.ndarray:
    """Baseband frequency of each bin (negative for the upper half)."""
    return np.fft.fftfreq(n, d=1.0 / sample_rate_hz)


def dft(signal: Signal) -> Spectrum:
    """Forward DFT, X[k] = sum_t x[t] exp(-i 2 pi k t / N)."""
    return Spectrum(
        bins=np.fft.fft(signal.samples),
        sample_rate_hz=signal.sample_rate_hz,
        carrier_hz=signal.carrier_hz,
    )


def idft(spectrum: Spectrum) -> Signal:
    """Inverse DFT, x[t] = (1/N) sum_k X[k] exp(+i 2 pi k t / N)."""
    return Signal(
        samples=np.fft.ifft(spectrum.bins),
        sample_rate_hz=spectrum.sample_rate_hz,
        carrier_hz=spectrum.carrier_hz,
    )


def papr_db(signal: Signal) -> float:
    """Peak-to-average power ratio in dB."""
    power = np.abs(signal.samples) ** 2
    mean = power.mean()
    if mean == 0.0:
        raise UndefinedStatisticError("PAPR undefined for an all-zero signal")
    return 10.0 * np.log10(power.max() / mean)


def rms(signal: Signal) -> float:
    return float(np.sqrt(np.mean(np.abs(signal.samples) ** 2)))


def rms_power_db(signal: Signal) -> float:
    """Mean power in dB relative to unit amplitude; DB_FLOOR for all zeros."""
    mean = np.mean(np.abs(signal.samples) ** 2)
    if mean == 0.0:
        return DB_FLOOR
    return float(10.0 * np.log10(mean))


def rms_power_dbm(signal: Signal, load_ohms: float = 50.0) -> float:
    """Mean power in dBm treating samples as volts across `load_ohms`."""
    db = rms_power_db(signal)
    if db == DB_FLOOR:
        return DB_FLOOR
    return db + 10.0 * np.log10(1000.0 / load_ohms)


def scaled_to_rms(signal: Signal, target_rms: float) -> Signal:
    """Rescale a nonzero signal to the requested RMS amplitude."""
    current = rms(signal)
    if current == 0.0:
        raise UndefinedStatisticError("cannot rescale an all-zero signal")
    return Signal(
        samples=signal.samples * (target_rms / current),
        sample_rate_hz=signal.sample_rate_hz,
        carrier_hz=signal.carrier_hz,
    )


# ---------------------------------------------------------------------------
# Serialization: one line per sample, "re,im" in scientific notation, with a
# header line carrying length, sample rate and carrier.
# ---------------------------------------------------------------------------

def _write_complex_csv(path, values: np.ndarray, sample_rate_hz: float, carrier_hz: float):
    with open(path, "w") as fh:
        fh.write(f"# n={values.size} fs={sample_rate_hz!r} fc={carrier_hz!r}\n")
        for v in values:
            fh.write(f"{v.real:.17e},{v.imag:.17e}\n")


def _read_complex_csv(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# n="):
            raise RejectedInputError(f"{path}: missing signal header")
        fields = dict(item.split("=", 1) for item in header[2:].split())
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    data = values[:, 0] + 1j * values[:, 1]
    if data.size != int(fields["n"]):
        raise RejectedInputError(f"{path}: sample count does not match header")
    return data, float(fields["fs"]), float(fields["fc"])


def write_signal(path, signal: Signal) -> None:
    _write_complex_csv(path, signal.samples, signal.sample_rate_hz, signal.carrier_hz)


def read_signal(path) -> Signal:
    data, fs, fc = _read_complex_csv(path)
    return Signal(samples=data, sample_rate_hz=fs, carrier_hz=fc)


def write_spectrum(path, spectrum: Spectrum) -> None:
    _write_complex_csv(path, spectrum.bins, spectrum.sample_rate_hz, spectrum.carrier_hz)


def read_spectrum(path) -> Spectrum:
    data, fs, fc = _read_complex_csv(path)
    return Spectrum(bins=data, sample_rate_hz=fs, carrier_hz=fc)
