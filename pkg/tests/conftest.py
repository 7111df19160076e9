import numpy as np
import pytest

from ilcdpd.gmp import GmpModel
from ilcdpd.plant import SurrogatePa, mild_preset
from ilcdpd.signal_core import FrequencyGrid, Signal


def random_signal(n, seed, sample_rate_hz=1.0):
    rng = np.random.default_rng(seed)
    return Signal(rng.standard_normal(n) + 1j * rng.standard_normal(n), sample_rate_hz)


def fir_plant(taps, gain=1.0):
    """Purely linear plant: circular FIR prefilter, unit-gain GMP."""
    return SurrogatePa(forward_gmp=GmpModel.linear_gain(gain), prefilter=np.asarray(taps))


def fir_response(taps, n):
    """Closed-form frequency response of a circular FIR (independent oracle)."""
    padded = np.zeros(n, dtype=np.complex128)
    padded[: len(taps)] = taps
    return np.fft.fft(padded)


@pytest.fixture
def mild_pa():
    return mild_preset()


@pytest.fixture
def small_grid():
    return FrequencyGrid.centered_band(64, 9, 21)
