"""Validation metrics: normalized RMS error, error spectra in dB,
noise-floor estimation, and convergence curves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInputError, UndefinedStatisticError
from .ilc import IlcTrajectory
from .signal_core import DB_FLOOR, Signal


def nrmse(y_d: Signal, y_c: Signal) -> float:
    """sqrt( sum|y_d - y_c|^2 / sum|y_d|^2 ), desired output as denominator."""
    if y_d.n != y_c.n:
        raise RejectedInputError("signals must share one length")
    denom = np.sum(np.abs(y_d.samples) ** 2)
    if denom == 0.0:
        raise UndefinedStatisticError("NRMSE undefined for a zero-power desired output")
    return float(np.sqrt(np.sum(np.abs(y_d.samples - y_c.samples) ** 2) / denom))


def _power_db(power: np.ndarray) -> np.ndarray:
    out = np.full(power.size, DB_FLOOR)
    nonzero = power > 0
    out[nonzero] = 10.0 * np.log10(power[nonzero])
    return out


def error_spectrum_db(y_d: Signal, y_c: Signal) -> np.ndarray:
    """Per-bin error in dB relative to the desired-output spectral peak."""
    if y_d.n != y_c.n:
        raise RejectedInputError("signals must share one length")
    e_bins = np.fft.fft(y_d.samples - y_c.samples)
    peak = np.abs(np.fft.fft(y_d.samples)).max()
    if peak == 0.0:
        raise UndefinedStatisticError("desired output has an empty spectrum")
    return _power_db(np.abs(e_bins / peak) ** 2)


@dataclass(frozen=True)
class NoiseFloorEstimate:
    per_bin_db: np.ndarray
    method: str = "repeat-difference"

    @property
    def per_bin_power(self) -> np.ndarray:
        power = np.zeros(self.per_bin_db.size)
        above = self.per_bin_db > DB_FLOOR
        power[above] = 10.0 ** (self.per_bin_db[above] / 10.0)
        return power

    def rms_over_bins(self, bins: np.ndarray, n: int) -> float:
        """Time-domain RMS of the noise component on the given bins."""
        return float(np.sqrt(np.sum(self.per_bin_power[np.asarray(bins, dtype=np.intp)])) / n)


def noise_floor(measurements) -> NoiseFloorEstimate:
    """Per-bin noise power from repeated measurements of one input.

    Averages |DFT(y_i - y_{i+1})|^2 / 2 over consecutive pairs; the
    difference of two independent noise draws has twice the noise power.
    """
    measurements = list(measurements)
    if len(measurements) < 2:
        raise RejectedInputError("need at least 2 repeated measurements")
    n = measurements[0].n
    if any(m.n != n for m in measurements):
        raise RejectedInputError("measurements must share one length")
    power = np.zeros(n)
    pairs = len(measurements) - 1
    for a, b in zip(measurements, measurements[1:]):
        diff = np.fft.fft(a.samples - b.samples)
        power += np.abs(diff) ** 2 / 2.0
    return NoiseFloorEstimate(per_bin_db=_power_db(power / pairs))


def convergence_curve(traj: IlcTrajectory) -> np.ndarray:
    """(iteration, relative error RMS in dB) rows; DB_FLOOR for exact zeros."""
    if traj.y_d_norm == 0.0:
        raise UndefinedStatisticError("desired output norm is zero")
    rel = traj.error_norms / traj.y_d_norm
    db = np.full(rel.size, DB_FLOOR)
    nonzero = rel > 0
    db[nonzero] = 20.0 * np.log10(rel[nonzero])
    return np.column_stack([np.arange(rel.size, dtype=float), db])


@dataclass(frozen=True)
class ValidationReport:
    nrmse_uncompensated: float
    nrmse_postinverse: float
    nrmse_preinverse: float
    papr_db: float
    fingerprint: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("nrmse_uncompensated", "nrmse_postinverse", "nrmse_preinverse", "papr_db"):
            if not np.isfinite(getattr(self, name)):
                raise RejectedInputError(f"{name} must be finite")

    @property
    def winner(self) -> str:
        return "pre-inverse" if self.nrmse_preinverse <= self.nrmse_postinverse else "post-inverse"

    def to_text(self) -> str:
        lines = [
            "validation-report v1",
            f"nrmse_uncompensated = {self.nrmse_uncompensated!r}",
            f"nrmse_postinverse = {self.nrmse_postinverse!r}",
            f"nrmse_preinverse = {self.nrmse_preinverse!r}",
            f"winner = {self.winner}",
            f"validation_papr_db = {self.papr_db!r}",
        ]
        for key in sorted(self.fingerprint):
            lines.append(f"fingerprint.{key} = {self.fingerprint[key]}")
        return "\n".join(lines) + "\n"


def write_spectrum_db_csv(path, per_bin_db: np.ndarray, sample_rate_hz: float = 1.0) -> None:
    """Plot-ready two-column file: frequency in Hz, level in dB."""
    freqs = np.fft.fftfreq(per_bin_db.size, d=1.0 / sample_rate_hz)
    with open(path, "w") as fh:
        fh.write("freq_hz,level_db\n")
        for f, db in zip(freqs, per_bin_db):
            fh.write(f"{float(f)!r},{float(db)!r}\n")
