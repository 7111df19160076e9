"""ILC-based digital predistortion toolkit."""

from .bla import FrfEstimate, LearningFilter, estimate_bla, invert_frf
from .gmp import (
    GmpModel,
    GmpOrders,
    apply_gmp,
    build_regressor,
    cross_validate,
    estimate_postinverse,
    fit_gmp,
)
from .ilc import (
    BlaReference,
    ConstantGain,
    IlcConfig,
    IlcTrajectory,
    compensation_error,
    ilc_step,
    make_desired,
    run_ilc,
)
from .metrics import convergence_curve, error_spectrum_db, noise_floor, nrmse
from .plant import RemotePlant, SurrogatePa, mild_preset, plant_serve, surrogate_apply
from .siggen import MultibandSpec, MultisineSpec, OfdmSpec, gen_multiband, gen_multisine, gen_ofdm
from .signal_core import FrequencyGrid, Signal, Spectrum, dft, idft, papr_db, rms_power_db

__all__ = [name for name in dir() if not name.startswith("_")]
