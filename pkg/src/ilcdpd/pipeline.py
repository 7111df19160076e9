"""Experiment pipelines wiring the modules together: BLA estimation,
ILC runs per realization, inverse fitting, and validation.  Every stage
writes its outputs under a run directory and returns the in-memory
objects so stages can be chained without re-reading files."""
from __future__ import annotations

import os
import shutil
import warnings
from dataclasses import replace

import numpy as np

from . import bla as bla_mod
from .config import ExperimentConfig, resolved_text
from .errors import ConfigError
from .gmp import (
    GmpOrders,
    apply_gmp,
    cross_validate,
    fit_gmp_multi,
    load_gmp_model,
    save_gmp_model,
)
from .ilc import ConstantGain, make_desired, run_ilc
from .metrics import ValidationReport, convergence_curve, error_spectrum_db, nrmse, write_spectrum_db_csv
from .plant import RemotePlant, load_preset, mild_preset
from .signal_core import FrequencyGrid, Signal, idft, papr_db, read_signal, write_signal
from .siggen import MultibandSpec, MultisineSpec, OfdmSpec, gen_multiband, gen_ofdm

INCOMPLETE_MARKER = "INCOMPLETE"


# ---------------------------------------------------------------------------
# Run directory plumbing
# ---------------------------------------------------------------------------

def prepare_run_dir(out_dir, cfg: ExperimentConfig, force: bool = False) -> str:
    out_dir = str(out_dir)
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        if not force:
            raise FileExistsError(f"run directory {out_dir} is not empty (use --force)")
        shutil.rmtree(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("signals", "frf", "ilc", "models", "report"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    with open(os.path.join(out_dir, INCOMPLETE_MARKER), "w") as fh:
        fh.write("run in progress or aborted\n")
    with open(os.path.join(out_dir, "config_resolved.ini"), "w") as fh:
        fh.write(resolved_text(cfg))
    return out_dir


def finalize_run_dir(out_dir) -> None:
    marker = os.path.join(str(out_dir), INCOMPLETE_MARKER)
    if os.path.exists(marker):
        os.remove(marker)


# ---------------------------------------------------------------------------
# Config-driven builders
# ---------------------------------------------------------------------------

def build_grid(cfg: ExperimentConfig) -> FrequencyGrid:
    n = cfg.get("signal", "n")
    if cfg.signal_class == "multiband":
        bands = cfg.get("signal", "bands")
        if bands is None:
            raise ConfigError("signal.bands is required for class multiband")
        spec = MultibandSpec(n=n, bands=bands)
        excited = spec.grid.excited_bins
        if cfg.get("signal", "controlled_bins") is not None:
            controlled = FrequencyGrid.band_bins(n, 0, cfg.controlled_width)
            return FrequencyGrid(n=n, excited_bins=excited,
                                 controlled_bins=tuple(sorted(set(controlled) | set(excited))))
        return spec.grid
    return FrequencyGrid.centered_band(n, cfg.get("signal", "excited_tones"), cfg.controlled_width)


def reference_signal(cfg: ExperimentConfig, grid: FrequencyGrid, realization: int) -> Signal:
    common = dict(
        n=cfg.get("signal", "n"),
        seed=cfg.get("signal", "seed"),
        constellation=cfg.constellation,
        sample_rate_hz=cfg.get("signal", "sample_rate_hz"),
        target_rms=cfg.get("signal", "target_rms"),
    )
    if cfg.signal_class == "multiband":
        spec = MultibandSpec(bands=cfg.get("signal", "bands"),
                             controlled_bins=grid.controlled_bins, **common)
        return gen_multiband(spec, realization)
    if cfg.signal_class == "ofdm":
        spec = OfdmSpec(grid=grid, papr_bounds_db=cfg.papr_bounds_db, **common)
        return gen_ofdm(spec, realization)
    raise ConfigError(f"unsupported reference signal class {cfg.signal_class!r}")


def build_plant(cfg: ExperimentConfig):
    remote = cfg.get("plant", "remote")
    if remote is not None:
        host, _, port = remote.rpartition(":")
        if not host:
            raise ConfigError("plant.remote must be host:port")
        return RemotePlant(host=host, port=int(port), timeout_s=cfg.get("plant", "timeout_s"))
    preset = cfg.get("plant", "preset")
    pa = mild_preset() if preset == "mild" else load_preset(preset)
    if cfg.get("plant", "noise_std") is not None:
        pa = replace(pa, noise_std=cfg.get("plant", "noise_std"))
    if cfg.get("plant", "noise_seed") is not None:
        pa = replace(pa, noise_seed=cfg.get("plant", "noise_seed"))
    return pa


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_bla(cfg: ExperimentConfig, plant, grid: FrequencyGrid, out_dir=None):
    """Estimate the BLA on a multisine exciting every controlled bin."""
    bla_grid = FrequencyGrid(n=grid.n, excited_bins=grid.controlled_bins,
                             controlled_bins=grid.controlled_bins)
    spec = MultisineSpec.flat(
        bla_grid,
        seed=cfg.get("bla", "seed"),
        sample_rate_hz=cfg.get("signal", "sample_rate_hz"),
        target_rms=cfg.get("signal", "target_rms"),
    )
    frf = bla_mod.estimate_bla(plant, spec, cfg.get("bla", "realizations"))
    # re-attach the experiment grid so excited/controlled distinction survives
    frf = bla_mod.FrfEstimate(grid=grid, g_bla=frf.g_bla, variance=frf.variance,
                              n_realizations=frf.n_realizations)
    lfilter = bla_mod.invert_frf(frf, cfg.get("bla", "gain_floor_rel") * np.abs(frf.g_bla).max())
    if out_dir is not None:
        bla_mod.write_frf_csv(os.path.join(out_dir, "frf", "frf.csv"), frf,
                              cfg.get("signal", "sample_rate_hz"))
    return frf, lfilter


def stage_ilc(cfg: ExperimentConfig, plant, frf, lfilter, out_dir=None):
    """Run the learning loop on every estimation realization.

    Returns a list of (reference, trajectory, desired-output spectrum).
    """
    mode = cfg.desired_mode()
    ilc_cfg = cfg.ilc_config()
    runs = []
    for i in range(cfg.get("signal", "realizations")):
        r = reference_signal(cfg, frf.grid, i)
        y_d = make_desired(r, mode, frf)
        traj = run_ilc(plant, r, y_d, lfilter, ilc_cfg)
        runs.append((r, traj, y_d))
        if out_dir is not None:
            tag = f"r{i:02d}"
            write_signal(os.path.join(out_dir, "signals", f"reference_{tag}.csv"), r)
            write_signal(os.path.join(out_dir, "signals", f"predistorted_{tag}.csv"),
                         traj.best_input)
            write_signal(os.path.join(out_dir, "signals", f"output_{tag}.csv"),
                         traj.outputs[traj.best_index])
            _write_convergence(os.path.join(out_dir, "ilc", f"convergence_{tag}.csv"), traj)
    return runs


def _write_convergence(path, traj) -> None:
    curve = convergence_curve(traj)
    with open(path, "w") as fh:
        fh.write("iteration,error_rms,error_rms_db\n")
        for (j, db), rms_abs in zip(curve, traj.error_norms):
            fh.write(f"{int(j)},{rms_abs:.17e},{db!r}\n")


def _postinverse_gain(cfg: ExperimentConfig, frf):
    mode = cfg.desired_mode()
    if isinstance(mode, ConstantGain):
        return mode.gain
    return frf.full_gain()


def stage_fit(cfg: ExperimentConfig, runs, frf, out_dir=None):
    """Cross-validated pre- and post-inverse GMP fits.

    The pre-inverse maps the reference to the learned predistorted
    input; the post-inverse maps the gain-normalized measured output to
    the applied input (indirect-learning baseline).
    """
    if len(runs) < 2:
        raise ConfigError("at least 2 realizations are needed for cross-validation")
    ridge = cfg.get("gmp", "ridge")
    tie_tol = cfg.get("gmp", "tie_tol")
    order_grid = cfg.get("gmp", "orders")
    gain = _postinverse_gain(cfg, frf)

    pre_pairs = [(r, traj.best_input) for r, traj, _ in runs]
    post_pairs = []
    for _, traj, _ in runs:
        y = traj.outputs[traj.best_index]
        if np.isscalar(gain) or np.asarray(gain).ndim == 0:
            y_norm = Signal(y.samples / complex(gain), y.sample_rate_hz, y.carrier_hz)
        else:
            y_norm = Signal(np.fft.ifft(np.fft.fft(y.samples) / gain),
                            y.sample_rate_hz, y.carrier_hz)
        post_pairs.append((y_norm, traj.best_input))

    pre_orders, pre_table = cross_validate(pre_pairs, order_grid, ridge, tie_tol)
    post_orders, post_table = cross_validate(post_pairs, order_grid, ridge, tie_tol)
    pre_model, pre_residual = fit_gmp_multi(pre_pairs, pre_orders, ridge)
    post_model, post_residual = fit_gmp_multi(post_pairs, post_orders, ridge)

    if out_dir is not None:
        _write_cv_table(os.path.join(out_dir, "models", "cv_preinverse.csv"), pre_table)
        _write_cv_table(os.path.join(out_dir, "models", "cv_postinverse.csv"), post_table)
        save_gmp_model(os.path.join(out_dir, "models", "preinverse.txt"), pre_model)
        save_gmp_model(os.path.join(out_dir, "models", "postinverse.txt"), post_model)
    return {
        "pre_model": pre_model,
        "post_model": post_model,
        "pre_orders": pre_orders,
        "post_orders": post_orders,
        "pre_residual": pre_residual,
        "post_residual": post_residual,
    }


def _write_cv_table(path, table) -> None:
    with open(path, "w") as fh:
        fh.write("n_m,n_p,n_g,n_coeff,validation_rms\n")
        for orders, rms_val in table:
            fh.write(f"{orders.n_m},{orders.n_p},{orders.n_g},{orders.n_coeff},{rms_val!r}\n")


def stage_validate(cfg: ExperimentConfig, plant, frf, models, out_dir=None) -> ValidationReport:
    """Score both inverses against the uncompensated run on held-out data."""
    v_idx = cfg.validation_realization
    if 0 <= v_idx < cfg.get("signal", "realizations"):
        warnings.warn(
            f"validation realization {v_idx} was also used for estimation (data leakage)"
        )
    r_v = reference_signal(cfg, frf.grid, v_idx)
    y_d = idft(make_desired(r_v, cfg.desired_mode(), frf))
    cases = {
        "uncompensated": plant.apply(r_v),
        "preinverse": plant.apply(apply_gmp(models["pre_model"], r_v)),
        "postinverse": plant.apply(apply_gmp(models["post_model"], r_v)),
    }
    scores = {name: nrmse(y_d, y_c) for name, y_c in cases.items()}
    pre_o: GmpOrders = models["pre_orders"]
    post_o: GmpOrders = models["post_orders"]
    report = ValidationReport(
        nrmse_uncompensated=scores["uncompensated"],
        nrmse_postinverse=scores["postinverse"],
        nrmse_preinverse=scores["preinverse"],
        papr_db=papr_db(r_v),
        fingerprint={
            "preset_id": getattr(plant, "preset_id", "remote"),
            "signal_seed": cfg.get("signal", "seed"),
            "bla_seed": cfg.get("bla", "seed"),
            "realizations": cfg.get("signal", "realizations"),
            "validation_realization": v_idx,
            "pre_orders": f"{pre_o.n_m}:{pre_o.n_p}:{pre_o.n_g}",
            "post_orders": f"{post_o.n_m}:{post_o.n_p}:{post_o.n_g}",
        },
    )
    if out_dir is not None:
        fs = cfg.get("signal", "sample_rate_hz")
        for name, y_c in cases.items():
            write_spectrum_db_csv(
                os.path.join(out_dir, "report", f"error_spectrum_{name}.csv"),
                error_spectrum_db(y_d, y_c), fs)
        with open(os.path.join(out_dir, "report", "report.txt"), "w") as fh:
            fh.write(report.to_text())
    return report


# ---------------------------------------------------------------------------
# Whole-pipeline commands (shared by the CLI and the test suite)
# ---------------------------------------------------------------------------

def run_full(cfg: ExperimentConfig, out_dir, force: bool = False) -> ValidationReport:
    out_dir = prepare_run_dir(out_dir, cfg, force)
    plant = build_plant(cfg)
    grid = build_grid(cfg)
    frf, lfilter = stage_bla(cfg, plant, grid, out_dir)
    runs = stage_ilc(cfg, plant, frf, lfilter, out_dir)
    models = stage_fit(cfg, runs, frf, out_dir)
    report = stage_validate(cfg, plant, frf, models, out_dir)
    finalize_run_dir(out_dir)
    return report


def run_bla_cmd(cfg: ExperimentConfig, out_dir, force: bool = False):
    out_dir = prepare_run_dir(out_dir, cfg, force)
    frf, _ = stage_bla(cfg, build_plant(cfg), build_grid(cfg), out_dir)
    finalize_run_dir(out_dir)
    return frf


def run_ilc_cmd(cfg: ExperimentConfig, out_dir, force: bool = False):
    out_dir = prepare_run_dir(out_dir, cfg, force)
    plant = build_plant(cfg)
    frf, lfilter = stage_bla(cfg, plant, build_grid(cfg), out_dir)
    runs = stage_ilc(cfg, plant, frf, lfilter, out_dir)
    finalize_run_dir(out_dir)
    return runs


def run_fit_cmd(cfg: ExperimentConfig, out_dir):
    """Fit inverses from the signals/ directory of a previous ILC run."""
    out_dir = str(out_dir)
    plant = build_plant(cfg)
    grid = build_grid(cfg)
    frf, lfilter = stage_bla(cfg, plant, grid, None)
    runs = _reload_runs(cfg, out_dir, frf)
    models = stage_fit(cfg, runs, frf, out_dir)
    return models


def run_validate_cmd(cfg: ExperimentConfig, out_dir) -> ValidationReport:
    """Validate the model files of a previous fit run."""
    out_dir = str(out_dir)
    plant = build_plant(cfg)
    frf, _ = stage_bla(cfg, plant, build_grid(cfg), None)
    models = {
        "pre_model": load_gmp_model(os.path.join(out_dir, "models", "preinverse.txt")),
        "post_model": load_gmp_model(os.path.join(out_dir, "models", "postinverse.txt")),
    }
    models["pre_orders"] = models["pre_model"].orders
    models["post_orders"] = models["post_model"].orders
    return stage_validate(cfg, plant, frf, models, out_dir)


class _StoredRun:
    """Minimal trajectory stand-in for runs reloaded from disk."""

    def __init__(self, u: Signal, y: Signal):
        self.inputs = (u,)
        self.outputs = (y,)
        self.best_index = 0
        self.best_input = u


def _reload_runs(cfg: ExperimentConfig, out_dir, frf):
    runs = []
    for i in range(cfg.get("signal", "realizations")):
        tag = f"r{i:02d}"
        r = read_signal(os.path.join(out_dir, "signals", f"reference_{tag}.csv"))
        u = read_signal(os.path.join(out_dir, "signals", f"predistorted_{tag}.csv"))
        y = read_signal(os.path.join(out_dir, "signals", f"output_{tag}.csv"))
        traj = _StoredRun(u, y)
        runs.append((r, traj, make_desired(r, cfg.desired_mode(), frf)))
    return runs
