"""Generalized memory polynomial: regressors, least-squares fits, order
selection by cross-validation, and model file I/O.

The model of orders (n_m, n_p, n_g) is

    y(t) = sum_{m=0..n_m} sum_{p=0..n_p} sum_{g=0..n_g}
               alpha[m,p,g] * x(t-m) * |x(t-m-g)|^p
         + sum_{m=0..n_m} sum_{p=0..n_p} sum_{g=1..n_g}
               beta[m,p,g]  * x(t-m-g) * |x(t-m)|^p

with circular (periodic) index arithmetic.  Regressor columns are
ordered alpha-block first, each block lexicographic in (m, p, g); the
beta block starts at g = 1 so no column is duplicated.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError, RejectedInputError
from .signal_core import Signal


@dataclass(frozen=True)
class GmpOrders:
    n_m: int
    n_p: int
    n_g: int

    def __post_init__(self):
        if min(self.n_m, self.n_p, self.n_g) < 0:
            raise RejectedInputError("GMP orders must be nonnegative")

    @property
    def n_alpha(self) -> int:
        return (self.n_m + 1) * (self.n_p + 1) * (self.n_g + 1)

    @property
    def n_beta(self) -> int:
        return (self.n_m + 1) * (self.n_p + 1) * self.n_g

    @property
    def n_coeff(self) -> int:
        return self.n_alpha + self.n_beta

    @property
    def max_lag(self) -> int:
        return self.n_m + self.n_g


@dataclass(frozen=True)
class GmpModel:
    orders: GmpOrders
    alpha: np.ndarray  # shape (n_m+1, n_p+1, n_g+1)
    beta: np.ndarray  # shape (n_m+1, n_p+1, n_g)

    def __post_init__(self):
        o = self.orders
        alpha = np.asarray(self.alpha, dtype=np.complex128)
        beta = np.asarray(self.beta, dtype=np.complex128).reshape(o.n_m + 1, o.n_p + 1, o.n_g)
        if alpha.shape != (o.n_m + 1, o.n_p + 1, o.n_g + 1):
            raise RejectedInputError("alpha shape does not match orders")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise RejectedInputError("model coefficients must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def theta(self) -> np.ndarray:
        """Coefficients stacked in documented column order."""
        return np.concatenate([self.alpha.ravel(), self.beta.ravel()])

    @classmethod
    def from_theta(cls, orders: GmpOrders, theta: np.ndarray) -> "GmpModel":
        theta = np.asarray(theta, dtype=np.complex128)
        if theta.size != orders.n_coeff:
            raise RejectedInputError("coefficient vector length does not match orders")
        alpha = theta[: orders.n_alpha].reshape(orders.n_m + 1, orders.n_p + 1, orders.n_g + 1)
        beta = theta[orders.n_alpha :].reshape(orders.n_m + 1, orders.n_p + 1, orders.n_g)
        return cls(orders=orders, alpha=alpha, beta=beta)

    @classmethod
    def zeros(cls, orders: GmpOrders) -> "GmpModel":
        return cls.from_theta(orders, np.zeros(orders.n_coeff, dtype=np.complex128))

    @classmethod
    def linear_gain(cls, gain: complex) -> "GmpModel":
        return cls.from_theta(GmpOrders(0, 0, 0), np.array([gain], dtype=np.complex128))


def _samples(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.samples
    arr = np.asarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError("non-finite samples")
    return arr


def build_regressor(x, orders: GmpOrders) -> np.ndarray:
    """N x n_coeff regressor matrix with circular delays."""
    data = _samples(x)
    n = data.size
    if n <= orders.max_lag:
        raise RejectedInputError(
            f"signal length {n} too short for memory depth {orders.n_m} + cross depth {orders.n_g}"
        )
    delayed = {d: np.roll(data, d) for d in range(orders.max_lag + 1)}
    envelope_pow = {
        (d, p): np.abs(delayed[d]) ** p
        for d in range(orders.max_lag + 1)
        for p in range(orders.n_p + 1)
    }
    cols = []
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(orders.n_g + 1):
                cols.append(delayed[m] * envelope_pow[(m + g, p)])
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(1, orders.n_g + 1):
                cols.append(delayed[m + g] * envelope_pow[(m, p)])
    return np.column_stack(cols)


def canonical_mask(orders: GmpOrders) -> np.ndarray:
    """Marks one representative column per distinct regressor term.

    With envelope exponent p = 0 the cross index g drops out of the
    term, so the full column set contains exact duplicates: every alpha
    (m, 0, g) equals (m, 0, 0), and beta (m, 0, g) is the plain delayed
    sample x(t-m-g), duplicated across (m, g) pairs with equal m+g and
    duplicating alpha's linear columns whenever m+g <= n_m.  Fits are
    solved on the canonical columns only; duplicates get coefficient 0.
    """
    mask = np.zeros(orders.n_coeff, dtype=bool)
    i = 0
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(orders.n_g + 1):
                mask[i] = p > 0 or g == 0
                i += 1
    seen_linear_delays = set(range(orders.n_m + 1))
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(1, orders.n_g + 1):
                if p > 0:
                    mask[i] = True
                elif (m + g) not in seen_linear_delays:
                    mask[i] = True
                    seen_linear_delays.add(m + g)
                i += 1
    return mask


def fit_theta(regressor: np.ndarray, target, ridge: float = 0.0,
              mask: np.ndarray | None = None):
    """Equilibrated least squares; returns (theta, residual_rms).

    Columns are scaled to unit norm before the solve to tame the
    conditioning of high-degree envelope powers; optional ridge adds
    sqrt(ridge) * I rows on the scaled problem.
    """
    y = _samples(target)
    if regressor.shape[0] != y.size:
        raise RejectedInputError("regressor rows must match target length")
    if ridge < 0:
        raise RejectedInputError("ridge must be nonnegative")
    n_full = regressor.shape[1]
    if mask is None:
        mask = np.ones(n_full, dtype=bool)
    x = regressor[:, mask]
    n_coeff = x.shape[1]
    scale = np.linalg.norm(x, axis=0)
    scale[scale == 0.0] = 1.0
    a = x / scale
    b = y
    if ridge > 0.0:
        a = np.vstack([a, np.sqrt(ridge) * np.eye(n_coeff, dtype=np.complex128)])
        b = np.concatenate([y, np.zeros(n_coeff, dtype=np.complex128)])
    theta_scaled, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if ridge == 0.0 and rank < n_coeff:
        raise IllConditionedError(
            f"regressor rank {rank} < {n_coeff} coefficients; add ridge or lower the orders"
        )
    theta = np.zeros(n_full, dtype=np.complex128)
    theta[mask] = theta_scaled / scale
    residual = regressor @ theta - y
    residual_rms = float(np.sqrt(np.mean(np.abs(residual) ** 2)))
    return theta, residual_rms


def fit_gmp(regressor: np.ndarray, target, orders: GmpOrders, ridge: float = 0.0):
    """Fit a GmpModel to `target`; returns (model, residual_rms)."""
    theta, residual_rms = fit_theta(regressor, target, ridge, canonical_mask(orders))
    return GmpModel.from_theta(orders, theta), residual_rms


def fit_gmp_multi(pairs, orders: GmpOrders, ridge: float = 0.0):
    """Fit one model on several (input, target) realizations.

    Each realization is treated circularly within itself; rows are
    concatenated, so there is no cross-realization wraparound.
    """
    regs = [build_regressor(x, orders) for x, _ in pairs]
    targets = [_samples(t) for _, t in pairs]
    theta, residual_rms = fit_theta(
        np.vstack(regs), np.concatenate(targets), ridge, canonical_mask(orders)
    )
    return GmpModel.from_theta(orders, theta), residual_rms


def apply_gmp(model: GmpModel, x):
    """Evaluate the model; equals build_regressor(x) @ theta exactly."""
    out = build_regressor(x, model.orders) @ model.theta
    if isinstance(x, Signal):
        return Signal(out, x.sample_rate_hz, x.carrier_hz)
    return out


def cross_validate(pairs, order_grid, ridge: float = 0.0, tie_tol: float = 1e-6):
    """Hold-out order selection: fit on all pairs but the last, score on it.

    Returns (best_orders, table) where table is a list of
    (orders, validation_rms) in grid order (NaN for skipped orders).
    Candidates whose rms is within tie_tol * rms(validation target) of
    the minimum are tied; the tie breaks toward fewer coefficients.
    """
    if len(pairs) < 2:
        raise RejectedInputError("cross-validation needs at least 2 realization pairs")
    if not order_grid:
        raise RejectedInputError("empty order grid")
    fit_pairs, (x_val, y_val) = list(pairs[:-1]), pairs[-1]
    y_val_arr = _samples(y_val)
    target_rms = float(np.sqrt(np.mean(np.abs(y_val_arr) ** 2)))
    table = []
    for orders in order_grid:
        try:
            model, _ = fit_gmp_multi(fit_pairs, orders, ridge)
        except IllConditionedError as exc:
            warnings.warn(f"orders {orders} skipped: {exc}")
            table.append((orders, float("nan")))
            continue
        pred = _samples(apply_gmp(model, x_val))
        val_rms = float(np.sqrt(np.mean(np.abs(pred - y_val_arr) ** 2)))
        table.append((orders, val_rms))
    valid = [(orders, v) for orders, v in table if np.isfinite(v)]
    if not valid:
        raise IllConditionedError("every candidate order was ill-conditioned")
    best_rms = min(v for _, v in valid)
    tied = [(orders, v) for orders, v in valid if v <= best_rms + tie_tol * target_rms]
    best = min(tied, key=lambda item: (item[0].n_coeff, item[1]))[0]
    return best, table


def estimate_postinverse(y, u, orders: GmpOrders, ridge: float = 0.0, gain=1.0):
    """Post-inverse fit (ILA baseline): gain-normalized output -> input.

    `gain` is either a complex scalar or a length-N per-bin complex
    array applied in the frequency domain (e.g. the BLA response filled
    with its mean outside the controlled band).
    """
    y_arr = _samples(y)
    u_arr = _samples(u)
    if y_arr.size != u_arr.size:
        raise RejectedInputError("output and input lengths differ")
    if np.isscalar(gain) or np.asarray(gain).ndim == 0:
        y_norm = y_arr / complex(gain)
    else:
        gain_arr = np.asarray(gain, dtype=np.complex128)
        if gain_arr.size != y_arr.size:
            raise RejectedInputError("per-bin gain length must match the signal")
        y_norm = np.fft.ifft(np.fft.fft(y_arr) / gain_arr)
    regressor = build_regressor(y_norm, orders)
    return fit_gmp(regressor, u_arr, orders, ridge)


# ---------------------------------------------------------------------------
# Model files: versioned plain text, one coefficient per line.
# ---------------------------------------------------------------------------

MODEL_FORMAT_TAG = "gmp-model v1"


def save_gmp_model(path, model: GmpModel) -> None:
    o = model.orders
    with open(path, "w") as fh:
        fh.write(f"# {MODEL_FORMAT_TAG}\n")
        fh.write(f"orders {o.n_m} {o.n_p} {o.n_g}\n")
        for (m, p, g), c in np.ndenumerate(model.alpha):
            fh.write(f"alpha {m} {p} {g} {c.real:.17e} {c.imag:.17e}\n")
        for (m, p, g), c in np.ndenumerate(model.beta):
            fh.write(f"beta {m} {p} {g + 1} {c.real:.17e} {c.imag:.17e}\n")


def load_gmp_model(path) -> GmpModel:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"# {MODEL_FORMAT_TAG}":
            raise RejectedInputError(f"{path}: not a {MODEL_FORMAT_TAG} file")
        tokens = fh.readline().split()
        if len(tokens) != 4 or tokens[0] != "orders":
            raise RejectedInputError(f"{path}: missing orders line")
        orders = GmpOrders(int(tokens[1]), int(tokens[2]), int(tokens[3]))
        alpha = np.zeros((orders.n_m + 1, orders.n_p + 1, orders.n_g + 1), dtype=np.complex128)
        beta = np.zeros((orders.n_m + 1, orders.n_p + 1, orders.n_g), dtype=np.complex128)
        for line in fh:
            kind, m, p, g, re, im = line.split()
            value = complex(float(re), float(im))
            if kind == "alpha":
                alpha[int(m), int(p), int(g)] = value
            elif kind == "beta":
                beta[int(m), int(p), int(g) - 1] = value
            else:
                raise RejectedInputError(f"{path}: unknown coefficient kind {kind!r}")
    return GmpModel(orders=orders, alpha=alpha, beta=beta)
