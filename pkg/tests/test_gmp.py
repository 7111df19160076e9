import numpy as np
import pytest

from conftest import random_signal
from ilcdpd.errors import IllConditionedError, RejectedInputError
from ilcdpd.gmp import (
    GmpModel,
    GmpOrders,
    apply_gmp,
    build_regressor,
    canonical_mask,
    cross_validate,
    estimate_postinverse,
    fit_gmp,
    fit_gmp_multi,
    load_gmp_model,
    save_gmp_model,
)
from ilcdpd.signal_core import Signal


def nested_loop_regressor(x, orders):
    """Scalar re-evaluation of every regressor entry (oracle)."""
    n = len(x)
    cols = []
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(orders.n_g + 1):
                col = np.empty(n, dtype=complex)
                for t in range(n):
                    col[t] = x[(t - m) % n] * abs(x[(t - m - g) % n]) ** p
                cols.append(col)
    for m in range(orders.n_m + 1):
        for p in range(orders.n_p + 1):
            for g in range(1, orders.n_g + 1):
                col = np.empty(n, dtype=complex)
                for t in range(n):
                    col[t] = x[(t - m - g) % n] * abs(x[(t - m) % n]) ** p
                cols.append(col)
    return np.column_stack(cols)


def random_canonical_model(orders, seed, scale=1.0):
    """Random model supported on the canonical (non-duplicate) columns."""
    rng = np.random.default_rng(seed)
    theta = scale * (rng.standard_normal(orders.n_coeff) + 1j * rng.standard_normal(orders.n_coeff))
    theta[~canonical_mask(orders)] = 0.0
    return GmpModel.from_theta(orders, theta)


class TestRegressor:
    def test_orders_000_single_column(self):
        sig = random_signal(16, seed=0)
        reg = build_regressor(sig, GmpOrders(0, 0, 0))
        assert reg.shape == (16, 1)
        np.testing.assert_array_equal(reg[:, 0], sig.samples)

    def test_matches_nested_loop_oracle(self):
        sig = random_signal(32, seed=1)
        orders = GmpOrders(1, 2, 1)
        expected = nested_loop_regressor(sig.samples, orders)
        np.testing.assert_allclose(build_regressor(sig, orders), expected, rtol=1e-14, atol=1e-14)

    def test_constant_signal_alpha_columns(self):
        c = 0.7 - 0.2j
        sig = Signal(np.full(12, c))
        orders = GmpOrders(1, 3, 1)
        reg = build_regressor(sig, orders)
        i = 0
        for m in range(2):
            for p in range(4):
                for g in range(2):
                    np.testing.assert_allclose(reg[:, i], c * abs(c) ** p, rtol=1e-14)
                    i += 1

    def test_too_short_signal_rejected(self):
        with pytest.raises(RejectedInputError):
            build_regressor(random_signal(4, seed=2), GmpOrders(3, 1, 2))

    def test_column_count(self):
        orders = GmpOrders(2, 3, 2)
        reg = build_regressor(random_signal(32, seed=3), orders)
        assert reg.shape[1] == orders.n_coeff == 3 * 4 * 3 + 3 * 4 * 2


class TestApply:
    def test_identity_model(self):
        sig = random_signal(24, seed=4)
        out = apply_gmp(GmpModel.linear_gain(1.0), sig)
        np.testing.assert_array_equal(out.samples, sig.samples)

    def test_zero_model(self):
        sig = random_signal(24, seed=5)
        out = apply_gmp(GmpModel.zeros(GmpOrders(2, 2, 1)), sig)
        np.testing.assert_array_equal(out.samples, np.zeros(24))

    def test_matches_matrix_product(self):
        orders = GmpOrders(2, 3, 2)
        model = random_canonical_model(orders, seed=6)
        sig = random_signal(40, seed=7)
        expected = build_regressor(sig, orders) @ model.theta
        np.testing.assert_allclose(apply_gmp(model, sig).samples, expected, rtol=1e-12, atol=1e-12)


class TestFit:
    def test_synthesize_then_recover(self):
        orders = GmpOrders(2, 3, 1)
        truth = random_canonical_model(orders, seed=8)
        sig = random_signal(512, seed=9)
        target = apply_gmp(truth, sig)
        model, residual = fit_gmp(build_regressor(sig, orders), target, orders)
        np.testing.assert_allclose(model.theta, truth.theta, rtol=0, atol=1e-9 * np.abs(truth.theta).max())
        assert residual <= 1e-10 * np.sqrt(np.mean(np.abs(target.samples) ** 2))

    def test_identity_target_single_coefficient(self):
        sig = random_signal(32, seed=10)
        orders = GmpOrders(0, 0, 0)
        model, residual = fit_gmp(build_regressor(sig, orders), sig, orders)
        assert model.alpha[0, 0, 0] == pytest.approx(1.0, abs=1e-12)
        assert residual <= 1e-12

    def test_orthogonal_target_gives_zero_coefficients(self):
        # single linear column; a target orthogonal to it fits to theta 0
        n = 64
        t = np.arange(n)
        x = Signal(np.exp(2j * np.pi * 3 * t / n))
        target = Signal(np.exp(2j * np.pi * 7 * t / n))
        orders = GmpOrders(0, 0, 0)
        model, _ = fit_gmp(build_regressor(x, orders), target, orders)
        assert abs(model.alpha[0, 0, 0]) <= 1e-12

    def test_rank_deficient_raises_without_ridge(self):
        # constant signal makes memory columns identical
        sig = Signal(np.full(64, 1.0 + 0.0j))
        orders = GmpOrders(2, 0, 0)
        with pytest.raises(IllConditionedError):
            fit_gmp(build_regressor(sig, orders), sig, orders)

    def test_ridge_rescues_rank_deficiency(self):
        sig = Signal(np.full(64, 1.0 + 0.0j))
        orders = GmpOrders(2, 0, 0)
        model, residual = fit_gmp(build_regressor(sig, orders), sig, orders, ridge=1e-8)
        assert residual <= 1e-3

    def test_ridge_monotonicity(self):
        orders = GmpOrders(1, 2, 1)
        sig = random_signal(128, seed=11)
        rng = np.random.default_rng(12)
        target = Signal(apply_gmp(random_canonical_model(orders, 13), sig).samples
                        + 0.1 * rng.standard_normal(128))
        reg = build_regressor(sig, orders)
        residuals, norms = [], []
        for ridge in (0.0, 1e-3, 1e-1, 10.0):
            model, residual = fit_gmp(reg, target, orders, ridge)
            residuals.append(residual)
            norms.append(np.linalg.norm(model.theta))
        assert residuals == sorted(residuals)
        assert norms == sorted(norms, reverse=True)

    def test_nested_orders_never_increase_residual(self):
        sig = random_signal(256, seed=14)
        rng = np.random.default_rng(15)
        target = Signal(sig.samples + 0.05 * rng.standard_normal(256))
        grids = [GmpOrders(0, 1, 0), GmpOrders(1, 1, 0), GmpOrders(1, 2, 0), GmpOrders(2, 3, 1)]
        residuals = [fit_gmp(build_regressor(sig, o), target, o)[1] for o in grids]
        for smaller, larger in zip(residuals, residuals[1:]):
            assert larger <= smaller + 1e-12

    def test_circular_shift_invariance(self):
        orders = GmpOrders(1, 2, 1)
        sig = random_signal(128, seed=16)
        target = apply_gmp(random_canonical_model(orders, 17), sig)
        model_a, _ = fit_gmp(build_regressor(sig, orders), target, orders)
        shift = 37
        sig_s = Signal(np.roll(sig.samples, shift))
        target_s = Signal(np.roll(target.samples, shift))
        model_b, _ = fit_gmp(build_regressor(sig_s, orders), target_s, orders)
        np.testing.assert_allclose(model_b.theta, model_a.theta, rtol=0,
                                   atol=1e-9 * np.abs(model_a.theta).max())


class TestCrossValidate:
    def make_pairs(self, orders, n_pairs, n, seed, noise=0.0):
        truth = random_canonical_model(orders, seed)
        pairs = []
        rng = np.random.default_rng(seed + 1)
        for i in range(n_pairs):
            x = random_signal(n, seed=seed + 10 + i)
            y = apply_gmp(truth, x).samples
            if noise:
                y = y + noise * rng.standard_normal(n)
            pairs.append((x, Signal(y)))
        return pairs

    def test_true_order_wins_tie_break(self):
        true_orders = GmpOrders(2, 3, 1)
        pairs = self.make_pairs(true_orders, 5, 256, seed=18)
        grid = [GmpOrders(1, 2, 1), true_orders, GmpOrders(3, 3, 1), GmpOrders(2, 4, 2)]
        best, table = cross_validate(pairs, grid)
        assert best == true_orders
        rms_by_order = dict(table)
        assert rms_by_order[GmpOrders(3, 3, 1)] <= 1.1 * rms_by_order[true_orders] + 1e-12

    def test_single_candidate_returned(self):
        pairs = self.make_pairs(GmpOrders(1, 1, 0), 3, 128, seed=19)
        best, table = cross_validate(pairs, [GmpOrders(0, 2, 0)])
        assert best == GmpOrders(0, 2, 0)
        assert len(table) == 1

    def test_needs_two_pairs(self):
        pairs = self.make_pairs(GmpOrders(1, 1, 0), 1, 64, seed=20)
        with pytest.raises(RejectedInputError):
            cross_validate(pairs, [GmpOrders(1, 1, 0)])


class TestPostInverse:
    def test_linear_plant_learns_inverse_gain(self):
        g = 2.0 - 1.0j
        u = random_signal(128, seed=21)
        y = Signal(g * u.samples)
        model, residual = estimate_postinverse(y, u, GmpOrders(0, 0, 0), gain=1.0)
        assert model.alpha[0, 0, 0] == pytest.approx(1.0 / g, abs=1e-12)
        assert residual <= 1e-10

    def test_per_bin_gain_normalization(self):
        u = random_signal(64, seed=22)
        gains = 1.0 + 0.3 * np.cos(2 * np.pi * np.arange(64) / 64)
        y = Signal(np.fft.ifft(np.fft.fft(u.samples) * gains))
        model, residual = estimate_postinverse(y, u, GmpOrders(0, 0, 0), gain=gains)
        assert model.alpha[0, 0, 0] == pytest.approx(1.0, abs=1e-10)
        assert residual <= 1e-10


class TestModelFiles:
    def test_round_trip(self, tmp_path):
        model = random_canonical_model(GmpOrders(2, 3, 2), seed=23)
        path = tmp_path / "model.txt"
        save_gmp_model(path, model)
        back = load_gmp_model(path)
        assert back.orders == model.orders
        np.testing.assert_array_equal(back.theta, model.theta)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a model\n")
        with pytest.raises(RejectedInputError):
            load_gmp_model(path)


def test_fit_gmp_multi_concatenates_realizations():
    orders = GmpOrders(1, 2, 1)
    truth = random_canonical_model(orders, seed=24)
    pairs = []
    for i in range(3):
        x = random_signal(96, seed=30 + i)
        pairs.append((x, apply_gmp(truth, x)))
    model, residual = fit_gmp_multi(pairs, orders)
    np.testing.assert_allclose(model.theta, truth.theta, rtol=0, atol=1e-9 * np.abs(truth.theta).max())
    assert residual <= 1e-10
