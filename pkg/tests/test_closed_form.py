import math

import numpy as np
import pytest
from scipy import integrate

from mtpinn.cache.oracle_cache import oracle_cache
from mtpinn.models.hjb import PricePath, StatePoint
from mtpinn.oracle.closed_form import (
    adaptive_simpson,
    hjb_residual_exact,
    optimal_inventory_path,
    optimal_rate,
    simulate_gbm,
    simulate_gbm_paths,
    value_derivatives_exact,
    value_exact,
    value_field_arrays,
)
from mtpinn.utils.error_handlers import DomainError, QuadratureError


def reference_value(tau, x, s, cfg):
    """Independent evaluation with scipy quadrature"""
    kappa, sigma, lam = cfg.kappa, cfg.sigma, cfg.lambda_
    value = kappa * x * x / math.tanh(kappa * tau)
    if lam > 0:
        integral, _ = integrate.quad(
            lambda u: math.tanh(0.5 * kappa * u) ** 2 * math.exp(-sigma * sigma * u),
            0.0, tau, epsabs=1e-14, epsrel=1e-13, limit=200,
        )
        value += lam * x * s / kappa * math.tanh(0.5 * kappa * tau)
        value -= lam * lam * s * s / (4 * kappa * kappa) * math.exp(sigma * sigma * tau) * integral
    return value


class TestValueExact:
    def test_zero_inventory_is_free(self, synthetic_cfg):
        assert value_exact(StatePoint(5.0, 0.0, 55.0), synthetic_cfg) == 0.0

    def test_risk_neutral_reference_value(self, synthetic_cfg):
        value = value_exact(StatePoint(5.0, 10.0), synthetic_cfg)
        assert value == pytest.approx(10.0 / math.tanh(0.5), rel=1e-13)
        assert value == pytest.approx(21.6395, abs=1e-4)

    def test_risk_averse_matches_independent_quadrature(self, synthetic_cfg_averse):
        value = value_exact(StatePoint(5.0, 10.0, 55.0), synthetic_cfg_averse)
        assert value == pytest.approx(reference_value(5.0, 10.0, 55.0, synthetic_cfg_averse), rel=1e-8)

    def test_random_states_match_independent_quadrature(self, synthetic_cfg_averse):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            tau = rng.uniform(0.05, 5.0)
            x = rng.uniform(-10.0, 10.0)
            s = rng.uniform(10.0, 100.0)
            expected = reference_value(tau, x, s, synthetic_cfg_averse)
            got = value_exact(StatePoint(tau, x, s), synthetic_cfg_averse)
            # the integral term scales with lambda^2 S^2 / (4 kappa^2)
            scale = max(1.0, 0.25 * s * s)
            assert got == pytest.approx(expected, rel=1e-8, abs=1e-8 * scale)

    def test_rejects_terminal_time(self, synthetic_cfg):
        with pytest.raises(DomainError):
            value_exact(StatePoint(0.0, 1.0), synthetic_cfg)

    def test_symmetry(self, synthetic_cfg, synthetic_cfg_averse):
        for tau, x, s in [(0.3, 2.0, 40.0), (2.0, -7.5, 12.0), (4.9, 9.0, 95.0)]:
            plus = value_exact(StatePoint(tau, x, s), synthetic_cfg_averse)
            minus = value_exact(StatePoint(tau, -x, -s), synthetic_cfg_averse)
            assert plus == pytest.approx(minus, rel=1e-12)
            assert value_exact(StatePoint(tau, x), synthetic_cfg) == value_exact(StatePoint(tau, -x), synthetic_cfg)

    def test_sign_conditions(self, synthetic_cfg, synthetic_cfg_averse):
        assert value_exact(StatePoint(1.0, 3.0), synthetic_cfg) > 0
        for s in (10.0, 55.0, 100.0):
            assert value_exact(StatePoint(2.0, 0.0, s), synthetic_cfg_averse) <= 0


class TestOptimalRate:
    def test_risk_neutral(self, synthetic_cfg):
        rate = optimal_rate(0.0, 10.0, 55.0, synthetic_cfg)
        assert rate == pytest.approx(1.0 / math.tanh(0.5), rel=1e-13)
        assert rate == pytest.approx(2.1640, abs=1e-4)

    def test_zero_inventory(self, synthetic_cfg):
        assert optimal_rate(0.0, 0.0, 55.0, synthetic_cfg) == 0.0

    def test_risk_averse_zero_inventory(self, synthetic_cfg_averse):
        rate = optimal_rate(0.0, 0.0, 55.0, synthetic_cfg_averse)
        assert rate == pytest.approx(0.1 * 55.0 / 0.2 * math.tanh(0.25), rel=1e-13)

    def test_matches_half_value_gradient(self, synthetic_cfg_averse):
        _, d_x, _ = value_derivatives_exact(StatePoint(3.0, 4.0, 55.0), synthetic_cfg_averse)
        assert optimal_rate(2.0, 4.0, 55.0, synthetic_cfg_averse) == pytest.approx(0.5 * d_x, rel=1e-12)

    def test_rejects_terminal_time(self, synthetic_cfg):
        with pytest.raises(DomainError):
            optimal_rate(5.0, 1.0, 55.0, synthetic_cfg)


class TestOptimalInventoryPath:
    def test_risk_neutral_midpoint(self, synthetic_cfg):
        path = PricePath(np.array([0.0, 2.5, 5.0]), np.array([55.0, 60.0, 50.0]))
        inventory = optimal_inventory_path(path, 10.0, synthetic_cfg)
        assert inventory[0] == 10.0
        assert inventory[1] == pytest.approx(10.0 * math.sinh(0.25) / math.sinh(0.5), rel=1e-12)
        assert inventory[1] == pytest.approx(4.8477, abs=1e-4)
        assert inventory[-1] == 0.0

    def test_risk_averse_ends_flat(self, synthetic_cfg_averse):
        path = simulate_gbm(55.0, synthetic_cfg_averse, 100, seed=3)
        inventory = optimal_inventory_path(path, 10.0, synthetic_cfg_averse)
        assert inventory[0] == 10.0
        assert inventory[-1] == 0.0

    def test_risk_neutral_is_price_invariant(self, synthetic_cfg):
        first = simulate_gbm(55.0, synthetic_cfg, 50, seed=1)
        second = simulate_gbm(20.0, synthetic_cfg, 50, seed=2)
        np.testing.assert_array_equal(optimal_inventory_path(first, 5.0, synthetic_cfg),
                                      optimal_inventory_path(second, 5.0, synthetic_cfg))

    def test_rejects_short_path(self, synthetic_cfg):
        path = PricePath(np.array([0.0, 1.0]), np.array([55.0, 56.0]))
        with pytest.raises(DomainError):
            optimal_inventory_path(path, 1.0, synthetic_cfg)


class TestHJBResidual:
    def test_closed_form_risk_neutral(self, synthetic_cfg):
        p = StatePoint(3.0, 4.0)
        assert abs(hjb_residual_exact(p, value_derivatives_exact(p, synthetic_cfg), synthetic_cfg)) <= 1e-12

    def test_zero_derivatives_at_zero_inventory(self, synthetic_cfg):
        assert hjb_residual_exact(StatePoint(3.0, 0.0), (0.0, 0.0, 0.0), synthetic_cfg) == 0.0

    def test_risk_averse_with_finite_differences(self, synthetic_cfg):
        cfg = synthetic_cfg.with_lambda(0.05)
        tau, x, s = 3.0, 4.0, 55.0
        h = 1e-2

        def v(t, xx, ss):
            return value_exact(StatePoint(t, xx, ss), cfg)

        # five-point stencil in tau; the value is quadratic in X and S
        d_tau = (v(tau - 2 * h, x, s) - 8 * v(tau - h, x, s) + 8 * v(tau + h, x, s) - v(tau + 2 * h, x, s)) / (12 * h)
        d_x = (v(tau, x + 1.0, s) - v(tau, x - 1.0, s)) / 2.0
        d_ss = v(tau, x, s + 1.0) - 2 * v(tau, x, s) + v(tau, x, s - 1.0)
        assert abs(hjb_residual_exact(StatePoint(tau, x, s), (d_tau, d_x, d_ss), cfg)) <= 1e-6

    def test_risk_averse_analytic_derivatives(self, synthetic_cfg_averse):
        p = StatePoint(3.0, 4.0, 55.0)
        residual = hjb_residual_exact(p, value_derivatives_exact(p, synthetic_cfg_averse), synthetic_cfg_averse)
        assert abs(residual) <= 1e-8

    def test_grid_property(self, synthetic_cfg):
        tau, x = np.meshgrid(np.linspace(0.05, 5.0, 50), np.linspace(-10.0, 10.0, 50), indexing="ij")
        field = value_field_arrays(tau, x, 1.0, synthetic_cfg)
        residual = field["d_tau"] - synthetic_cfg.kappa ** 2 * x * x + 0.25 * field["d_x"] ** 2
        assert np.all(np.abs(residual) <= 1e-9 * np.maximum(1.0, np.abs(field["d_tau"])))


class TestSimulation:
    def test_zero_volatility_is_flat(self, synthetic_cfg):
        cfg = synthetic_cfg.model_copy(update={"sigma": 0.0})
        path = simulate_gbm(42.0, cfg, 25, seed=9)
        assert np.all(path.prices == 42.0)
        assert path.horizon == 5.0

    def test_seeded_paths_repeat(self, synthetic_cfg):
        np.testing.assert_array_equal(simulate_gbm(55.0, synthetic_cfg, 30, seed=4).prices,
                                      simulate_gbm(55.0, synthetic_cfg, 30, seed=4).prices)

    def test_driftless_martingale(self, synthetic_cfg):
        paths = simulate_gbm_paths(55.0, synthetic_cfg, 10, 10_000)
        terminal = np.array([p.prices[-1] for p in paths])
        stderr = terminal.std(ddof=1) / math.sqrt(terminal.size)
        assert abs(terminal.mean() - 55.0) <= 4 * stderr

    def test_path_batch_uses_consecutive_seeds(self, synthetic_cfg):
        paths = simulate_gbm_paths(55.0, synthetic_cfg, 10, 3, seed_base=5)
        np.testing.assert_array_equal(paths[2].prices, simulate_gbm(55.0, synthetic_cfg, 10, seed=7).prices)

    def test_price_path_csv(self, synthetic_cfg, tmp_path):
        path = simulate_gbm(55.0, synthetic_cfg, 10, seed=1)
        target = path.to_csv(tmp_path / "path.csv")
        assert target.read_text(encoding="utf-8").splitlines()[0] == "time,price"
        restored = PricePath.from_csv(target)
        np.testing.assert_array_equal(restored.times, path.times)
        np.testing.assert_array_equal(restored.prices, path.prices)

    def test_price_path_csv_header(self, tmp_path):
        target = tmp_path / "feed.csv"
        target.write_text("timestamp_iso8601,mid_price\n0.0,600.0\n1.0,601.0\n", encoding="utf-8")
        with pytest.raises(DomainError):
            PricePath.from_csv(target)


class TestQuadrature:
    def test_smooth_integral(self):
        assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-10)

    def test_interval_cap(self):
        with pytest.raises(QuadratureError):
            adaptive_simpson(math.sin, 0.0, math.pi, max_intervals=4)

    def test_integral_is_memoized(self, synthetic_cfg_averse):
        oracle_cache.clear_all()
        value_exact(StatePoint(1.25, 1.0, 20.0), synthetic_cfg_averse)
        value_exact(StatePoint(1.25, -3.0, 40.0), synthetic_cfg_averse)
        stats = oracle_cache.get_cache_stats()
        assert stats["misses"] == 1
        assert stats["hits"] == 1
