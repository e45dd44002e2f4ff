import numpy as np
import pytest

from mtpinn.evaluation.evalkit import (
    evaluate_terminal,
    nearest_rank,
    path_error_curves,
    rollout_paths,
    rollout_policy,
    surface_errors,
    terminal_stats,
)
from mtpinn.models.hjb import PricePath
from mtpinn.models.training import EvalSection
from mtpinn.network.diffnet import init_params
from mtpinn.network.exact_field import ExactField
from mtpinn.oracle.closed_form import simulate_gbm, simulate_gbm_paths, value_field_arrays
from mtpinn.training.losses import rollout_inventory
from mtpinn.utils.error_handlers import DomainError
from tests.helpers import constant_field, quadratic_x_field


def flat_path(price: float, horizon: float, n_steps: int) -> PricePath:
    return PricePath(np.linspace(0.0, horizon, n_steps + 1), np.full(n_steps + 1, price))


class TestRollout:
    def test_zero_control_holds_inventory(self, small_cfg):
        result = rollout_policy(constant_field(2.0), flat_path(1.0, 1.0, 10), 0.8, small_cfg)
        assert np.all(result.inventory == 0.8)
        assert np.all(result.rate == 0.0)
        assert len(result.times) == 11

    def test_closed_form_control_liquidates(self, synthetic_cfg):
        paths = simulate_gbm_paths(55.0, synthetic_cfg, 200, 5)
        batch = rollout_paths(ExactField(synthetic_cfg), paths, 10.0, synthetic_cfg)
        assert np.all(np.abs(batch.terminals) <= 5e-3 * 10.0)
        assert np.all(np.diff(batch.inventory, axis=1) <= 0)

    def test_overshoot_without_clamps(self, small_cfg):
        result = rollout_policy(quadratic_x_field(10.0), flat_path(1.0, 1.0, 4), 1.0, small_cfg)
        # x <- x (1 - 10 dt) with dt = 0.25
        assert result.terminal == pytest.approx((-1.5) ** 4, rel=1e-14)

    def test_no_short_clamp(self, small_cfg):
        result = rollout_policy(quadratic_x_field(10.0), flat_path(1.0, 1.0, 4), 1.0, small_cfg,
                                clamp_at_zero=True, no_short=True)
        assert result.terminal == 0.0
        assert np.all(result.inventory >= 0.0)
        assert np.all(result.rate[2:] == 0.0)

    def test_matches_training_rollout(self, small_cfg):
        net = init_params(2, [6], seed=4)
        result = rollout_policy(net, flat_path(1.0, 1.0, 25), 0.7, small_cfg)
        training = rollout_inventory(net, [0.7], None, 1.0, 25, small_cfg)
        assert result.terminal == float(training[0])

    def test_paths_must_share_grid(self, small_cfg):
        with pytest.raises(DomainError):
            rollout_paths(constant_field(0.0), [flat_path(1.0, 1.0, 4), flat_path(1.0, 1.0, 5)], 1.0, small_cfg)

    def test_paths_must_cover_horizon(self, small_cfg):
        with pytest.raises(DomainError):
            rollout_paths(constant_field(0.0), [flat_path(1.0, 0.5, 4)], 1.0, small_cfg)


class TestTerminalStats:
    def test_summary(self):
        stats = terminal_stats([0.01, -0.02, 0.1, 0.0], epsilon=0.05)
        assert stats.mean == pytest.approx(0.0325)
        assert stats.std == pytest.approx(np.std([0.01, 0.02, 0.1, 0.0], ddof=1))
        assert stats.p95 == 0.1
        assert stats.pass_rate == 0.75
        assert stats.n == 4

    def test_scale_equivariance(self):
        terminals = np.array([0.3, -0.7, 0.05, 1.2, -0.01])
        base = terminal_stats(terminals, epsilon=0.1)
        scaled = terminal_stats(4.0 * terminals, epsilon=0.4)
        assert scaled.mean == pytest.approx(4.0 * base.mean, rel=1e-14)
        assert scaled.std == pytest.approx(4.0 * base.std, rel=1e-14)
        assert scaled.p95 == pytest.approx(4.0 * base.p95, rel=1e-14)
        assert scaled.pass_rate == base.pass_rate

    def test_single_terminal(self):
        stats = terminal_stats([0.2], epsilon=0.1)
        assert stats.std == 0.0
        assert stats.pass_rate == 0.0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            terminal_stats([], epsilon=0.1)

    def test_nearest_rank(self):
        values = np.arange(1, 21, dtype=float)
        assert nearest_rank(values, 0.95) == 19.0
        assert nearest_rank(values, 0.0) == 1.0

    def test_evaluate_terminal(self, small_cfg):
        section = EvalSection(n_paths=4, x0=1.0, s0=1.0, n_steps=20, epsilon=0.05, grid_t=5, grid_x=5, fixed_s=1.0)
        stats, batch = evaluate_terminal(ExactField(small_cfg), small_cfg, section)
        assert stats.n == 4
        assert batch.inventory.shape == (4, 21)


class TestSurfaceErrors:
    def test_exact_field_has_no_error(self, synthetic_cfg_averse):
        report, frame = surface_errors(ExactField(synthetic_cfg_averse), synthetic_cfg_averse, 10, 10, 55.0)
        assert report.original.max_ae <= 1e-12
        assert report.asinh.max_ae <= 1e-12
        assert len(frame) == 100
        assert list(frame.columns) == ["t", "x", "err", "asinh_err"]

    def test_zero_field_error_is_exact_magnitude(self, synthetic_cfg):
        report, _ = surface_errors(constant_field(0.0), synthetic_cfg, 6, 7, 55.0)
        t, x = np.meshgrid(np.linspace(0.0, 5.0, 6), np.linspace(-10.0, 10.0, 7), indexing="ij")
        tau = np.maximum(5.0 - t, synthetic_cfg.tau_min).ravel()
        exact = value_field_arrays(tau, x.ravel(), np.full(tau.size, 55.0), synthetic_cfg)["gamma"]
        assert report.original.mae == pytest.approx(float(np.mean(np.abs(exact))), rel=1e-12)
        # every grid point but X = 0 has a relative error of one
        assert report.original.mre == pytest.approx(6.0 / 7.0, rel=1e-12)

    def test_metric_ordering(self, small_cfg):
        report, _ = surface_errors(init_params(2, [6], seed=2), small_cfg, 8, 8, 1.0)
        for metrics in (report.original, report.asinh):
            assert metrics.max_ae >= metrics.rmse >= metrics.mae

    def test_grid_too_small(self, small_cfg):
        with pytest.raises(DomainError):
            surface_errors(constant_field(0.0), small_cfg, 1, 5, 1.0)


class TestPathErrorCurves:
    def test_exact_field_has_zero_curves(self, synthetic_cfg_averse):
        paths = simulate_gbm_paths(55.0, synthetic_cfg_averse, 20, 3)
        curves = path_error_curves(ExactField(synthetic_cfg_averse), paths, 10.0, synthetic_cfg_averse)
        assert len(curves) == 20
        for column in ("gamma_err_mean", "x_err_mean", "v_err_mean", "x_err_std"):
            assert float(curves[column].abs().max()) == 0.0

    def test_risk_neutral_errors_do_not_vary_across_paths(self, small_cfg):
        paths = [simulate_gbm(1.0, small_cfg, 10, seed=seed) for seed in (1, 2, 3)]
        assert not np.array_equal(paths[0].prices, paths[1].prices)
        curves = path_error_curves(init_params(2, [4], seed=0), paths, 0.5, small_cfg)
        for column in ("gamma_err_std", "x_err_std", "v_err_std"):
            assert float(curves[column].max()) == 0.0

    def test_needs_two_paths(self, small_cfg):
        with pytest.raises(DomainError):
            path_error_curves(constant_field(0.0), [flat_path(1.0, 1.0, 4)], 1.0, small_cfg)
