import pytest
import torch

from mtpinn.models.training import SamplerSection
from mtpinn.training.sampler import batch_for_epoch, lattice, make_trajectory_spec, sample_batch
from mtpinn.utils.error_handlers import DomainError


def counts(**overrides):
    values = dict(n_pde=200, n_ic=50, n_term=50, n_zero_term=20, n_x=5, n_s=3,
                  horizon_fractions=[0.5, 1.0], n_dt=10)
    values.update(overrides)
    return SamplerSection(**values)


class TestSampleBatch:
    def test_points_inside_domain(self, synthetic_cfg):
        batch = sample_batch(synthetic_cfg, counts(), seed=0)
        assert batch.counts == (200, 50, 50, 20)
        for tau in (batch.pde_tau, batch.ic_tau):
            assert float(tau.min()) >= synthetic_cfg.tau_min
            assert float(tau.max()) <= 5.0
        for x in (batch.pde_x, batch.term_x):
            assert float(x.min()) >= -10.0 and float(x.max()) <= 10.0
        for s in (batch.pde_s, batch.ic_s, batch.term_s, batch.zero_term_s):
            assert float(s.min()) >= 10.0 and float(s.max()) <= 100.0

    def test_inventory_is_uniform(self, synthetic_cfg):
        batch = sample_batch(synthetic_cfg, counts(n_pde=30000), seed=1)
        # E|X| = 5 for X ~ U[-10, 10]
        assert float(batch.pde_x.abs().mean()) == pytest.approx(5.0, rel=0.02)

    def test_same_seed_repeats(self, synthetic_cfg):
        first = sample_batch(synthetic_cfg, counts(), seed=7)
        second = sample_batch(synthetic_cfg, counts(), seed=7)
        assert torch.equal(first.pde_x, second.pde_x)
        assert torch.equal(first.zero_term_s, second.zero_term_s)
        assert not torch.equal(first.pde_x, sample_batch(synthetic_cfg, counts(), seed=8).pde_x)

    def test_epoch_batches_differ(self, synthetic_cfg):
        first = batch_for_epoch(synthetic_cfg, counts(), seed=0, epoch=0)
        second = batch_for_epoch(synthetic_cfg, counts(), seed=0, epoch=1)
        assert not torch.equal(first.pde_tau, second.pde_tau)

    def test_degenerate_domain(self, synthetic_cfg):
        cfg = synthetic_cfg.model_copy(update={"x_range": (2.0, 2.0)})
        batch = sample_batch(cfg, counts(), seed=0)
        assert bool((batch.pde_x == 2.0).all())

    def test_large_draw_stays_in_bounds(self, small_cfg):
        batch = sample_batch(small_cfg, counts(n_pde=1_000_000), seed=3)
        assert float(batch.pde_tau.min()) >= small_cfg.tau_min
        assert float(batch.pde_tau.max()) <= small_cfg.horizon_T
        assert float(batch.pde_x.min()) >= -1.0 and float(batch.pde_x.max()) <= 1.0
        assert float(batch.pde_s.min()) >= 0.5 and float(batch.pde_s.max()) <= 1.5

    def test_positive_counts_required(self, synthetic_cfg):
        section = counts().model_copy(update={"n_ic": 0})
        with pytest.raises(DomainError):
            sample_batch(synthetic_cfg, section, seed=0)


class TestTrajectorySpec:
    def test_lattice_size_risk_averse(self, synthetic_cfg_averse):
        spec = make_trajectory_spec(synthetic_cfg_averse, 20, 41, [0.5, 1.0], 50)
        assert spec.n_paths == 820
        xs, ss = spec.initial_states()
        assert len(xs) == len(ss) == 820
        assert (xs[0], ss[0]) == (-10.0, 10.0)
        assert (xs[40], ss[40]) == (-10.0, 100.0)

    def test_no_price_lattice_when_risk_neutral(self, synthetic_cfg):
        spec = make_trajectory_spec(synthetic_cfg, 41, 20, [1.0], 50)
        assert spec.n_paths == 41
        assert spec.s0_grid == []
        assert spec.initial_states()[1] is None

    def test_single_inventory_sits_at_midpoint(self, synthetic_cfg):
        spec = make_trajectory_spec(synthetic_cfg, 1, 1, [1.0], 10)
        assert spec.x0_grid == [0.0]

    def test_horizons_scaled_and_sorted(self, synthetic_cfg):
        spec = make_trajectory_spec(synthetic_cfg, 3, 1, [1.0, 0.02, 0.5], 10)
        assert spec.horizons == pytest.approx([0.1, 2.5, 5.0])

    def test_lattice_endpoints(self):
        points = lattice((-1.0, 1.0), 5)
        assert points == [-1.0, -0.5, 0.0, 0.5, 1.0]
        with pytest.raises(DomainError):
            lattice((0.0, 1.0), 0)
