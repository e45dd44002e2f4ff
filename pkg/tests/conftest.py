import pytest

from mtpinn.models.hjb import HJBConfig
from mtpinn.utils.error_handlers import diagnostics


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def clean_diagnostics():
    diagnostics.reset()
    yield
    diagnostics.reset()


@pytest.fixture
def synthetic_cfg():
    """The synthetic benchmark market at lambda = 0"""
    return HJBConfig(kappa=0.1, sigma=0.1, horizon_T=5.0, x_range=(-10.0, 10.0), s_range=(10.0, 100.0))


@pytest.fixture
def synthetic_cfg_averse(synthetic_cfg):
    return synthetic_cfg.with_lambda(0.1)


@pytest.fixture
def small_cfg():
    """Unit-scale market where a small tanh network is far from saturation"""
    return HJBConfig(kappa=0.5, sigma=0.3, horizon_T=1.0, x_range=(-1.0, 1.0), s_range=(0.5, 1.5))


@pytest.fixture
def tiny_raw_config():
    """Raw mapping of a run config small enough to train in a few seconds"""
    return {
        "model": {"widths": [4, 4], "learning_rate": 1e-3},
        "hjb": {"kappa": 0.5, "sigma": 0.3, "horizon_T": 1.0, "x_range": [-1.0, 1.0], "s_range": [0.5, 1.5]},
        "sampler": {
            "n_pde": 16, "n_ic": 4, "n_term": 4, "n_zero_term": 4,
            "n_x": 3, "n_s": 2, "horizon_fractions": [0.5, 1.0], "n_dt": 4,
        },
        "dwa": {"every": 2},
        "curriculum": {
            "preset": "mtpinn", "lambda_star": 0.1, "fractions": [0.5, 1.0],
            "phase_a_epochs": 4, "epochs_per_stage": 3,
        },
        "eval": {
            "n_paths": 4, "x0": 1.0, "s0": 1.0, "n_steps": 20, "epsilon": 0.05,
            "grid_t": 5, "grid_x": 5, "fixed_s": 1.0,
        },
    }
