import numpy as np
import pytest

from fastnose.config import Config, load_config


@pytest.fixture(scope="session")
def cfg() -> Config:
    return load_config()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_run_a(tmp_path_factory):
    """A tiny protocol-A run shared by pipeline tests."""
    out = tmp_path_factory.mktemp("runA")
    cfg = load_config()
    cfg.set("protocol", "scale", 0.04)
    cfg.set("protocol", "sets", "pulses,short")
    from fastnose.simulate import run_protocol

    trials = run_protocol("A", seed=7, out_dir=out, cfg=cfg)
    return out, trials


@pytest.fixture(scope="session")
def small_run_b(tmp_path_factory):
    out = tmp_path_factory.mktemp("runB")
    cfg = load_config()
    cfg.set("protocol", "scale", 0.04)
    cfg.set("protocol", "sets", "pulses,trains")
    from fastnose.simulate import run_protocol

    trials = run_protocol("B", seed=9, out_dir=out, cfg=cfg)
    return out, trials
