import numpy as np
import pytest

from v2xshare.channel import init_scenario
from v2xshare.config import ScenarioConfig, TrainConfig


def small_scenario(**overrides) -> ScenarioConfig:
    cfg = ScenarioConfig(num_v2i_links=2, num_v2v_links=2)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def small_train_config(episodes=3, **overrides) -> TrainConfig:
    cfg = TrainConfig(episodes=episodes, payload_bytes=1060.0, scenario=small_scenario())
    cfg.dqn.hidden = (16, 8)
    cfg.dqn.batch_size = 16
    cfg.dqn.target_sync_period = 5
    cfg.checkpoint_every = 2
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture
def env():
    return init_scenario(ScenarioConfig(num_v2i_links=4, num_v2v_links=4), seed=7)


@pytest.fixture
def toy_env():
    """Two bands, two V2V links, with every gain set by hand (small-scale = 1)."""
    state = init_scenario(small_scenario(), seed=3)
    f = state.fading
    f.v2v = np.array([[1e-6, 1e-9], [2e-9, 4e-7]])
    f.v2v_bs = np.array([1e-10, 2e-10])
    f.v2i_bs = np.array([1e-9, 3e-9])
    f.v2i_v2v = np.array([[1e-8, 5e-9], [2e-8, 1e-8]])
    for name in ("v2v", "v2v_bs", "v2i_bs", "v2i_v2v"):
        setattr(f, name + "_small", np.ones(getattr(f, name).shape + (2,)))
    return state


# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
