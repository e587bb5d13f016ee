from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from modemguard.nn.model import ModelBundle, ModelConfig, NormStats, zero_params

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


def make_latency_bundle(bias: float = 5.0, gain: float = 10.0, pivot: float = 35.0) -> ModelBundle:
    """Hand-wired model whose score falls as latency rises above ``pivot`` ms.

    The input and output gates are saturated open, the forget gate closed,
    so the last hidden state is tanh(tanh(latency z-score)). fc1/fc2 then
    map a positive state to a low probability.
    """
    cfg = ModelConfig()
    p = zero_params(cfg)
    H = cfg.hidden_size
    p["lstm.b"][:H] = 30.0           # input gate open
    p["lstm.b"][H:2 * H] = -30.0     # forget gate closed
    p["lstm.b"][3 * H:] = 30.0       # output gate open
    p["lstm.w_ih"][2 * H, 4] = 1.0   # candidate unit 0 reads latency
    p["fc1.w"][0, 0] = gain
    p["fc2.w"][0, 0] = -gain
    p["fc2.b"][0] = bias
    norm = NormStats(np.array([0.0, -90.0, 10.0, -10.0, pivot]), np.array([1.0, 10.0, 5.0, 3.0, 10.0]))
    return ModelBundle(cfg, p, norm, 0.5)


@pytest.fixture
def latency_bundle() -> ModelBundle:
    return make_latency_bundle()
