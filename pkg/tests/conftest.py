import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neurorx.perf import tune_allocator

tune_allocator()

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])


def zf_ber_prediction(channel, spec, noise_var, n=0):
    """Mean gray 16-QAM bit error rate of zero-forcing on the true per-subcarrier channel."""
    from scipy.stats import norm
    from neurorx.channel import true_freq_response
    H = np.moveaxis(true_freq_response(channel, n, spec), -1, 0)
    G = np.linalg.inv(np.conj(np.swapaxes(H, 1, 2)) @ H)
    snr = 1.0 / (noise_var * np.real(np.diagonal(G, axis1=1, axis2=2)))
    a = np.sqrt(snr / 5.0)
    return float(np.mean(0.25 * (3 * norm.sf(a) + 2 * norm.sf(3 * a) - norm.sf(5 * a))))
