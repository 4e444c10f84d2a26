import numpy as np
import pytest

from aacp.tensor import precision


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def tiny_config():
    from aacp.model import EncoderConfig, ModelConfig
    return ModelConfig(
        encoder=EncoderConfig(input_size=32, patch=16, conv_widths=(4, 8), embed_dim=8, depth=1, heads=2),
        spatial_widths=(4, 4, 6, 6), head_buffer=64, min_refresh_rows=16, refresh_period=5,
    )


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
        print(line)
        request.config.stash[ACCEPTANCE].append(line)
        return passed
    return record
