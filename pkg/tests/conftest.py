import numpy as np
import pytest

from mtscyclegan.nets import DiscriminatorConfig, GeneratorConfig
from mtscyclegan.synthgen import (ChannelMapping, DomainParams, DriverSpec, WindowSpec,
                                  default_source_params, default_target_params, generate_dataset)


@pytest.fixture
def spec():
    return WindowSpec()


@pytest.fixture
def quiet_driver():
    return DriverSpec(noise_sigma=0.0)


@pytest.fixture
def noiseless_pair(quiet_driver):
    return default_source_params(1, quiet_driver), default_target_params(2, quiet_driver)


# 8-sample windows for fast training tests
@pytest.fixture
def tiny_spec():
    return WindowSpec(sample_period_s=300, window_duration_s=2400, channels=4)


@pytest.fixture
def tiny_pair():
    drv = DriverSpec(trigger_window_s=1200)
    src = DomainParams("source", (ChannelMapping(1.2, 10.0, 300), ChannelMapping(0.8, -5.0, 600),
                                  ChannelMapping(1.5, 0.0, 900)), drv, 11)
    tgt = DomainParams("target", (ChannelMapping(2.0, 20.0, 0), ChannelMapping(0.5, 0.0, 300),
                                  ChannelMapping(1.0, -10.0, 600)), drv, 12)
    return src, tgt


@pytest.fixture
def tiny_data(tiny_spec, tiny_pair):
    src, tgt = tiny_pair
    return generate_dataset(src, tiny_spec, 8), generate_dataset(tgt, tiny_spec, 8)


@pytest.fixture
def tiny_nets():
    return (GeneratorConfig(conv_layers=1, conv_filters=4, kernel_size=3, lstm_layers=1, hidden=4),
            DiscriminatorConfig(conv_layers=1, conv_filters=4, kernel_size=3, lstm_layers=1, hidden=4,
                                head_units=4))


_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def report(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])
