import functools

import pytest

from dmcv_keyrate.channel import ChannelModel
from dmcv_keyrate.protocol import ProtocolSpec
from dmcv_keyrate.solver import SolverOptions, key_rate

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def cached_rate(detection, alpha, L, xi, beta=0.95, cutoff=10, delta_c=0.0, delta_a=0.0, delta_p=0.0,
                max_iters=300):
    """Key-rate report memoised across the test session."""
    spec = ProtocolSpec(detection, alpha, delta_c=delta_c, delta_a=delta_a, delta_p=delta_p, beta=beta)
    ch = ChannelModel.from_distance(L, xi)
    return key_rate(spec, ch, cutoff, SolverOptions(max_iters=max_iters))


@pytest.fixture(scope="session")
def rate():
    return cached_rate


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
