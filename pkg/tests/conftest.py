import time
from dataclasses import dataclass

import pytest

from vatseg.architectures import UNetSpec, build_network
from vatseg.data.phantom import PhantomParams, generate_phantom
from vatseg.training import TrainConfig, make_scan, seed_streams, train

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion, printed at the end of the run."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])


@dataclass
class OverfitRun:
    result: object
    cpu_seconds: float


@pytest.fixture(scope="session")
def overfit_run():
    """Reduced U-Net memorizing one 64x64 phantom slice for 2000 iterations."""
    vol, labels, body = generate_phantom(PhantomParams(seed=21, dims=(1, 64, 64)))
    net = build_network(UNetSpec(base_channels=8), seed_streams(0)[0])
    scan = make_scan(net, "probe", vol, labels.data, body)
    config = TrainConfig(iterations=2000, eval_every=100, checkpoint_every=2000, seed=0)
    start = time.process_time()
    result = train(net, [scan], config, validation=[scan])
    return OverfitRun(result, time.process_time() - start)
