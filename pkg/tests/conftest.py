import pytest

from tcomm.pipelines import TrainConfig, train
from tcomm.signal import SensingConfig, make_dataset


@pytest.fixture(scope="session")
def ds10():
    return make_dataset(SensingConfig(snr_s=10, seed=1))


@pytest.fixture(scope="session")
def toc10(ds10):
    return train("toc", ds10.train_x, ds10.train_y, TrainConfig(seed=1, snr_c=10))


@pytest.fixture(scope="session")
def nochannel10(ds10):
    return train("nochannel", ds10.train_x, ds10.train_y, TrainConfig(seed=1))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
