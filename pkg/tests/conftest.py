from contextlib import contextmanager
from types import SimpleNamespace

import numpy as np
import pytest

from mdan import training

from mdan.data import GenSpec, generate_dataset
from mdan.network import NetworkConfig, build_network


@pytest.fixture(scope="session")
def small_spec():
    return GenSpec(classes="disk,square,triangle", n_train=8, n_val=3, n_test=3, size=8, seed=11)


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture
def tiny_net():
    return build_network(NetworkConfig.tiny(), seed=0)


def snapshot(net):
    return {n: t.data.tobytes() for n, t in net.params.items()}


def changed(before, after):
    return {n for n in before if before[n] != after[n]}


class StepRecorder:
    """Wraps adam_step to snapshot every parameter around each update."""

    def __init__(self, net, monkeypatch):
        self.net, self.events = net, []
        real = training.adam_step

        def wrapped(params, state, lr):
            before = snapshot(net)
            real(params, state, lr)
            self.events.append((set(params), changed(before, snapshot(net))))

        monkeypatch.setattr(training, "adam_step", wrapped)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = []


@contextmanager
def criterion(name):
    """Record one PASS/FAIL line for an acceptance criterion; set ``.detail`` inside."""
    rec = SimpleNamespace(detail="")
    try:
        yield rec
    except BaseException:
        ACCEPTANCE_LINES.append(f"FAIL  {name}: {rec.detail}")
        raise
    ACCEPTANCE_LINES.append(f"PASS  {name}: {rec.detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
