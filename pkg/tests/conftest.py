import numpy as np
import pytest

from casciff.cascade import Activation, Cascade, ObservationConfig
from casciff.synthetic import DiffusionParams, GraphParams, generate_synthetic


def make_cascade(cid, root, events, horizon_size=None, publish=0.0):
    """events: [(user, parent, time), ...] after the root."""
    acts = (Activation(root, None, 0.0),) + tuple(Activation(u, p, float(t)) for u, p, t in events)
    return Cascade(cid, root, publish, acts, horizon_size or len(acts))


def chain(cid, n, dt=1.0, start=0, horizon_size=None):
    events = [(start + i, start + i - 1, dt * i) for i in range(1, n)]
    return make_cascade(cid, start, events, horizon_size)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(
        GraphParams(num_nodes=300),
        DiffusionParams(prob=0.15, delay_scale=600, virality_sigma=0.5, degree_weighted_roots=True),
        300, seed=11,
    )


@pytest.fixture(scope="session")
def small_obs():
    return ObservationConfig(window=1200, horizon=86400, decay_interval=200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
