import numpy as np
import pytest

from dilearn.datagen import DomainShift, SyntheticConfig, generate_synthetic_stream


def tiny_config(**kw) -> SyntheticConfig:
    base = dict(num_domains=3, num_classes=3, feature_dim=6, samples_per_class_per_domain=20, seed=0)
    base.update(kw)
    return SyntheticConfig(**base)


@pytest.fixture
def tiny_sequence():
    return generate_synthetic_stream(tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rotated(angle=np.pi / 2, **kw) -> DomainShift:
    return DomainShift(rotation_angle=angle, **kw)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
