import numpy as np
import pytest

from gesturelift.dataset import SynthConfig, synth_generate


@pytest.fixture(scope="session")
def tiny_dataset():
    """Six short clips; enough windows in every split for smoke tests."""
    return synth_generate(SynthConfig(n_clips=10, duration=6.0), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: ``criterion(n, name)`` then run the checks inside ``with``."""
    results = request.config.stash.setdefault(_CRITERIA, {})

    class Recorder:
        def __call__(self, number, name):
            self.key = (number, name)
            return self

        def __enter__(self):
            return self

        def __exit__(self, kind, exc, tb):
            results[self.key] = kind is None
            print(f"criterion {self.key[0]} {'PASS' if kind is None else 'FAIL'}: {self.key[1]}")
            return False

    return Recorder()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), ok in sorted(results.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number}. {name}")
