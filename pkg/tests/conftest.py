import numpy as np
import pytest

from egoforecast.synthgen import GenConfig, generate_sequence


@pytest.fixture(scope="session")
def small_cfg():
    return GenConfig(seed=1, d_img=8)


@pytest.fixture(scope="session")
def small_seqs(small_cfg):
    return [generate_sequence(small_cfg, i) for i in range(6)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting: one pass/fail line per criterion in the terminal summary

_ACCEPTANCE = {}


class CriterionRecorder:
    def __init__(self, number, title):
        self.number, self.title, self.line = number, title, None

    def done(self, ok: bool, detail: str):
        self.line = f"criterion {self.number} [{'PASS' if ok else 'FAIL'}] {self.title}: {detail}"
        _ACCEPTANCE[self.number] = self.line
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion():
    made = []

    def make(number, title):
        made.append(CriterionRecorder(number, title))
        return made[-1]

    yield make
    for rec in made:
        if rec.line is None:
            _ACCEPTANCE[rec.number] = f"criterion {rec.number} [FAIL] {rec.title}: raised before completing"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
