import pytest

from avel_refine.datagen import CorpusSpec, make_corpus


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(n_event=40, n_background=8, T=10, n_classes=4, d_audio=6, d_visual=6, seed=11)
    return make_corpus(spec)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
