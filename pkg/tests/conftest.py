import pytest


@pytest.fixture(autouse=True, scope="session")
def _isolated_cache(tmp_path_factory):
    # oracle diagrams are cached on disk; keep test runs away from the user's cache
    mp = pytest.MonkeyPatch()
    mp.setenv("CUBEPERSIST_CACHE_DIR", str(tmp_path_factory.mktemp("oracle-cache")))
    yield
    mp.undo()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
