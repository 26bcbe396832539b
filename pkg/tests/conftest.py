import contextlib
import time

import pytest

_RESULTS: list[str] = []


class _Record:
    detail = ""


@pytest.fixture()
def acceptance():
    """``with acceptance("name") as rec: ...`` logs one PASS/FAIL line for the criterion."""

    @contextlib.contextmanager
    def check(name):
        rec = _Record()
        t0 = time.perf_counter()
        try:
            yield rec
        except BaseException as e:
            line = f"FAIL  {name}: {rec.detail or type(e).__name__} ({e})".rstrip()
            _RESULTS.append(line)
            print(line)
            raise
        line = f"PASS  {name}: {rec.detail} [{time.perf_counter() - t0:.1f}s]"
        _RESULTS.append(line)
        print(line)

    return check


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
