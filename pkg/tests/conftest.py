import time
from contextlib import contextmanager

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_VERDICTS: dict[int, str] = {}


class Verdict:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextmanager
def _criterion(number: int, title: str):
    v = Verdict(number, title)
    start = time.perf_counter()
    try:
        yield v
    except BaseException as exc:
        v.note(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        _VERDICTS[number] = _line("FAIL", v, time.perf_counter() - start)
        raise
    _VERDICTS[number] = _line("PASS", v, time.perf_counter() - start)


def _line(status: str, v: Verdict, seconds: float) -> str:
    detail = "; ".join(v.notes)
    return f"criterion {v.number:>2} {status}  {v.title} ({seconds:.2f} s){': ' + detail if detail else ''}"


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
