import contextlib
import time

ACCEPTANCE = []


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one acceptance criterion; the outcome is printed as a PASS/FAIL line."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        _record(number, title, "FAIL", info, start, f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    _record(number, title, "PASS", info, start)


def _record(number, title, status, info, start, error=""):
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    if error:
        detail = f"{detail}; {error}" if detail else error
    line = f"criterion {number:2d} {status}: {title} [{time.perf_counter() - start:.1f}s] {detail}"
    ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
