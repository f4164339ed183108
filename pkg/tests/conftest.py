from __future__ import annotations

import time
from contextlib import contextmanager

# criterion number -> (passed, summary line)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@contextmanager
def criterion(number: int, title: str, budget: float):
    """Time a criterion, record PASS/FAIL, and fail it if the runtime budget is exceeded."""
    start = time.perf_counter()
    details: list[str] = []
    try:
        yield details
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE[number] = (False, f"{title} [{elapsed:.2f}s / {budget:g}s] {msg}")
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget
    note = "; ".join(details)
    ACCEPTANCE[number] = (ok, f"{title} [{elapsed:.2f}s / {budget:g}s] {note}")
    assert ok, f"criterion {number} exceeded its runtime budget: {elapsed:.1f}s >= {budget}s"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {line}")
