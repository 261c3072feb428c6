import time
from types import SimpleNamespace

import pytest

from syncbpj.config import SweepConfig
from syncbpj.pipeline import run_sweep

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE_LINES: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def default_sweep(tmp_path_factory):
    """The full default grid, run once per session and written to disk."""
    out = tmp_path_factory.mktemp("default_sweep")
    start = time.perf_counter()
    result = run_sweep(SweepConfig(), output_dir=out)
    return SimpleNamespace(result=result, out=out, seconds=time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
