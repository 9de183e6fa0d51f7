import json

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture
def write_lines(tmp_path):
    """Write JSON records (or raw strings) one per line and return the path."""
    def _write(records, name="data.jsonl"):
        path = tmp_path / name
        with open(path, "w") as fh:
            for r in records:
                fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
        return path
    return _write


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not (mod.RESULTS or mod.DIAGNOSTICS):
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(mod.RESULTS, key=int):
        terminalreporter.write_line(mod.summary_line(criterion))
    for line in mod.DIAGNOSTICS:
        terminalreporter.write_line(line)
