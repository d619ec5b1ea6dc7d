import os

import pytest

ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    label = item.get_closest_marker("criterion")
    if label is None or report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    key = label.args[0]
    passed = report.passed and not hasattr(report, "wasxfail")
    ACCEPTANCE.setdefault(key, []).append((item.name, passed, report.skipped))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        runs = ACCEPTANCE[key]
        skipped = all(s for _, _, s in runs)
        status = "SKIP" if skipped else "PASS" if all(p for _, p, _ in runs) else "FAIL"
        names = ", ".join(n for n, _, _ in runs)
        terminalreporter.write_line(f"criterion {key:>2}: {status}  ({names})")


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("SELFREG_OUTPUT_DIR", os.fspath(tmp_path / "out"))
