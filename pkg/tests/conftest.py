"""Collects acceptance-criterion outcomes and prints one status line per criterion."""
import pytest

CRITERIA = {
    "C1": "NSL-KDD online: 5-seed mean accuracy 88.90 +-3.0, F1 90.81 +-3.0",
    "C2": "UNSW-NB15 online: 5-seed mean accuracy 89.19 +-3.0, F1 90.14 +-3.0",
    "C3": "NSL-KDD accuracy: offline > online > initial-only, online - initial >= +1.0",
    "C4": "NSL-KDD ablations: CRC F1 >= InfoNCE; both heads >= each single head; gaussian >= fixed threshold",
    "C5": "NSL-KDD zero-day: unseen-attack recall >= 85% in DoS, Probe, R2L and U2R",
    "C6": "property suite without datasets, under 2 minutes",
}

_results: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        reason = ""
        if report.skipped and isinstance(report.longrepr, tuple):
            reason = report.longrepr[2].removeprefix("Skipped: ")
        measured = [f"{k}={v}" for k, v in item.user_properties]
        _results.setdefault(marker.args[0], []).append((item.name, status, reason, measured))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key, text in CRITERIA.items():
        rows = _results.get(key)
        if not rows:
            tr.write_line(f"{key} NOT RUN  {text}")
            continue
        statuses = {s for _, s, _, _ in rows}
        status = "FAIL" if "FAIL" in statuses else "SKIP" if statuses == {"SKIP"} else "PASS"
        detail = []
        for name, s, reason, measured in rows:
            if s == "SKIP" and reason:
                detail.append(reason)
            detail.extend(measured)
            if s == "FAIL":
                detail.append(f"failed: {name}")
        tail = f"  [{'; '.join(dict.fromkeys(detail))}]" if detail else ""
        tr.write_line(f"{key} {status:<4}  {text}{tail}")
