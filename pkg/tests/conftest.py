"""One summary line per acceptance criterion."""

_OUTCOMES: dict[str, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            label, title = mark.args
            _OUTCOMES.setdefault(label, {"title": title, "passed": None})
            item.user_properties.append(("criterion", label))


def pytest_runtest_logreport(report):
    label = dict(report.user_properties).get("criterion")
    if label is None or (report.when != "call" and report.passed):
        return
    entry = _OUTCOMES[label]
    ok = report.passed and not report.skipped
    entry["passed"] = ok if entry["passed"] is None else entry["passed"] and ok


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_OUTCOMES, key=lambda s: (int("".join(c for c in s if c.isdigit())), s)):
        entry = _OUTCOMES[label]
        status = {True: "PASS", False: "FAIL", None: "NOT RUN"}[entry["passed"]]
        terminalreporter.write_line(f"criterion {label:<3} {status:<7} {entry['title']}")
