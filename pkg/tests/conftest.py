import pytest

_RESULTS = {}  # criterion number -> {"title", "outcomes", "notes"}


def pytest_addoption(parser):
    parser.addoption("--full-budget", action="store_true", default=False,
                     help="also run the 50000-iteration training check (hours on one core)")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "full_budget: needs --full-budget")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-budget"):
        return
    skip = pytest.mark.skip(reason="opt-in: pass --full-budget")
    for item in items:
        if "full_budget" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.skipped or rep.failed)):
        number, title = mark.args
        entry = _RESULTS.setdefault(number, {"title": title, "outcomes": [], "notes": []})
        entry["outcomes"].append((item.name, rep.outcome))
        entry["notes"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        ran = [o for _, o in entry["outcomes"] if o != "skipped"]
        if not ran:
            status = "SKIP"
        elif all(o == "passed" for o in ran):
            status = "PASS"
        else:
            status = "FAIL"
        skipped = [n for n, o in entry["outcomes"] if o == "skipped"]
        line = f"criterion {number}: {status}  {entry['title']}"
        if skipped:
            line += f"  (skipped: {', '.join(skipped)})"
        tr.write_line(line)
        for note in entry["notes"]:
            tr.write_line(f"    {note}")
