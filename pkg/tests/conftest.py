import pytest

_acceptance = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None and (rep.when == "call" or rep.failed):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        prev = _acceptance.get(number)
        passed = rep.passed and (prev is None or prev[1])
        _acceptance[number] = (title, passed, detail)
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, passed, detail = _acceptance[number]
        line = f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
