import pytest

# filled by test_acceptance: (criterion id, "PASS"/"FAIL", detail)
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, detail in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0])):
        terminalreporter.write_line(f"criterion {cid:>2}: {status}  {detail}")


@pytest.fixture
def acceptance():
    def record(cid, passed, detail):
        ACCEPTANCE_LINES.append((str(cid), "PASS" if passed else "FAIL", detail))
        print(f"criterion {cid}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record
