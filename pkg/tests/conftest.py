CRITERIA: list = []


def record(number, name, passed, detail):
    CRITERIA.append((number, name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(CRITERIA, key=lambda c: (c[0], c[1])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
