"""Shared pytest hooks: the acceptance tests report one verdict line per criterion."""

ACCEPTANCE_LINES = {}
SUPPLEMENTARY_LINES = []


def record_acceptance(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def record_supplementary(label, passed, detail):
    line = f"supplementary {label}: {'PASS' if passed else 'FAIL'}  {detail}"
    SUPPLEMENTARY_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES and not SUPPLEMENTARY_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
    for line in SUPPLEMENTARY_LINES:
        terminalreporter.write_line(line)
