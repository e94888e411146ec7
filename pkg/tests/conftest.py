def pytest_terminal_summary(terminalreporter):
    from _acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
