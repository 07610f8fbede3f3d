_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_", 1)[1]
    if report.when == "call":
        _acceptance[name] = report.outcome
    elif report.failed:  # setup error counts as a failure of the criterion
        _acceptance[name] = "error"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda s: int(s.split("_", 1)[0])):
        num, slug = name.split("_", 1)
        verdict = "PASS" if _acceptance[name] == "passed" else "FAIL"
        tr.write_line("%s  criterion %s: %s" % (verdict, num,
                                                slug.replace("_", " ")))
