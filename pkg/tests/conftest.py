import re

_CRITERIA: dict[int, list[str]] = {}
_TITLES = {
    1: "aggregator oracle suite",
    2: "MLP gradient check",
    3: "clean baseline accuracy",
    4: "sign flipping: Mean collapses, Median and FLTrust hold",
    5: "BadNets: Mean backdoored, Krum resists",
    6: "FedSGD degrades at least as much as FedOpt",
    7: "accuracy non-increasing in adversary ratio",
    8: "TAI and TDR formulas",
    9: "byte-identical reruns",
    10: "full attack x defense x algorithm smoke matrix",
    11: "aggregation time ordering Median < Krum < Bulyan",
}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        outcomes = _CRITERIA[num]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {_TITLES.get(num, '')}")
