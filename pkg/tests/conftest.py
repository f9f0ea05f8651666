from collections import defaultdict

import pytest


class AcceptanceLog:
    """Sub-check outcomes per acceptance criterion, summarized after the run."""

    def __init__(self):
        self.checks = defaultdict(list)

    def record(self, criterion: int, name: str, ok: bool, detail: str = "") -> bool:
        self.checks[criterion].append((name, bool(ok), detail))
        return bool(ok)

    def lines(self):
        for crit in sorted(self.checks):
            subs = self.checks[crit]
            failed = [s for s in subs if not s[1]]
            status = "PASS" if not failed else "FAIL"
            shown = failed or subs
            text = "; ".join(f"{n} ({d})" if d else n for n, _, d in shown)
            yield f"{status} criterion {crit}: {text}"


_LOG = AcceptanceLog()


@pytest.fixture(scope="session")
def acceptance():
    return _LOG


def pytest_terminal_summary(terminalreporter):
    lines = list(_LOG.lines())
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
