import os

import pytest

ML1M_ENV = "CARNN_ML1M"


def ml1m_path() -> str | None:
    """Path to a Movielens-1M ratings.dat if one is available locally."""
    candidate = os.environ.get(ML1M_ENV) or os.path.join(
        os.path.dirname(__file__), "..", "data", "ml-1m", "ratings.dat"
    )
    return candidate if os.path.exists(candidate) else None


ml1m_required = pytest.mark.skipif(
    ml1m_path() is None,
    reason=f"Movielens-1M ratings.dat not present; set {ML1M_ENV} or add data/ml-1m/ratings.dat",
)


# One summary line per acceptance criterion at the end of the run.
_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "setup" and report.skipped:
        _acceptance_outcomes[name] = "SKIP"
    elif report.when == "call":
        _acceptance_outcomes[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_outcomes.items():
        terminalreporter.write_line(f"[{outcome}] {name}")
