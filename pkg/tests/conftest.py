import pytest

from repxva.market_model import flat_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def _report(label: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} [{label}] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def deposit_model(lam_i=0.01, lam_h=0.03, gamma=0.005, r_i=0.4, r_h=0.4, c=0.02, **kw):
    """Constant-parameter model parameterised by Q-intensities."""
    return flat_model(
        ois=c,
        hedger_spread=lam_h * (1.0 - r_h),
        investor_spread=lam_i * (1.0 - r_i),
        hedger_recovery=r_h,
        investor_recovery=r_i,
        hedger_basis=gamma,
        **kw,
    )


@pytest.fixture
def base_model():
    return deposit_model()
