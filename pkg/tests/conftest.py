import mpmath
import numpy as np
import pytest


def i0_power_series(x, dps=40):
    """Reference I0 from its power series in extended precision."""
    with mpmath.workdps(dps):
        x = mpmath.mpf(x)
        total = mpmath.mpf(0)
        term = mpmath.mpf(1)
        k = 0
        while term > total * mpmath.mpf(10) ** (-dps + 5) or k == 0:
            total += term
            k += 1
            term = term * (x / 2) ** 2 / k**2
        return float(total)


def phase_average_coincidence(mu_a, mu_b, t, s, n_phase=4096):
    """Coincidence probability of two phase-randomized coherent pulses by
    averaging the click-click probability of the two output ports over the
    relative optical phase.  Periodic trapezoid rule, converges exponentially.
    """
    r = 1.0 - t
    phi = 2.0 * np.pi * np.arange(n_phase) / n_phase
    cross = 2.0 * np.sqrt(t * r * mu_a * mu_b) * s * np.cos(phi)
    n1 = t * mu_a + r * mu_b + cross
    n2 = r * mu_a + t * mu_b - cross
    return float(np.mean(-np.expm1(-n1) * -np.expm1(-n2)))


@pytest.fixture
def oracle_pco():
    return phase_average_coincidence


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
