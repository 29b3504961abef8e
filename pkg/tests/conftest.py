import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pevo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pevo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_random(grid, rng, kmax=8, decay=1.0):
    """Random band-limited field with Gaussian-decaying Fourier coefficients."""
    U = np.zeros(grid.N, dtype=complex)
    k = np.arange(-kmax, kmax + 1)
    U[k % grid.N] = (rng.standard_normal(len(k)) + 1j * rng.standard_normal(len(k))) * np.exp(
        -decay * (k / kmax) ** 2)
    return np.fft.ifft(U) * grid.N / np.sqrt(grid.N)


ACCEPTANCE = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    """Store and print a one-line verdict; the terminal summary repeats them in order."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
