import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bgadj import _accel

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    with _accel.use_backend(request.param):
        yield request.param


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


def random_spd(gen, p, cond=50.0):
    q, _ = np.linalg.qr(gen.standard_normal((p, p)))
    lam = np.exp(gen.uniform(0.0, np.log(cond), p))
    return (q * lam) @ q.T


_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one pass/fail line per acceptance criterion and print it."""
    def record(label, ok, detail=""):
        tag = "" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{label}: {tag}  {detail}".replace(":   ", ":  ").rstrip()
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
