import functools

import pytest

from pbgcavity import ModelParams, solve_u_volterra, v_evolution

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@functools.lru_cache(maxsize=None)
def series(delta: float, kT: float, t_max: float = 20.0):
    """Propagator and fluctuation series shared across test modules."""
    p = ModelParams(delta=delta, kT=kT)
    u = solve_u_volterra(p, t_max=t_max)
    v = v_evolution(u, p)
    return p, u, v


@pytest.fixture(scope="session")
def shared_series():
    return series


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
