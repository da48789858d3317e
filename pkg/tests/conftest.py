import numpy as np
import pytest

from loft import optimizer
from loft.stiefel import orthonormality_error

# Every optimizer step taken anywhere in the suite is recorded here, so the
# manifold check in test_acceptance can audit the whole run at the end.
STEP_ERRORS = []
ACCEPTANCE_LINES = {}

_original_adam_step = optimizer.adam_step


def _audited_adam_step(u, state, inputs, config):
    out = _original_adam_step(u, state, inputs, config)
    STEP_ERRORS.append(orthonormality_error(out[0]))
    return out


optimizer.adam_step = _audited_adam_step


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_collection_modifyitems(session, config, items):
    # the suite-wide manifold audit must see every other test's steps
    last = [it for it in items if "audit_last" in it.keywords]
    rest = [it for it in items if "audit_last" not in it.keywords]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "audit_last: run after every other test")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, d, rank=None):
    a = rng.standard_normal((d, rank or d + 2))
    return a @ a.T / a.shape[1]
