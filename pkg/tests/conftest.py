import numpy as np
import pytest
import torch


def central_diff(f, x, h=1e-6, index=None):
    """Central finite differences of scalar ``f`` w.r.t. tensor ``x`` (in place perturbation).

    ``index`` restricts the check to a list of flat positions.
    """
    flat = x.data.view(-1)
    positions = range(flat.numel()) if index is None else index
    out = {}
    with torch.no_grad():
        for i in positions:
            orig = flat[i].item()
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
