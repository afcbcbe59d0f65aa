import numpy as np
import pytest

from hitab.net import IDENTITY, TANH, Layer, Network

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def scalar_chain(w1=2.0, b1=0.0, w2=1.0, b2=0.0, c=1.0) -> Network:
    """f(x) = c * (w2 * tanh(w1 x + b1) + b2)."""
    return Network(
        (Layer([[w1]], [b1], TANH), Layer([[w2]], [b2], IDENTITY)),
        [c],
    )


@pytest.fixture
def tanh2x() -> Network:
    return scalar_chain()


def finite_diff_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def finite_diff_hessian(f, x, h=1e-4):
    n = x.shape[0]
    hess = np.zeros((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        for j in range(n):
            hess[i, j] = (
                f(x + eye[i] + eye[j]) - f(x + eye[i] - eye[j]) - f(x - eye[i] + eye[j]) + f(x - eye[i] - eye[j])
            ) / (4 * h * h)
    return hess
