import numpy as np
import pytest


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def fd_jacobian(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense Jacobian of a vector map R^m -> R^p by central differences, shape (p, m)."""
    x = np.array(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.reshape(-1)[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))).reshape(-1) / (2 * h))
    return np.stack(cols, axis=1)


def mlp_oracle(params: dict, x: np.ndarray, group_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Straight-line numpy forward of the MLP layout (independent of the tape)."""
    n_linear = sum(1 for k in params if k.endswith(".weight") and not k.endswith("gn_weight"))
    h = np.asarray(x, dtype=np.float64)
    for i in range(n_linear - 1):
        h = h @ params[f"l{i}.weight"] + params[f"l{i}.bias"]
        if i >= 1:
            n, w = h.shape
            grp = h.reshape(n, w // group_size, group_size)
            mu = grp.mean(axis=2, keepdims=True)
            var = ((grp - mu) ** 2).mean(axis=2, keepdims=True)
            h = ((grp - mu) / np.sqrt(var + 1e-5)).reshape(n, w)
            h = h * params[f"l{i}.gn_weight"] + params[f"l{i}.gn_bias"]
        h = np.where(h > 0, h, np.exp(np.minimum(h, 0)) - 1)
    last = n_linear - 1
    return h @ params[f"l{last}.weight"] + params[f"l{last}.bias"], h


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one verdict line per acceptance criterion (printed in the terminal summary)."""

    def _report(criterion: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
