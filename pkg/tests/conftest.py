import numpy as np
import pytest


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def numeric_grad_at(f, x: np.ndarray, indices, h: float = 1e-5) -> np.ndarray:
    """Central differences at selected flat ``indices`` of ``x`` only."""
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def probe_indices(grad: np.ndarray, rng, k: int = 12) -> np.ndarray:
    """Flat positions to probe: the largest analytic entries plus random ones."""
    flat = np.abs(grad.reshape(-1))
    top = np.argsort(flat)[::-1][: k // 2]
    rest = rng.choice(flat.size, size=min(k - top.size, flat.size), replace=False)
    return np.unique(np.concatenate([top, rest]))


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max relative error with an absolute floor so near-zero entries do not blow up."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_criteria: dict[int, tuple[str, bool, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    _, ok, seconds = _criteria.get(number, (title, True, 0.0))
    _criteria[number] = (title, ok and report.passed, seconds + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, seconds = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title} ({seconds:.1f} s)")
