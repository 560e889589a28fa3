import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")

from adaptikh.problems import MatrixOperator, TestProblem


def random_matrix(rng, m, n, smin=1e-3, smax=1.0):
    """Dense m x n matrix with log-spaced singular values in [smin, smax]."""
    p = min(m, n)
    U, _ = np.linalg.qr(rng.standard_normal((m, p)))
    V, _ = np.linalg.qr(rng.standard_normal((n, p)))
    s = np.logspace(np.log10(smax), np.log10(smin), p)
    return (U * s) @ V.T


def random_problem(rng, m, n, noise=1e-2, safety=1.01, **kw):
    A = random_matrix(rng, m, n, **kw)
    x = rng.standard_normal(n)
    b_exact = A @ x
    e = rng.standard_normal(m)
    e *= noise * np.linalg.norm(b_exact) / np.linalg.norm(e)
    return TestProblem(
        operator=MatrixOperator(A),
        x_exact=x,
        b_exact=b_exact,
        b_noisy=b_exact + e,
        e=e,
        noise_level=noise,
        epsilon=safety * float(np.linalg.norm(e)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    detail = ""
    if report.failed and call.excinfo is not None:
        detail = str(call.excinfo.value).splitlines()[0] if str(call.excinfo.value) else call.excinfo.typename
    _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number} [{title}]: {status}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
