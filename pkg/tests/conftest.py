import numpy as np
import pytest

from wavediff.schedule import build_linear_schedule
from wavediff.trainer import limit_blas_threads

# single-threaded BLAS is faster for this model's GEMM shapes on small VMs
limit_blas_threads(1)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when that module ran."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="session")
def sched4():
    """The tiny hand-checkable schedule used by most worked examples."""
    return build_linear_schedule(4, 0.1, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
