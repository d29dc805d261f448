import numpy as np
import pytest


def blobs(n_blobs=3, per_blob=30, dim=3, separation=10.0, stddev=1.0, seed=0):
    """Gaussian blobs with centers on the scaled coordinate axes; labels are blob ids."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_blobs, dim))
    for b in range(n_blobs):
        centers[b, b % dim] = separation * (1 + b // dim)
    labels = np.repeat(np.arange(n_blobs), per_blob)
    return centers[labels] + rng.normal(scale=stddev, size=(labels.size, dim)), labels


@pytest.fixture
def three_blobs():
    return blobs()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
