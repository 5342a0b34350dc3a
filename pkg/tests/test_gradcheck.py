import time

import pytest

from services.gradcheck import relative_error, run_gradcheck


def test_relative_error_floor():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    # both tiny: denominator floored at 1e-6
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)


def test_analytic_gradients_match_finite_differences_within_ten_seconds():
    started = time.perf_counter()
    report = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - started
    assert report.passed, report.summary()
    assert report.checked > 0
    assert report.max_relative_error < 1e-5
    assert elapsed < 10.0, f"gradcheck took {elapsed:.2f}s"


def test_corrupted_gradient_is_detected():
    report = run_gradcheck(seed=0, corrupt=True)
    assert not report.passed
    assert report.max_relative_error > 1e-3
    assert "FAIL" in report.summary()
