import pytest

from stochch.invariants import REGISTRY, smoothing_constant


@pytest.mark.parametrize("check", REGISTRY, ids=lambda c: c.__name__)
def test_property_suite(check):
    res = check()
    assert res.passed, res.detail


def test_smoothing_constant_at_zero_order():
    assert smoothing_constant(0.0) == 1.0
