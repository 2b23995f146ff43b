"""Runs every acceptance criterion and prints one PASS/FAIL line per criterion."""

import pytest

from epiroute import acceptance


@pytest.mark.parametrize("check", acceptance.CRITERIA, ids=lambda c: f"AC{c.number}")
def test_criterion(check, capsys):
    result = check()
    with capsys.disabled():
        print(f"\n{result.line()}")
    assert result.passed, result.line()
