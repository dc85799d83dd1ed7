"""Finite-difference suites must pass at their stated tolerances."""

import pytest

from sqzgan.errors import ConfigError
from sqzgan.gradcheck import run_suite


@pytest.mark.parametrize("suite", ["core", "losses", "r1"])
def test_suite_passes(suite):
    results = run_suite(suite)
    assert results
    failed = [(r.name, r.rel_err, r.tol) for r in results if not r.passed]
    assert not failed, f"finite-difference failures: {failed}"


def test_unknown_suite_rejected():
    with pytest.raises(ConfigError):
        run_suite("everything")
