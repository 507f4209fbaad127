"""Release acceptance suite.

Runs every criterion at its pinned tolerance and prints one pass/fail line
each; `ergclt verify` executes the same runners.
"""

import pytest

from ergclt.acceptance import CRITERIA, DEFAULT_SEED


@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name, capsys):
    result = CRITERIA[name](DEFAULT_SEED)
    with capsys.disabled():
        print(f"\n  {result.line()}")
    assert result.passed, result.detail
