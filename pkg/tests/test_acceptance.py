"""One test per acceptance criterion; each prints its pass/fail line."""
import pytest

from conftest import ACCEPTANCE_LINES
from ecrflow.acceptance import CRITERIA, run_criterion

# The error of the sync2 leading term decays like 1/beta, not by 3x per doubling;
# the criterion is run as stated and expected to fail.
KNOWN_FAILING = {3}


def _case(number):
    marks = [pytest.mark.xfail(strict=True, reason="error decays like 1/beta")] if number in KNOWN_FAILING else []
    return pytest.param(number, id=f"criterion-{number}", marks=marks)


@pytest.mark.parametrize("number", [_case(k) for k, _, _ in CRITERIA])
def test_criterion(number):
    r = run_criterion(number)
    print(r.line())
    ACCEPTANCE_LINES.append(r.line())
    assert r.passed, r.detail


def test_corrupted_saltation_sign_breaks_the_oracle():
    from ecrflow.variational import saltation_sign_mutation

    with saltation_sign_mutation():
        assert not run_criterion(4).passed
    assert run_criterion(7).passed
