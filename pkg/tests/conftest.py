import pytest

from vlfat.autodiff import set_debug_checks


@pytest.fixture(autouse=True)
def finite_guard():
    """Every op in every test asserts finite outputs."""
    previous = set_debug_checks(True)
    yield
    set_debug_checks(previous)
